"""Unscented transform: sigma points, weights, Gaussian propagation.

Note on the center mean weight: some published statements of the transform
print w_m^0 = d/(d+lambda), under which the mean weights sum to
2d/(d+lambda) != 1 and the weighted mean of the sigma points no longer
reproduces the source mean. Self-consistency requires the standard
w_m^0 = lambda/(d+lambda), which is what this module uses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import GaussianBelief, NumericalError, symmetrize

# Jitter ladder used when Cholesky of the scaled covariance fails.
_JITTERS = (1e-12, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class UTParams:
    """Spread (alpha), prior-knowledge (beta) and secondary scaling (kappa).

    kappa=None means the 3 - d heuristic applied at the actual transform
    dimension. Defaults alpha=1, beta=0 follow common filtering practice.
    """
    alpha: float = 1.0
    beta: float = 0.0
    kappa: float | None = None

    def lam(self, d: int) -> float:
        kappa = (3.0 - d) if self.kappa is None else self.kappa
        lam = self.alpha ** 2 * (d + kappa) - d
        if d + lam <= 0:
            raise ValueError(f"d + lambda must be positive, got {d + lam:g} for d={d}")
        return lam


@dataclass(frozen=True)
class SigmaPointSet:
    points: np.ndarray   # (2d+1, d)
    w_mean: np.ndarray   # (2d+1,)
    w_cov: np.ndarray    # (2d+1,)


def _scaled_sqrt(cov: np.ndarray, scale: float) -> np.ndarray:
    """Lower-triangular Cholesky factor of scale*cov, with jitter escalation."""
    mat = scale * cov
    if not np.any(mat):
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(mat.shape[0])
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(mat + scale * jit * eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(f"covariance not factorizable after jitter escalation:\n{cov}")


def sigma_points(belief: GaussianBelief, ut: UTParams = UTParams()) -> SigmaPointSet:
    """2d+1 sigma points at mu and mu +/- columns of sqrt((d+lambda) Sigma)."""
    d = belief.dim
    lam = ut.lam(d)
    root = _scaled_sqrt(belief.cov, d + lam)
    pts = np.empty((2 * d + 1, d))
    pts[0] = belief.mean
    pts[1:d + 1] = belief.mean + root.T
    pts[d + 1:] = belief.mean - root.T
    w_mean = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
    w_cov = w_mean.copy()
    w_mean[0] = lam / (d + lam)
    w_cov[0] = lam / (d + lam) + (1.0 - ut.alpha ** 2 + ut.beta)
    return SigmaPointSet(points=pts, w_mean=w_mean, w_cov=w_cov)


def transform_points(points: np.ndarray, w_mean: np.ndarray, w_cov: np.ndarray,
                     source_mean: np.ndarray, transformed: np.ndarray):
    """Moments of already-transformed sigma points.

    Returns (mean, cov, cross_cov) where cross_cov pairs deviations of the
    source points with deviations of the transformed points.
    """
    mu_y = w_mean @ transformed
    dy = transformed - mu_y
    dx = points - source_mean
    cov_y = symmetrize((dy * w_cov[:, None]).T @ dy)
    cross = (dx * w_cov[:, None]).T @ dy
    return mu_y, cov_y, cross


def unscented_transform(belief: GaussianBelief, f: Callable[[np.ndarray], np.ndarray],
                        ut: UTParams = UTParams()):
    """Propagate a Gaussian through f; returns (mean, cov, cross_cov)."""
    sp = sigma_points(belief, ut)
    outs = []
    for i, x in enumerate(sp.points):
        y = np.atleast_1d(np.asarray(f(x), dtype=float))
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite map output at sigma point {i}: x={x}")
        outs.append(y)
    transformed = np.stack(outs)
    return transform_points(sp.points, sp.w_mean, sp.w_cov, belief.mean, transformed)
