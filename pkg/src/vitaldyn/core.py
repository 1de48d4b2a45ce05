"""Shared domain types and small numerical primitives.

Everything here is an immutable value type or a pure function; all other
modules build on these.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg


class NumericalError(RuntimeError):
    """A linear-algebra step failed after jitter escalation."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration."""


def symmetrize(mat: np.ndarray) -> np.ndarray:
    """(M + M^T) / 2 — applied after every covariance update."""
    return 0.5 * (mat + mat.T)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


# ------------------------------------------------------------
# Domain types
# ------------------------------------------------------------

@dataclass(frozen=True)
class GeneralizedLogistic:
    """Richards-curve link from a latent projection to a vital sign.

    g(x) = m + (M - m) / (1 + e^{-gamma * x})^(1/nu)
    """
    m: float
    M: float
    gamma: float
    nu: float

    def __post_init__(self) -> None:
        if not self.M > self.m:
            raise ValueError(f"upper asymptote must exceed lower: M={self.M}, m={self.m}")
        if not self.nu > 0:
            raise ValueError(f"asymmetry parameter must be positive: nu={self.nu}")


def eval_logistic(p: GeneralizedLogistic, x):
    """Evaluate the generalized logistic at x (scalar or array).

    Computed as m + (M-m) * exp(-logaddexp(0, -gamma*x) / nu), which is
    finite for the whole float range (no overflow of e^{-gamma*x}).
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite latent projection passed to the logistic link")
    z = p.gamma * x
    out = p.m + (p.M - p.m) * np.exp(-np.logaddexp(0.0, -z) / p.nu)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianBelief:
    """Mean/covariance pair for a filtered, predicted or smoothed state."""
    mean: np.ndarray
    cov: np.ndarray

    PSD_TOL = 1e-9

    def __post_init__(self) -> None:
        mean = _readonly(np.atleast_1d(self.mean))
        cov = symmetrize(np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _readonly(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    def check_psd(self) -> None:
        lam_min = float(np.linalg.eigvalsh(self.cov)[0])
        if lam_min < -self.PSD_TOL:
            raise NumericalError(f"covariance not PSD: min eigenvalue {lam_min:g}")


@dataclass(frozen=True)
class StateSpaceParams:
    """Full parameter set of an IO-NLDS or PK/PD-as-NLDS instance.

    eta is one GeneralizedLogistic per observed channel, or None for a
    purely linear observation model y = Cx + noise (used by tests and by
    linear-regime fitting).
    """
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu1: np.ndarray
    Sigma1: np.ndarray
    eta: tuple[GeneralizedLogistic, ...] | None
    dt: float = 15.0

    def __post_init__(self) -> None:
        A = _readonly(np.atleast_2d(self.A))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        B = _readonly(B)
        C = _readonly(np.atleast_2d(self.C))
        Q = _readonly(np.atleast_2d(self.Q))
        R = _readonly(np.atleast_2d(self.R))
        mu1 = _readonly(np.atleast_1d(self.mu1))
        Sigma1 = _readonly(symmetrize(np.atleast_2d(np.asarray(self.Sigma1, dtype=float))))
        d_x = A.shape[0]
        if A.shape != (d_x, d_x):
            raise ValueError("A must be square")
        if B.shape[0] != d_x:
            raise ValueError("B row count must match A")
        if C.shape[1] != d_x:
            raise ValueError("C column count must match A")
        d_y = C.shape[0]
        if Q.shape != (d_x, d_x) or R.shape != (d_y, d_y):
            raise ValueError("Q/R dimensions inconsistent with A/C")
        for name, mat in (("Q", Q), ("R", R)):
            off = mat - np.diag(np.diag(mat))
            if np.any(off != 0.0):
                raise ValueError(f"{name} must be diagonal")
            if np.any(np.diag(mat) < 0.0):
                raise ValueError(f"{name} diagonal must be non-negative")
        if mu1.shape != (d_x,) or Sigma1.shape != (d_x, d_x):
            raise ValueError("mu1/Sigma1 dimensions inconsistent with A")
        if np.linalg.eigvalsh(Sigma1)[0] < -GaussianBelief.PSD_TOL:
            raise ValueError("Sigma1 must be positive semi-definite")
        eta = self.eta
        if eta is not None:
            eta = tuple(eta)
            if len(eta) != d_y:
                raise ValueError(f"eta must have one entry per channel ({d_y})")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name, val in (("A", A), ("B", B), ("C", C), ("Q", Q), ("R", R),
                          ("mu1", mu1), ("Sigma1", Sigma1), ("eta", eta)):
            object.__setattr__(self, name, val)

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]

    @property
    def d_y(self) -> int:
        return self.C.shape[0]

    def observe(self, z):
        """Map latent projections z = Cx (shape ..., d_y) to expected observations."""
        z = np.asarray(z, dtype=float)
        if self.eta is None:
            return z
        out = np.empty_like(z)
        for j, p in enumerate(self.eta):
            out[..., j] = eval_logistic(p, z[..., j])
        return out

    def to_dict(self) -> dict:
        eta = None
        if self.eta is not None:
            eta = [{"m": p.m, "M": p.M, "gamma": p.gamma, "nu": p.nu} for p in self.eta]
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "Q_diag": np.diag(self.Q).tolist(),
            "R_diag": np.diag(self.R).tolist(),
            "mu1": self.mu1.tolist(),
            "Sigma1": self.Sigma1.tolist(),
            "eta": eta,
            "dt": self.dt,
        }

    @staticmethod
    def from_dict(d: dict) -> "StateSpaceParams":
        eta = d.get("eta")
        if eta is not None:
            eta = tuple(GeneralizedLogistic(e["m"], e["M"], e["gamma"], e["nu"]) for e in eta)
        return StateSpaceParams(
            A=np.asarray(d["A"], dtype=float),
            B=np.asarray(d["B"], dtype=float),
            C=np.asarray(d["C"], dtype=float),
            Q=np.diag(np.asarray(d["Q_diag"], dtype=float)),
            R=np.diag(np.asarray(d["R_diag"], dtype=float)),
            mu1=np.asarray(d["mu1"], dtype=float),
            Sigma1=np.asarray(d["Sigma1"], dtype=float),
            eta=eta,
            dt=float(d["dt"]),
        )


@dataclass(frozen=True)
class VitalSignSeries:
    """Uniformly sampled multichannel observations with per-cell missingness."""
    dt: float
    channel_names: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        values = _readonly(np.atleast_2d(self.values))
        mask = np.atleast_2d(np.asarray(self.mask, dtype=bool))
        mask.flags.writeable = False
        names = tuple(self.channel_names)
        if mask.shape != values.shape:
            raise ValueError("mask shape must equal values shape")
        if values.shape[1] != len(names):
            raise ValueError("channel count mismatch")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "channel_names", names)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d_y(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class InfusionProtocol:
    """Control-input sequence: drug infusion rates over time."""
    dt: float
    rates: np.ndarray

    def __post_init__(self) -> None:
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim == 1:
            rates = rates[:, None]
        if np.any(rates < 0.0):
            raise ValueError("infusion rates must be non-negative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "rates", _readonly(rates))

    @property
    def T(self) -> int:
        return self.rates.shape[0]

    @property
    def d_u(self) -> int:
        return self.rates.shape[1]


# ------------------------------------------------------------
# Numerical primitives
# ------------------------------------------------------------

def matrix_exponential(F: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """exp(F * dt) via scaling-and-squaring with Pade approximation."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise ValueError(f"F must be square, got shape {F.shape}")
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return scipy.linalg.expm(F * dt)


def spectral_radius(A: np.ndarray) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def project_to_stable(A: np.ndarray, tol: float = 1e-9, max_constraints: int = 200) -> np.ndarray:
    """Least-squares-closest stable matrix by incremental constraint generation.

    While the current iterate is unstable, a half-space constraint
    <u1 v1^T, X> <= 1 built from its top singular vectors is added, and the
    Frobenius projection of A onto the intersection of all generated
    half-spaces is re-solved (Hildreth dual ascent). sigma_max <= 1 describes
    the convex feasible set these constraints carve out; a matrix that is
    already stable (spectral radius <= 1) is returned unchanged.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if spectral_radius(A) <= 1.0 + tol:
        return A.copy()

    constraints: list[np.ndarray] = []
    X = A.copy()
    for _ in range(max_constraints):
        if spectral_radius(X) <= 1.0 + tol:
            return X
        u, s, vt = np.linalg.svd(X)
        constraints.append(np.outer(u[:, 0], vt[0, :]))
        X = _project_halfspaces(A, constraints)
    # Fallback: exact Frobenius projection onto the sigma_max <= 1 ball.
    u, s, vt = np.linalg.svd(A)
    return u @ np.diag(np.minimum(s, 1.0)) @ vt


def _project_halfspaces(A: np.ndarray, gens: Sequence[np.ndarray],
                        iters: int = 2000, tol: float = 1e-12) -> np.ndarray:
    """min ||X - A||_F^2 s.t. <G_i, X> <= 1, solved in the dual (Hildreth).

    X = A - sum_i lam_i G_i with lam >= 0; coordinate ascent on lam.
    """
    k = len(gens)
    gram = np.array([[float(np.sum(g1 * g2)) for g2 in gens] for g1 in gens])
    b = np.array([float(np.sum(g * A)) - 1.0 for g in gens])
    lam = np.zeros(k)
    for _ in range(iters):
        delta = 0.0
        for i in range(k):
            resid = b[i] - gram[i] @ lam + gram[i, i] * lam[i]
            new = max(0.0, resid / gram[i, i])
            delta = max(delta, abs(new - lam[i]))
            lam[i] = new
        if delta < tol:
            break
    X = A.copy()
    for li, g in zip(lam, gens):
        X -= li * g
    return X
