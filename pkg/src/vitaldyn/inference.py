"""Forward filtering, RTS smoothing, multi-horizon and free-running prediction.

Dynamics are linear, so the predict step is the standard Kalman step; the
measurement update pushes sigma points through the (generally nonlinear)
observation link. Missing data is handled by restricting the observation
model to the channels observed at each step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (GaussianBelief, InfusionProtocol, NumericalError,
                   StateSpaceParams, VitalSignSeries, symmetrize)
from .unscented import UTParams, sigma_points, transform_points

log = logging.getLogger(__name__)

_LOG2PI = float(np.log(2.0 * np.pi))

# Innovation-covariance jitter: start value and escalation cap (x10 steps).
_INNOV_JITTER0 = 1e-9
_INNOV_JITTER_MAX = 1e-3


@dataclass(frozen=True)
class FilterResult:
    predicted: tuple[GaussianBelief, ...]
    filtered: tuple[GaussianBelief, ...]
    log_likelihood: float


@dataclass(frozen=True)
class SmoothResult:
    smoothed: tuple[GaussianBelief, ...]
    pairwise: tuple[np.ndarray, ...]   # T-1 cross-covariances P_{t,t-1|T}


def predict_step(belief: GaussianBelief, A: np.ndarray, B: np.ndarray,
                 u_t: np.ndarray, Q: np.ndarray) -> GaussianBelief:
    """Linear-Gaussian propagation: N(A mu + B u, A Sigma A^T + Q)."""
    u_t = np.atleast_1d(np.asarray(u_t, dtype=float))
    mean = A @ belief.mean + B @ u_t
    cov = symmetrize(A @ belief.cov @ A.T + Q)
    return GaussianBelief(mean, cov)


def _obs_moments_from_points(params: StateSpaceParams, pts, w_mean, w_cov, mean,
                             obs_idx: np.ndarray):
    """UT moments of the observation map restricted to channels obs_idx."""
    C_obs = params.C[obs_idx]
    z = pts @ C_obs.T                       # (n_sigma, k)
    if params.eta is None:
        y = z
    else:
        y = np.empty_like(z)
        from .core import eval_logistic
        for j, ch in enumerate(obs_idx):
            y[:, j] = eval_logistic(params.eta[ch], z[:, j])
    if not np.all(np.isfinite(y)):
        raise NumericalError("non-finite observation-map output at a sigma point")
    return transform_points(pts, w_mean, w_cov, mean, y)


def observation_moments(params: StateSpaceParams, belief: GaussianBelief,
                        ut: UTParams, obs_idx: np.ndarray | None = None,
                        include_noise: bool = True):
    """Predicted observation mean and covariance for a latent belief.

    The mean is the UT mean of g(Cx) (not g of the mean). With
    include_noise the observation noise R is added to the covariance.
    """
    if obs_idx is None:
        obs_idx = np.arange(params.d_y)
    sp = sigma_points(belief, ut)
    mu_y, cov_y, cross = _obs_moments_from_points(
        params, sp.points, sp.w_mean, sp.w_cov, belief.mean, obs_idx)
    if include_noise:
        cov_y = cov_y + np.diag(np.diag(params.R)[obs_idx])
    return mu_y, cov_y, cross


def _solve_innovation(S: np.ndarray):
    """Cholesky of the innovation covariance with bounded jitter escalation."""
    jitter = 0.0
    eye = np.eye(S.shape[0])
    while True:
        try:
            return np.linalg.cholesky(S + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter = _INNOV_JITTER0 if jitter == 0.0 else jitter * 10.0
            if jitter > _INNOV_JITTER_MAX:
                raise NumericalError(
                    f"innovation covariance not invertible after jitter escalation:\n{S}")


def _gaussian_logpdf(resid: np.ndarray, chol: np.ndarray) -> float:
    sol = np.linalg.solve(chol, resid)
    return float(-0.5 * (sol @ sol) - np.sum(np.log(np.diag(chol)))
                 - 0.5 * resid.size * _LOG2PI)


def update_step(predicted: GaussianBelief, y_t: np.ndarray, mask_t: np.ndarray,
                params: StateSpaceParams, ut: UTParams):
    """Unscented measurement update; returns (posterior, loglik increment).

    All channels missing: the predicted belief is returned unchanged and the
    increment is 0.
    """
    obs_idx = np.flatnonzero(np.asarray(mask_t, dtype=bool))
    if obs_idx.size == 0:
        return predicted, 0.0
    sp = sigma_points(predicted, ut)
    mu_y, cov_y, cross = _obs_moments_from_points(
        params, sp.points, sp.w_mean, sp.w_cov, predicted.mean, obs_idx)
    S = cov_y + np.diag(np.diag(params.R)[obs_idx])
    chol, jitter = _solve_innovation(S)
    if jitter > 0:
        log.warning("innovation jitter %.1e applied", jitter)
        S = S + jitter * np.eye(S.shape[0])
    K = np.linalg.solve(chol.T, np.linalg.solve(chol, cross.T)).T   # Sigma_xy S^-1
    resid = np.asarray(y_t, dtype=float)[obs_idx] - mu_y
    mean = predicted.mean + K @ resid
    cov = symmetrize(predicted.cov - K @ S @ K.T)
    return GaussianBelief(mean, cov), _gaussian_logpdf(resid, chol)


def run_filter(params: StateSpaceParams, protocol: InfusionProtocol,
               series: VitalSignSeries, ut: UTParams = UTParams()) -> FilterResult:
    """Forward pass; t=1 uses N(mu1, Sigma1) as the predicted density."""
    T = series.T
    if protocol.T < T:
        raise ValueError(f"protocol length {protocol.T} shorter than series length {T}")
    predicted: list[GaussianBelief] = []
    filtered: list[GaussianBelief] = []
    loglik = 0.0
    belief = GaussianBelief(params.mu1, params.Sigma1)
    for t in range(T):
        if t > 0:
            belief = predict_step(filtered[-1], params.A, params.B,
                                  protocol.rates[t], params.Q)
        try:
            post, inc = update_step(belief, series.values[t], series.mask[t], params, ut)
        except NumericalError as exc:
            raise NumericalError(f"filter failed at time index {t}: {exc}") from exc
        predicted.append(belief)
        filtered.append(post)
        loglik += inc
    return FilterResult(tuple(predicted), tuple(filtered), loglik)


def rts_smooth(params: StateSpaceParams, fr: FilterResult) -> SmoothResult:
    """Standard RTS backward recursion plus pairwise covariances.

    Gain G_t = P_{t|t} A^T P_{t+1|t}^{-1}; pairwise P_{t,t-1|T} = P_{t|T} G_{t-1}^T.
    """
    T = len(fr.filtered)
    A = params.A
    smoothed: list[GaussianBelief] = [fr.filtered[-1]]
    gains: list[np.ndarray] = []
    for t in range(T - 2, -1, -1):
        P_f = fr.filtered[t].cov
        pred_next = fr.predicted[t + 1]
        P_pred = pred_next.cov + 1e-9 * np.eye(A.shape[0])
        try:
            G = np.linalg.solve(P_pred, (P_f @ A.T).T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular predicted covariance at t={t + 1}") from exc
        s_next = smoothed[0]
        mean = fr.filtered[t].mean + G @ (s_next.mean - pred_next.mean)
        cov = symmetrize(P_f + G @ (s_next.cov - pred_next.cov) @ G.T)
        smoothed.insert(0, GaussianBelief(mean, cov))
        gains.insert(0, G)
    pairwise = tuple(smoothed[t].cov @ gains[t - 1].T for t in range(1, T))
    return SmoothResult(tuple(smoothed), pairwise)


def h_step_predict(params: StateSpaceParams, fr: FilterResult,
                   protocol: InfusionProtocol, h: int, ut: UTParams = UTParams()):
    """h-step-ahead observation predictions.

    For each t with t+h <= T, propagates the filtered belief through h
    predict steps using the known future inputs and maps it through the
    unscented observation transform. Returns (target_indices, means,
    variances); row i predicts the observation at 0-based time
    target_indices[i]. Variances include observation noise R.
    """
    T = len(fr.filtered)
    if not 1 <= h <= T - 1:
        raise ValueError(f"horizon must satisfy 1 <= h <= T-1 = {T - 1}, got {h}")
    means = np.empty((T - h, params.d_y))
    variances = np.empty((T - h, params.d_y))
    for t in range(T - h):
        belief = fr.filtered[t]
        for k in range(1, h + 1):
            belief = predict_step(belief, params.A, params.B,
                                  protocol.rates[t + k], params.Q)
        mu_y, cov_y, _ = observation_moments(params, belief, ut, include_noise=True)
        means[t] = mu_y
        variances[t] = np.diag(cov_y)
    targets = np.arange(h, T)
    return targets, means, variances


@dataclass(frozen=True)
class FreeRunResult:
    means: np.ndarray       # (T, d_y) predicted observation means
    variances: np.ndarray   # (T, d_y) predicted observation variances (incl. R)
    latents: tuple[GaussianBelief, ...]


def free_run(params: StateSpaceParams, protocol: InfusionProtocol, T: int,
             ut: UTParams = UTParams()) -> FreeRunResult:
    """Input-driven rollout from N(mu1, Sigma1), never conditioning on data."""
    if protocol.T < T:
        raise ValueError(f"protocol length {protocol.T} shorter than requested T={T}")
    means = np.empty((T, params.d_y))
    variances = np.empty((T, params.d_y))
    latents: list[GaussianBelief] = []
    belief = GaussianBelief(params.mu1, params.Sigma1)
    for t in range(T):
        if t > 0:
            belief = predict_step(belief, params.A, params.B,
                                  protocol.rates[t], params.Q)
        mu_y, cov_y, _ = observation_moments(params, belief, ut, include_noise=True)
        means[t] = mu_y
        variances[t] = np.diag(cov_y)
        latents.append(belief)
    return FreeRunResult(means, variances, tuple(latents))
