"""EM parameter estimation for the input-output state-space models.

E-step: UKF forward pass + RTS smoothing, accumulated into the sufficient
statistics of the linear sub-model. M-step: closed-form updates for
{mu1, Sigma1, A, B, Q}, an unscented update for R, and quasi-Newton ascent
on {C, eta} through the sigma-point approximation of the expected
observation log-density.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .core import (GaussianBelief, GeneralizedLogistic, InfusionProtocol,
                   NumericalError, StateSpaceParams, VitalSignSeries,
                   project_to_stable, spectral_radius, symmetrize)
from .inference import FilterResult, SmoothResult, rts_smooth, run_filter
from .unscented import UTParams, sigma_points

log = logging.getLogger(__name__)

_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class SufficientStats:
    """S.3-style moment sums over t = 2..T."""
    S_xmxm: np.ndarray   # sum P_{t-1|T} + mu_{t-1} mu_{t-1}^T
    S_xxm: np.ndarray    # sum P_{t,t-1|T} + mu_t mu_{t-1}^T
    S_xx: np.ndarray     # sum P_{t|T} + mu_t mu_t^T
    S_xmu: np.ndarray    # sum mu_{t-1} u_t^T
    S_xu: np.ndarray     # sum mu_t u_t^T
    S_uu: np.ndarray     # sum u_t u_t^T


@dataclass(frozen=True)
class EMConfig:
    max_iterations: int = 100
    bfgs_evals_early: int = 1000
    bfgs_early_iters: int = 10
    bfgs_evals_late: int = 100
    tol: float = 1e-6
    enforce_stability: bool = True
    update_linear: bool = True   # off: A, B fixed (mu1/Sigma1/Q still updated)
    update_C: bool = True
    update_eta: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        for name in ("bfgs_evals_early", "bfgs_evals_late", "bfgs_early_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


def stats_from_smoothed(sm: SmoothResult, protocol: InfusionProtocol,
                        T: int, d_u: int) -> SufficientStats:
    """Accumulate the t = 2..T moment sums from smoothed posteriors."""
    d_x = sm.smoothed[0].dim
    S_xmxm = np.zeros((d_x, d_x))
    S_xxm = np.zeros((d_x, d_x))
    S_xx = np.zeros((d_x, d_x))
    S_xmu = np.zeros((d_x, d_u))
    S_xu = np.zeros((d_x, d_u))
    S_uu = np.zeros((d_u, d_u))
    for t in range(1, T):
        mu_p, P_p = sm.smoothed[t - 1].mean, sm.smoothed[t - 1].cov
        mu, P = sm.smoothed[t].mean, sm.smoothed[t].cov
        u = protocol.rates[t]
        S_xmxm += P_p + np.outer(mu_p, mu_p)
        S_xxm += sm.pairwise[t - 1] + np.outer(mu, mu_p)
        S_xx += P + np.outer(mu, mu)
        S_xmu += np.outer(mu_p, u)
        S_xu += np.outer(mu, u)
        S_uu += np.outer(u, u)
    return SufficientStats(symmetrize(S_xmxm), S_xxm, symmetrize(S_xx),
                           S_xmu, S_xu, symmetrize(S_uu))


def estep(params: StateSpaceParams, protocol: InfusionProtocol,
          series: VitalSignSeries, ut: UTParams = UTParams()):
    """Returns (SufficientStats, SmoothResult, log_likelihood)."""
    fr = run_filter(params, protocol, series, ut)
    sm = rts_smooth(params, fr)
    stats = stats_from_smoothed(sm, protocol, series.T, params.d_u)
    return stats, sm, fr.log_likelihood


def mstep_linear(stats: SufficientStats, smoothed: SmoothResult, T: int,
                 jitter: float = 1e-9) -> dict:
    """Closed-form update of {mu1, Sigma1, A, B, Q}.

    [A B] solves the joint normal equations; Q is the expected one-step
    residual covariance, symmetrized, diagonalized and floored.
    """
    d_x = stats.S_xx.shape[0]
    d_u = stats.S_uu.shape[0]
    M = np.block([[stats.S_xmxm, stats.S_xmu],
                  [stats.S_xmu.T, stats.S_uu]])
    M = M + jitter * np.eye(d_x + d_u)
    rhs = np.hstack([stats.S_xxm, stats.S_xu])
    try:
        AB = np.linalg.solve(M.T, rhs.T).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular normal equations in the linear M-step") from exc
    A = AB[:, :d_x]
    B = AB[:, d_x:]
    # Full quadratic residual form; equals the compact expression
    # (S_xx - A S_xxm^T - B S_xu^T)/(T-1) at the joint optimum but stays PSD
    # when A or B are held fixed.
    Q = (stats.S_xx
         - A @ stats.S_xxm.T - stats.S_xxm @ A.T
         - B @ stats.S_xu.T - stats.S_xu @ B.T
         + A @ stats.S_xmxm @ A.T
         + A @ stats.S_xmu @ B.T + B @ stats.S_xmu.T @ A.T
         + B @ stats.S_uu @ B.T) / (T - 1)
    Q = np.diag(np.maximum(np.diag(symmetrize(Q)), _VAR_FLOOR))
    return {"mu1": smoothed.smoothed[0].mean.copy(),
            "Sigma1": smoothed.smoothed[0].cov.copy(),
            "A": A, "B": B, "Q": Q}


def fixed_AB_Q(stats: SufficientStats, A: np.ndarray, B: np.ndarray, T: int) -> np.ndarray:
    """ML process-noise update with A and B held fixed."""
    Q = (stats.S_xx
         - A @ stats.S_xxm.T - stats.S_xxm @ A.T
         - B @ stats.S_xu.T - stats.S_xu @ B.T
         + A @ stats.S_xmxm @ A.T
         + A @ stats.S_xmu @ B.T + B @ stats.S_xmu.T @ A.T
         + B @ stats.S_uu @ B.T) / (T - 1)
    return np.diag(np.maximum(np.diag(symmetrize(Q)), _VAR_FLOOR))


def _smoothed_sigma_arrays(smoothed: SmoothResult, ut: UTParams):
    """Stacked sigma points of every smoothed belief: (T, 2d+1, d) + weights."""
    pts = []
    w_mean = None
    for b in smoothed.smoothed:
        sp = sigma_points(b, ut)
        pts.append(sp.points)
        w_mean = sp.w_mean
    return np.stack(pts), w_mean


def _logistic_batch(z: np.ndarray, m, M, gamma, nu) -> np.ndarray:
    """Vectorized Richards curve over the last axis (one parameter per channel)."""
    zz = gamma * z
    return m + (M - m) * np.exp(-np.logaddexp(0.0, -zz) / nu)


def mstep_R(smoothed: SmoothResult, series: VitalSignSeries, C: np.ndarray,
            eta: tuple[GeneralizedLogistic, ...] | None, R_prev: np.ndarray,
            ut: UTParams = UTParams()) -> np.ndarray:
    """Diagonal observation-noise update via the unscented residual expectation.

    Each entry averages E[(y - g(Cx))^2] over the steps where that channel is
    observed; never-observed channels keep their previous value.
    """
    X, w = _smoothed_sigma_arrays(smoothed, ut)
    Z = X @ C.T                                   # (T, n_sigma, d_y)
    if eta is None:
        G = Z
    else:
        m = np.array([p.m for p in eta])
        M = np.array([p.M for p in eta])
        gam = np.array([p.gamma for p in eta])
        nu = np.array([p.nu for p in eta])
        G = _logistic_batch(Z, m, M, gam, nu)
    resid2 = (series.values[:, None, :] - G) ** 2  # (T, n_sigma, d_y)
    expct = np.einsum("s,tsj->tj", w, resid2)      # (T, d_y)
    R = np.diag(R_prev).astype(float).copy()
    counts = series.mask.sum(axis=0)
    for j in range(series.d_y):
        if counts[j] == 0:
            log.warning("channel %d never observed; keeping previous R entry", j)
            continue
        R[j] = max(float(expct[series.mask[:, j], j].mean()), _VAR_FLOOR)
    return np.diag(R)


class _BudgetExhausted(Exception):
    pass


def mstep_nonlinear(smoothed: SmoothResult, series: VitalSignSeries,
                    init_C: np.ndarray, init_eta: tuple[GeneralizedLogistic, ...] | None,
                    R: np.ndarray, budget: int, ut: UTParams = UTParams(),
                    update_C: bool = True, update_eta: bool = True):
    """BFGS ascent on the expected observation log-density over (C, eta).

    M > m is enforced via M = m + exp(s) and nu > 0 via nu = exp(r). Gradients
    are central finite differences (1e-6 relative step). Returns the best
    iterate found within the evaluation budget, never worse than the
    initializer.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    d_y, d_x = init_C.shape
    X, w = _smoothed_sigma_arrays(smoothed, ut)
    y = series.values
    mask = series.mask
    r_diag = np.maximum(np.diag(R), _VAR_FLOOR)
    if init_eta is None:
        update_eta = False

    def unpack(theta):
        pos = 0
        if update_C:
            C = theta[pos:pos + d_y * d_x].reshape(d_y, d_x)
            pos += d_y * d_x
        else:
            C = init_C
        if update_eta:
            e = theta[pos:].reshape(d_y, 4)
            m = e[:, 0]
            M = m + np.exp(np.clip(e[:, 1], -30.0, 30.0))
            gam = e[:, 2]
            nu = np.exp(np.clip(e[:, 3], -30.0, 30.0))
            return C, (m, M, gam, nu)
        if init_eta is None:
            return C, None
        return C, (np.array([p.m for p in init_eta]), np.array([p.M for p in init_eta]),
                   np.array([p.gamma for p in init_eta]), np.array([p.nu for p in init_eta]))

    def neg_objective(theta):
        C, e = unpack(theta)
        Z = X @ C.T
        G = Z if e is None else _logistic_batch(Z, *e)
        resid2 = (y[:, None, :] - G) ** 2
        expct = np.einsum("s,tsj->tj", w, resid2)
        val = 0.0
        for j in range(d_y):
            obs = mask[:, j]
            if not obs.any():
                continue
            val += -0.5 * obs.sum() * np.log(2.0 * np.pi * r_diag[j]) \
                   - 0.5 * expct[obs, j].sum() / r_diag[j]
        return -val

    theta0_parts = []
    if update_C:
        theta0_parts.append(init_C.ravel())
    if update_eta:
        e0 = np.array([[p.m, np.log(p.M - p.m), p.gamma, np.log(p.nu)]
                       for p in init_eta])
        theta0_parts.append(e0.ravel())
    if not theta0_parts:
        return init_C, init_eta
    theta0 = np.concatenate(theta0_parts)

    state = {"evals": 0, "best_val": None, "best_theta": theta0.copy()}

    def counted(theta):
        if state["evals"] >= budget:
            raise _BudgetExhausted
        state["evals"] += 1
        val = neg_objective(theta)
        if not np.isfinite(val):
            return 1e300
        if state["best_val"] is None or val < state["best_val"]:
            state["best_val"] = val
            state["best_theta"] = theta.copy()
        return val

    f0 = neg_objective(theta0)
    if not np.isfinite(f0):
        raise NumericalError("non-finite objective at the M-step initializer")
    state["evals"] = 1
    state["best_val"] = f0

    def grad(theta):
        g = np.empty_like(theta)
        for i in range(theta.size):
            h = 1e-6 * max(1.0, abs(theta[i]))
            tp = theta.copy(); tp[i] += h
            tm = theta.copy(); tm[i] -= h
            g[i] = (counted(tp) - counted(tm)) / (2.0 * h)
        return g

    try:
        scipy.optimize.minimize(counted, theta0, jac=grad, method="BFGS",
                                options={"maxiter": 10 * budget, "gtol": 1e-10})
    except _BudgetExhausted:
        pass

    C, e = unpack(state["best_theta"])
    if e is None:
        return C.copy(), None
    eta = tuple(GeneralizedLogistic(float(m), float(M), float(g_), float(n))
                for m, M, g_, n in zip(*e))
    return C.copy(), eta


@dataclass(frozen=True)
class EMResult:
    params: StateSpaceParams
    loglik_trace: tuple[float, ...]
    iterations: int
    best_iteration: int
    converged: bool
    stability_projections: tuple[int, ...]   # iterations where A was projected
    wall_time_s: float
    diagnostic: str | None = None

    def to_report(self) -> dict:
        return {
            "log_likelihood_trace": list(self.loglik_trace),
            "iterations": self.iterations,
            "best_iteration": self.best_iteration,
            "converged": self.converged,
            "stability_projection_iterations": list(self.stability_projections),
            "wall_time_seconds": self.wall_time_s,
            "params": self.params.to_dict(),
        }


def run_em(series: VitalSignSeries, protocol: InfusionProtocol,
           init: StateSpaceParams, config: EMConfig = EMConfig(),
           ut: UTParams = UTParams(), progress=None) -> EMResult:
    """EM driver; returns the iterate with the highest observed log-likelihood.

    progress, if given, is called with (iteration index, current params) as
    each iteration starts (used by the service's asynchronous fit jobs).
    """
    t0 = time.perf_counter()
    params = init
    trace: list[float] = []
    projections: list[int] = []
    best: tuple[float, StateSpaceParams, int] | None = None
    converged = False
    diagnostic = None
    slow_count = 0

    if config.max_iterations == 0:
        ll = run_filter(params, protocol, series, ut).log_likelihood
        return EMResult(params, (ll,), 0, 0, False, (), time.perf_counter() - t0)

    for it in range(config.max_iterations):
        if progress is not None:
            progress(it, params)
        try:
            stats, sm, ll = estep(params, protocol, series, ut)
        except NumericalError as exc:
            diagnostic = f"E-step failed at iteration {it}: {exc}"
            log.warning(diagnostic)
            break
        trace.append(ll)
        if best is None or ll > best[0]:
            best = (ll, params, it)
        if it > 0:
            prev = trace[-2]
            rel = (ll - prev) / max(1.0, abs(prev))
            if rel < -1e-3:
                log.warning("log-likelihood decreased by %.3g (relative) at "
                            "iteration %d (sigma-point approximation)", -rel, it)
            if abs(rel) < config.tol:
                slow_count += 1
                if slow_count >= 3:
                    converged = True
            else:
                slow_count = 0

        T = series.T
        if config.update_linear:
            lin = mstep_linear(stats, sm, T)
            A, B = lin["A"], lin["B"]
            mu1, Sigma1, Q = lin["mu1"], lin["Sigma1"], lin["Q"]
        else:
            A, B = params.A, params.B
            mu1 = sm.smoothed[0].mean.copy()
            Sigma1 = sm.smoothed[0].cov.copy()
            Q = fixed_AB_Q(stats, A, B, T)
        if config.enforce_stability and spectral_radius(A) > 1.0 + 1e-9:
            A = project_to_stable(A)
            projections.append(it)
        R = mstep_R(sm, series, params.C, params.eta, params.R, ut)
        budget = (config.bfgs_evals_early if it < config.bfgs_early_iters
                  else config.bfgs_evals_late)
        if config.update_C or (config.update_eta and params.eta is not None):
            C, eta = mstep_nonlinear(sm, series, params.C, params.eta, R, budget,
                                     ut, update_C=config.update_C,
                                     update_eta=config.update_eta)
        else:
            C, eta = params.C, params.eta
        params = StateSpaceParams(A=A, B=B, C=C, Q=Q, R=R, mu1=mu1,
                                  Sigma1=Sigma1, eta=eta, dt=params.dt)
        if converged:
            break

    if diagnostic is None:
        try:
            ll = run_filter(params, protocol, series, ut).log_likelihood
            trace.append(ll)
            if best is None or ll > best[0]:
                best = (ll, params, len(trace) - 1)
        except NumericalError as exc:
            log.warning("final likelihood evaluation failed: %s", exc)
    if best is None:
        best = (-np.inf, init, 0)
    return EMResult(best[1], tuple(trace), len(trace) - 1, best[2], converged,
                    tuple(projections), time.perf_counter() - t0, diagnostic)


def replace_params(params: StateSpaceParams, **kw) -> StateSpaceParams:
    base = dict(A=params.A, B=params.B, C=params.C, Q=params.Q, R=params.R,
                mu1=params.mu1, Sigma1=params.Sigma1, eta=params.eta, dt=params.dt)
    base.update(kw)
    return StateSpaceParams(**base)


# ------------------------------------------------------------
# Initialization
# ------------------------------------------------------------

def _eta_from_ranges(series: VitalSignSeries) -> tuple[GeneralizedLogistic, ...]:
    etas = []
    for j in range(series.d_y):
        obs = series.values[series.mask[:, j], j]
        if obs.size == 0:
            lo, hi = 0.0, 1.0
        else:
            lo, hi = float(obs.min()), float(obs.max())
        rng = max(hi - lo, 1e-3)
        etas.append(GeneralizedLogistic(m=lo - 0.1 * rng, M=hi + 0.1 * rng,
                                        gamma=1.0, nu=1.0))
    return tuple(etas)


def default_init(series: VitalSignSeries, protocol: InfusionProtocol,
                 d_x: int = 4, seed: int = 0) -> StateSpaceParams:
    """Scale-aware, seed-deterministic EM starting point for an IO-NLDS."""
    rng = np.random.default_rng(seed)
    d_u = protocol.d_u
    d_y = series.d_y
    A = 0.9 * np.eye(d_x)
    B = 0.1 * rng.standard_normal((d_x, d_u))
    C = rng.standard_normal((d_y, d_x))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    return StateSpaceParams(A=A, B=B, C=C, Q=0.1 * np.eye(d_x),
                            R=0.1 * np.eye(d_y), mu1=np.zeros(d_x),
                            Sigma1=np.eye(d_x), eta=_eta_from_ranges(series),
                            dt=series.dt)


def init_pkpd_params(rates, series: VitalSignSeries, seed: int = 0) -> StateSpaceParams:
    """Starting point for the restricted (physiology-constrained) EM."""
    from .pkpd import pkpd_as_nlds

    n = series.d_y
    return pkpd_as_nlds(rates, series.dt, _eta_from_ranges(series),
                        Q=0.1 * np.eye(4 * n), R=0.1 * np.eye(n),
                        mu1=np.zeros(4 * n), Sigma1=np.eye(4 * n))
