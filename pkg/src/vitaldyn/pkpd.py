"""Three-compartment-plus-effect-site PK/PD model.

Builds the continuous-time dynamics matrix, casts the model into
state-space form by matrix-exponential discretization, provides an RK4
reference integrator, and fits the free effect-site equilibration rate
(k1e) by per-channel grid search.

Rate constants are per minute; sampling intervals arrive in seconds and
are converted before exponentiation.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (ConfigurationError, GeneralizedLogistic, InfusionProtocol,
                   StateSpaceParams, VitalSignSeries, matrix_exponential)


@dataclass(frozen=True)
class CompartmentRates:
    """Transfer/elimination rates (per minute); one k1e per observed channel."""
    k10: float
    k12: float
    k21: float
    k13: float
    k31: float
    k1e: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "k1e", tuple(float(k) for k in np.atleast_1d(self.k1e)))
        for name in ("k10", "k12", "k21", "k13", "k31"):
            if not getattr(self, name) > 0:
                raise ValueError(f"rate {name} must be positive")
        if not all(k > 0 for k in self.k1e):
            raise ValueError("all k1e values must be positive")

    @property
    def n_channels(self) -> int:
        return len(self.k1e)

    def to_dict(self) -> dict:
        return {"k10": self.k10, "k12": self.k12, "k21": self.k21,
                "k13": self.k13, "k31": self.k31, "k1e": list(self.k1e)}

    @staticmethod
    def from_dict(d: dict) -> "CompartmentRates":
        return CompartmentRates(k10=float(d["k10"]), k12=float(d["k12"]),
                                k21=float(d["k21"]), k13=float(d["k13"]),
                                k31=float(d["k31"]),
                                k1e=tuple(np.atleast_1d(d["k1e"]).astype(float)))


def build_F(rates: CompartmentRates, channel: int = 0) -> np.ndarray:
    """Continuous-time dynamics matrix for one channel's compartment chain.

    State order: central, muscle, fat, effect site.
    """
    if not 0 <= channel < rates.n_channels:
        raise IndexError(f"channel {channel} out of range for {rates.n_channels} k1e values")
    k1e = rates.k1e[channel]
    return np.array([
        [-(rates.k10 + rates.k12 + rates.k13), rates.k21, rates.k31, 0.0],
        [rates.k12, -rates.k21, 0.0, 0.0],
        [rates.k13, 0.0, -rates.k31, 0.0],
        [k1e, 0.0, 0.0, -k1e],
    ])


def zoh_input_matrix(F: np.ndarray, B_c: np.ndarray, dt_min: float) -> np.ndarray:
    """Zero-order-hold discrete input matrix: integral_0^dt exp(F tau) dtau B_c.

    Computed as the top-right block of exp([[F, B],[0, 0]] dt).
    """
    d = F.shape[0]
    B_c = B_c.reshape(d, -1)
    m = B_c.shape[1]
    aug = np.zeros((d + m, d + m))
    aug[:d, :d] = F
    aug[:d, d:] = B_c
    return matrix_exponential(aug, dt_min)[:d, d:]


def pkpd_as_nlds(rates: CompartmentRates, dt: float,
                 eta: Sequence[GeneralizedLogistic] | None,
                 Q: np.ndarray, R: np.ndarray,
                 mu1: np.ndarray, Sigma1: np.ndarray,
                 zero_order_hold: bool = False) -> StateSpaceParams:
    """Cast the compartment model into state-space form.

    One independent 4-compartment block per observed channel, each with its
    own k1e. A = exp(F dt) per block; B stacks [1 0 0 0]^T per block (or the
    zero-order-hold input matrix when requested); C selects each block's
    effect-site coordinate.
    """
    n = rates.n_channels
    dt_min = dt / 60.0
    d_x = 4 * n
    A = np.zeros((d_x, d_x))
    B = np.zeros((d_x, 1))
    C = np.zeros((n, d_x))
    for ch in range(n):
        F = build_F(rates, ch)
        sl = slice(4 * ch, 4 * ch + 4)
        A[sl, sl] = matrix_exponential(F, dt_min)
        if zero_order_hold:
            B[sl, :] = zoh_input_matrix(F, np.array([1.0, 0.0, 0.0, 0.0]), dt_min)
        else:
            B[4 * ch, 0] = 1.0
        C[ch, 4 * ch + 3] = 1.0
    return StateSpaceParams(A=A, B=B, C=C, Q=np.asarray(Q, dtype=float),
                            R=np.asarray(R, dtype=float),
                            mu1=np.asarray(mu1, dtype=float),
                            Sigma1=np.asarray(Sigma1, dtype=float),
                            eta=None if eta is None else tuple(eta), dt=dt)


def simulate_ode(rates: CompartmentRates, protocol: InfusionProtocol,
                 x0: np.ndarray, substeps: int = 100, channel: int = 0) -> np.ndarray:
    """RK4 integration of the compartment ODEs, u piecewise-constant per step.

    Returns the latent trajectory, shape (T, 4), with row 0 equal to the
    initial condition and row t the state after integrating step t under
    rate u_t — the same time alignment as the discrete transition model.
    Serves as the discretization oracle for the matrix-exponential path.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    F = build_F(rates, channel)
    b = np.array([1.0, 0.0, 0.0, 0.0])
    dt_min = protocol.dt / 60.0
    h = dt_min / substeps
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((protocol.T, 4))
    out[0] = x
    for t in range(1, protocol.T):
        u = float(protocol.rates[t, 0])
        for _ in range(substeps):
            k1 = F @ x + b * u
            k2 = F @ (x + 0.5 * h * k1) + b * u
            k3 = F @ (x + 0.5 * h * k2) + b * u
            k4 = F @ (x + h * k3) + b * u
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[t] = x
    return out


@dataclass(frozen=True)
class GridFitResult:
    k1e: tuple[float, ...]                    # selected value per channel
    params: StateSpaceParams                  # fitted model at the selected k1e
    scores: tuple[tuple[float, ...], ...]     # per channel: loglik per grid candidate
    channel_fits: tuple                       # per channel: EM result of the winner


def fit_k1e_grid(series: VitalSignSeries, protocol: InfusionProtocol,
                 base_rates: CompartmentRates, grid: Sequence[float],
                 em_config=None, seed: int = 0) -> GridFitResult:
    """Per-channel 1-D grid search on k1e, maximizing filtered log-likelihood.

    For each candidate the PK/PD model's free parameters (Q, R, eta, mu1,
    Sigma1) are fitted by restricted EM with A, B, C held at their
    physiological values. Ties break toward the smaller k1e (first
    occurrence for identical candidates).
    """
    from .learning import EMConfig, init_pkpd_params, run_em

    grid = [float(g) for g in grid]
    if not grid:
        raise ConfigurationError("k1e grid must be non-empty")
    if any(g <= 0 for g in grid):
        raise ConfigurationError("all k1e candidates must be positive")
    if em_config is None:
        em_config = EMConfig(max_iterations=10, bfgs_evals_early=100,
                             bfgs_evals_late=50)
    em_config = replace(em_config, update_linear=False, update_C=False)

    chosen: list[float] = []
    all_scores: list[tuple[float, ...]] = []
    winners = []
    for ch in range(series.d_y):
        ch_series = VitalSignSeries(
            dt=series.dt,
            channel_names=(series.channel_names[ch],),
            values=series.values[:, [ch]],
            mask=series.mask[:, [ch]],
        )
        best = None
        scores: list[float] = []
        for gi, cand in enumerate(grid):
            rates = replace(base_rates, k1e=(cand,))
            init = init_pkpd_params(rates, ch_series, seed=seed)
            res = run_em(ch_series, protocol, init, em_config)
            ll = max(res.loglik_trace)
            scores.append(ll)
            better = best is None or ll > best[0] or (ll == best[0] and cand < best[1])
            if better:
                best = (ll, cand, gi, res)
        chosen.append(best[1])
        all_scores.append(tuple(scores))
        winners.append(best[3])

    rates = replace(base_rates, k1e=tuple(chosen))
    # Assemble the multi-channel model from the per-channel winning fits.
    n = series.d_y
    Q = np.zeros((4 * n, 4 * n))
    R = np.zeros((n, n))
    mu1 = np.zeros(4 * n)
    Sigma1 = np.zeros((4 * n, 4 * n))
    eta = []
    for ch, res in enumerate(winners):
        p = res.params
        sl = slice(4 * ch, 4 * ch + 4)
        Q[sl, sl] = p.Q
        R[ch, ch] = p.R[0, 0]
        mu1[sl] = p.mu1
        Sigma1[sl, sl] = p.Sigma1
        eta.append(p.eta[0] if p.eta is not None else None)
    eta_t = None if any(e is None for e in eta) else tuple(eta)
    params = pkpd_as_nlds(rates, series.dt, eta_t, Q, R, mu1, Sigma1)
    return GridFitResult(k1e=tuple(chosen), params=params,
                         scores=tuple(all_scores), channel_fits=tuple(winners))
