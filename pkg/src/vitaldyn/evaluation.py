"""Model evaluation: SMSE, BIC, paired t-tests and the cohort comparison
harness that produces the two-model summary table.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .core import ConfigurationError, StateSpaceParams
from .inference import free_run, h_step_predict, run_filter
from .learning import EMConfig, default_init, run_em
from .pkpd import CompartmentRates, fit_k1e_grid

log = logging.getLogger(__name__)

HORIZONS = (1, 10, 20, "free")


def smse(predictions: np.ndarray, observations: np.ndarray,
         mask: np.ndarray | None = None) -> float:
    """Mean squared error over observed cells divided by their population
    variance (divisor N), so the frozen-mean predictor scores exactly 1."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    observations = np.asarray(observations, dtype=float).ravel()
    if mask is None:
        mask = np.ones_like(observations, dtype=bool)
    mask = np.asarray(mask, dtype=bool).ravel()
    if predictions.shape != observations.shape:
        raise ValueError("predictions and observations must have equal length")
    y = observations[mask]
    p = predictions[mask]
    if y.size < 2:
        raise ValueError("need at least 2 observed points")
    var = float(np.var(y))          # population variance, divisor N
    if var == 0.0:
        raise ValueError("observed signal has zero variance; SMSE undefined")
    return float(np.mean((p - y) ** 2)) / var


def bic(log_likelihood: float, b: int, N: int) -> float:
    """-2 ln L + b ln N; N counts observed scalar cells."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if b < 0:
        raise ValueError("b must be >= 0")
    return -2.0 * log_likelihood + b * float(np.log(N))


def count_params(params: StateSpaceParams, convention: str = "io-nlds") -> int:
    """Free-parameter count under the documented convention.

    io-nlds: mu1 + Sigma1 (symmetric) + A + B + C + diag Q + diag R + eta.
    pkpd: A, B, C are fixed by physiology; k1e (one per channel) is free.
    """
    d_x, d_u, d_y = params.d_x, params.d_u, params.d_y
    n_eta = 0 if params.eta is None else 4 * d_y
    base = d_x + d_x * (d_x + 1) // 2 + d_x + d_y + n_eta   # mu1, Sigma1, Q, R, eta
    if convention == "io-nlds":
        return base + d_x * d_x + d_x * d_u + d_y * d_x     # A, B, C
    if convention == "pkpd":
        return base + d_y                                   # k1e per channel
    raise ConfigurationError(f"unknown parameter-count convention: {convention}")


def paired_t_test(differences) -> tuple[float, int, float]:
    """Right-tailed paired t-test on per-patient SMSE differences.

    Returns (t, df, p_right); the p-value is evaluated through the
    regularized incomplete beta function.
    """
    d = np.asarray(differences, dtype=float)
    if d.size < 2:
        raise ValueError("need at least 2 paired differences")
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("zero variance in paired differences; t-test degenerate")
    n = d.size
    t = float(np.mean(d) / (sd / np.sqrt(n)))
    df = n - 1
    half = 0.5 * scipy.special.betainc(df / 2.0, 0.5, df / (df + t * t))
    p_right = half if t >= 0 else 1.0 - half
    return t, df, float(p_right)


# ------------------------------------------------------------
# Cohort comparison
# ------------------------------------------------------------

@dataclass(frozen=True)
class ModelsConfig:
    """Fit configuration for both arms of the comparison."""
    nlds_em: EMConfig = field(default_factory=lambda: EMConfig(max_iterations=25,
                                                               bfgs_evals_early=200,
                                                               bfgs_evals_late=100,
                                                               bfgs_early_iters=5))
    nlds_d_x: int = 4
    pkpd_rates: CompartmentRates | None = None
    pkpd_grid: tuple[float, ...] = (0.1, 0.45, 2.0)
    pkpd_em: EMConfig = field(default_factory=lambda: EMConfig(max_iterations=8,
                                                               bfgs_evals_early=80,
                                                               bfgs_evals_late=50,
                                                               bfgs_early_iters=2))
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "nlds_em": vars(self.nlds_em).copy(),
            "nlds_d_x": self.nlds_d_x,
            "pkpd_rates": None if self.pkpd_rates is None else self.pkpd_rates.to_dict(),
            "pkpd_grid": list(self.pkpd_grid),
            "pkpd_em": vars(self.pkpd_em).copy(),
            "seed": self.seed,
        }


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def horizon_predictions(params: StateSpaceParams, series, protocol, horizon):
    """(targets, means, variances) for one horizon; 'free' covers t = 1..T."""
    if horizon == "free":
        fr = free_run(params, protocol, series.T)
        return np.arange(series.T), fr.means, fr.variances
    filt = run_filter(params, protocol, series)
    return h_step_predict(params, filt, protocol, int(horizon))


def _predictive_loglik(means, variances, targets, series) -> tuple[float, int]:
    """Diagonal-Gaussian predictive log-likelihood over observed target cells."""
    y = series.values[targets]
    m = series.mask[targets]
    var = np.maximum(variances, 1e-12)
    ll = -0.5 * (np.log(2 * np.pi * var) + (y - means) ** 2 / var)
    return float(ll[m].sum()), int(m.sum())


@dataclass
class EvaluationReport:
    channels: tuple[str, ...]
    horizons: tuple
    smse_mean: dict          # model -> horizon key -> channel -> mean SMSE
    smse_per_patient: dict   # model -> horizon key -> channel -> [per patient]
    bic_mean: dict           # model -> horizon key -> mean per-patient BIC
    t_tests: dict            # horizon key -> channel -> {t, df, p_right}
    baseline_smse: dict      # horizon key -> channel -> mean-predictor SMSE
    metadata: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "channels": list(self.channels),
            "horizons": [str(h) for h in self.horizons],
            "smse_mean": self.smse_mean,
            "smse_per_patient": self.smse_per_patient,
            "bic_mean": self.bic_mean,
            "t_tests": self.t_tests,
            "baseline_smse": self.baseline_smse,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def format_table(self) -> str:
        """Aligned text table: models x horizons x {channels..., BIC}."""
        hkeys = [str(h) for h in self.horizons]
        hnames = {"1": "1-step", "10": "10-step", "20": "20-step", "free": "free-running"}
        cols = []
        for h in hkeys:
            for ch in self.channels:
                cols.append((h, ch))
            cols.append((h, "BIC"))
        width = 10
        lines = []
        header1 = "SMSE/BIC".ljust(12)
        for h in hkeys:
            span = (len(self.channels) + 1) * width
            header1 += ("| " + hnames.get(h, h + "-step")).ljust(span)
        lines.append(header1.rstrip())
        header2 = "".ljust(12)
        for h, ch in cols:
            label = {"BPsys": "BPs", "BPdia": "BPd"}.get(ch, ch)
            header2 += label.rjust(width)
        lines.append(header2)
        display = {"io-nlds": "IO-NLDS", "pkpd": "PK/PD", "baseline": "mean"}
        for model in self.smse_mean:
            row = display.get(model, model).ljust(12)
            for h, ch in cols:
                if ch == "BIC":
                    val = self.bic_mean.get(model, {}).get(h)
                    row += (f"{val:.0f}".rjust(width) if val is not None else "-".rjust(width))
                else:
                    val = self.smse_mean[model][h].get(ch)
                    row += (f"{val:.2f}".rjust(width) if val is not None else "-".rjust(width))
            lines.append(row)
        row = "mean".ljust(12)
        for h, ch in cols:
            if ch == "BIC":
                row += "-".rjust(width)
            else:
                row += f"{self.baseline_smse[h][ch]:.2f}".rjust(width)
        lines.append(row)
        return "\n".join(lines) + "\n"


def compare_models(cohort, config: ModelsConfig,
                   horizons=HORIZONS) -> EvaluationReport:
    """Fit both families per patient and compare them per Table-1 layout.

    cohort: list of (patient_id, series, protocol). Patients whose fit fails
    are excluded from aggregation with a logged count, never silently.
    """
    if not cohort:
        raise ConfigurationError("cohort must be non-empty")
    channels = cohort[0][1].channel_names
    hkeys = [str(h) for h in horizons]
    models = ["io-nlds"] + (["pkpd"] if config.pkpd_rates is not None else [])
    per_patient = {m: {h: {ch: [] for ch in channels} for h in hkeys} for m in models}
    bic_vals = {m: {h: [] for h in hkeys} for m in models}
    baseline = {h: {ch: [] for ch in channels} for h in hkeys}
    failures = []

    for idx, (pid, series, protocol) in enumerate(cohort):
        fits = {}
        try:
            init = default_init(series, protocol, config.nlds_d_x,
                                seed=config.seed + 1000 * idx)
            fits["io-nlds"] = run_em(series, protocol, init, config.nlds_em).params
            if config.pkpd_rates is not None:
                grid_fit = fit_k1e_grid(series, protocol, config.pkpd_rates,
                                        config.pkpd_grid, config.pkpd_em,
                                        seed=config.seed + 1000 * idx)
                fits["pkpd"] = grid_fit.params
        except Exception as exc:
            failures.append({"patient": pid, "error": str(exc)})
            log.warning("fit failed for patient %s: %s", pid, exc)
            continue

        for model, params in fits.items():
            b = count_params(params, "pkpd" if model == "pkpd" else "io-nlds")
            for h, hk in zip(horizons, hkeys):
                targets, means, variances = horizon_predictions(params, series,
                                                                protocol, h)
                y = series.values[targets]
                m = series.mask[targets]
                for j, ch in enumerate(channels):
                    obs = m[:, j]
                    if obs.sum() >= 2 and np.var(y[obs, j]) > 0:
                        per_patient[model][hk][ch].append(
                            smse(means[obs, j], y[obs, j]))
                ll, n_cells = _predictive_loglik(means, variances, targets, series)
                bic_vals[model][hk].append(bic(ll, b, max(n_cells, 1)))
        for h, hk in zip(horizons, hkeys):
            targets = (np.arange(series.T) if h == "free"
                       else np.arange(int(h), series.T))
            y = series.values[targets]
            m = series.mask[targets]
            for j, ch in enumerate(channels):
                obs = m[:, j]
                if obs.sum() >= 2 and np.var(y[obs, j]) > 0:
                    mean_pred = np.full(int(obs.sum()), y[obs, j].mean())
                    baseline[hk][ch].append(smse(mean_pred, y[obs, j]))

    smse_mean = {m: {h: {ch: (float(np.mean(v)) if v else None)
                         for ch, v in per_patient[m][h].items()}
                     for h in hkeys} for m in models}
    bic_mean = {m: {h: (float(np.mean(v)) if v else None)
                    for h, v in bic_vals[m].items()} for m in models}
    baseline_mean = {h: {ch: (float(np.mean(v)) if v else 1.0)
                         for ch, v in baseline[h].items()} for h in hkeys}
    t_tests: dict = {h: {} for h in hkeys}
    if "pkpd" in models:
        for h in hkeys:
            for ch in channels:
                a = per_patient["pkpd"][h][ch]
                bvals = per_patient["io-nlds"][h][ch]
                if len(a) == len(bvals) and len(a) >= 2:
                    diffs = np.array(a) - np.array(bvals)
                    try:
                        t, df, p = paired_t_test(diffs)
                        t_tests[h][ch] = {"t": t, "df": df, "p_right": p}
                    except ValueError:
                        t_tests[h][ch] = {"t": 0.0, "df": len(a) - 1, "p_right": 0.5}
    meta = {
        "n_patients": len(cohort),
        "failures": failures,
        "seed": config.seed,
        "config_hash": config_hash(config.to_dict()),
        "config": config.to_dict(),
    }
    return EvaluationReport(channels=channels, horizons=tuple(horizons),
                            smse_mean=smse_mean, smse_per_patient={
                                m: {h: {ch: list(map(float, v))
                                        for ch, v in per_patient[m][h].items()}
                                    for h in hkeys} for m in models},
                            bic_mean=bic_mean, t_tests=t_tests,
                            baseline_smse=baseline_mean, metadata=meta)
