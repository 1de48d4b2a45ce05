"""Synthetic infusion protocols and vital-sign cohorts.

Everything is a pure function of (inputs, seed); per-patient streams are
split from the cohort seed via SeedSequence spawning so cohorts are
bit-reproducible across machines.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .core import (GeneralizedLogistic, InfusionProtocol, StateSpaceParams,
                   VitalSignSeries, spectral_radius)

DEFAULT_CHANNELS = ("BPsys", "BPdia", "BIS")

# Clinical-looking asymptote windows per default channel.
_CHANNEL_BOUNDS = {
    "BPsys": (80.0, 150.0),
    "BPdia": (45.0, 95.0),
    "BIS": (15.0, 98.0),
}


@dataclass(frozen=True)
class ProtocolTemplate:
    """Ordered target concentration levels, one block per level."""
    pattern: tuple[float, ...]
    block_minutes: float = 15.0
    dt: float = 15.0

    def __post_init__(self) -> None:
        pattern = tuple(float(p) for p in self.pattern)
        if not pattern:
            raise ValueError("pattern must be non-empty")
        if any(p < 0 for p in pattern):
            raise ValueError("target levels must be non-negative")
        object.__setattr__(self, "pattern", pattern)


def make_protocol(template: ProtocolTemplate, k_bolus: float = 10.0,
                  k_maint: float = 1.0) -> InfusionProtocol:
    """Convert target concentrations to infusion rates.

    Bolus+maintenance rule: at each upward level change the first dt step
    carries an extra k_bolus * delta_target on top of the maintenance rate
    k_maint * target; downward changes get no (negative) bolus since pumps
    cannot withdraw drug.
    """
    steps_per_block = int(round(template.block_minutes * 60.0 / template.dt))
    rates = np.empty(len(template.pattern) * steps_per_block)
    prev = 0.0
    for i, target in enumerate(template.pattern):
        block = slice(i * steps_per_block, (i + 1) * steps_per_block)
        rates[block] = k_maint * target
        delta = target - prev
        if delta > 0:
            rates[i * steps_per_block] += k_bolus * delta
        prev = target
    return InfusionProtocol(dt=template.dt, rates=rates)


@dataclass(frozen=True)
class MissingSpec:
    """Which cells to mask in a generated series."""
    drop_channels: tuple[str, ...] = ()
    missing_prob: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "drop_channels", tuple(self.drop_channels))
        if not 0.0 <= self.missing_prob < 1.0:
            raise ValueError("missing_prob must be in [0, 1)")


def sample_trajectory(params: StateSpaceParams, protocol: InfusionProtocol,
                      seed: int, missing: MissingSpec = MissingSpec(),
                      channel_names=DEFAULT_CHANNELS,
                      drift: np.ndarray | None = None) -> VitalSignSeries:
    """Ancestral sampling of the generative model.

    drift, if given (T x d_y), is added to the observation means; used by the
    misspecification cohort to make the data nonstationary. The mask stream
    is split from the value stream so missingness does not perturb values.
    """
    ss = np.random.SeedSequence(seed)
    val_ss, mask_ss = ss.spawn(2)
    rng = np.random.default_rng(val_ss)
    T = protocol.T
    d_x, d_y = params.d_x, params.d_y
    chol_S1 = _safe_chol(params.Sigma1)
    chol_Q = np.sqrt(np.diag(params.Q))
    chol_R = np.sqrt(np.diag(params.R))
    x = params.mu1 + chol_S1 @ rng.standard_normal(d_x)
    values = np.empty((T, d_y))
    for t in range(T):
        if t > 0:
            x = params.A @ x + params.B @ protocol.rates[t] \
                + chol_Q * rng.standard_normal(d_x)
        y = params.observe(params.C @ x) + chol_R * rng.standard_normal(d_y)
        values[t] = y
    if drift is not None:
        values = values + drift
    names = tuple(channel_names[:d_y])
    mask = np.ones((T, d_y), dtype=bool)
    mask_rng = np.random.default_rng(mask_ss)
    if missing.missing_prob > 0:
        mask &= mask_rng.random((T, d_y)) >= missing.missing_prob
    for ch in missing.drop_channels:
        if ch in names:
            mask[:, names.index(ch)] = False
    return VitalSignSeries(dt=protocol.dt, channel_names=names,
                           values=values, mask=mask)


def _safe_chol(S: np.ndarray) -> np.ndarray:
    if not np.any(S):
        return np.zeros_like(S)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(S + 1e-12 * np.eye(S.shape[0]))


@dataclass(frozen=True)
class GeneratorSpec:
    """Documented perturbation ranges for cohort generation."""
    channels: tuple[str, ...] = DEFAULT_CHANNELS
    d_x: int = 4
    templates: tuple[tuple[float, ...], ...] = ((2.0, 5.0, 2.0), (5.0, 2.0, 5.0))
    block_minutes: float = 15.0
    dt: float = 15.0
    rho_range: tuple[float, float] = (0.88, 0.96)     # diagonal range of A
    input_gain: tuple[float, float] = (0.02, 0.08)    # |B| entry range
    noise_frac: float = 0.05      # obs noise sd as fraction of channel swing
    state_noise_frac: float = 0.02
    nonstationary: bool = False
    drift_frac: float = 0.0       # drift amplitude as fraction of channel swing
    missing: MissingSpec = field(default_factory=MissingSpec)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["missing"] = {"drop_channels": list(self.missing.drop_channels),
                        "missing_prob": self.missing.missing_prob}
        return d

    @staticmethod
    def from_dict(d: dict) -> "GeneratorSpec":
        d = dict(d)
        if "missing" in d:
            m = d["missing"]
            d["missing"] = MissingSpec(tuple(m.get("drop_channels", ())),
                                       float(m.get("missing_prob", 0.0)))
        for key in ("channels",):
            if key in d:
                d[key] = tuple(d[key])
        if "templates" in d:
            d["templates"] = tuple(tuple(t) for t in d["templates"])
        for key in ("rho_range", "input_gain"):
            if key in d:
                d[key] = tuple(d[key])
        return GeneratorSpec(**d)


def _draw_patient_params(spec: GeneratorSpec, protocol: InfusionProtocol,
                         rng: np.random.Generator) -> StateSpaceParams:
    """Random stable generator with logistic links scaled to the latent swing."""
    d_x = spec.d_x
    d_y = len(spec.channels)
    # Diagonal-dominant dynamics: smooth, decaying modes rather than the
    # strongly rotational behaviour of a dense random matrix.
    A = np.diag(rng.uniform(*spec.rho_range, size=d_x)) \
        + 0.02 * rng.standard_normal((d_x, d_x))
    rho = spectral_radius(A)
    if rho > spec.rho_range[1]:
        A *= spec.rho_range[1] / rho
    B = rng.uniform(*spec.input_gain, size=(d_x, protocol.d_u))
    C = rng.standard_normal((d_y, d_x))
    C /= np.linalg.norm(C, axis=1, keepdims=True)

    # Deterministic latent rollout to scale gamma and the noise levels.
    x = np.zeros(d_x)
    zs = np.empty((protocol.T, d_y))
    xs = np.empty((protocol.T, d_x))
    for t in range(protocol.T):
        if t > 0:
            x = A @ x + B @ protocol.rates[t]
        xs[t] = x
        zs[t] = C @ x
    eta = []
    swings = []
    for j, name in enumerate(spec.channels):
        lo, hi = _CHANNEL_BOUNDS.get(name, (0.0, 100.0))
        # Percentile span so bolus transients don't compress the link slope.
        span = np.percentile(zs[:, j], 97.5) - np.percentile(zs[:, j], 2.5)
        span = max(span, 1e-6)
        gamma = -3.0 / span * rng.uniform(0.8, 1.2)   # drug depresses the sign
        eta.append(GeneralizedLogistic(m=lo, M=hi, gamma=gamma,
                                       nu=rng.uniform(0.9, 1.1)))
        swings.append(hi - lo)
    x_scale = max(float(np.std(xs)), 1e-6)
    Q = (spec.state_noise_frac * x_scale) ** 2 * np.eye(d_x)
    R = np.diag([(spec.noise_frac * 0.25 * s) ** 2 for s in swings])
    return StateSpaceParams(A=A, B=B, C=C, Q=Q, R=R, mu1=np.zeros(d_x),
                            Sigma1=1e-4 * np.eye(d_x), eta=tuple(eta), dt=spec.dt)


@dataclass(frozen=True)
class PatientRecord:
    series: VitalSignSeries
    protocol: InfusionProtocol
    truth: StateSpaceParams
    template: tuple[float, ...]
    seed: int


def make_cohort(n_patients: int, seed: int,
                spec: GeneratorSpec = GeneratorSpec()) -> list[PatientRecord]:
    """Seeded cohort with pseudo-random 2-5-2 / 5-2-5 protocol assignment."""
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_patients)
    assign_rng = np.random.default_rng(root.spawn(1)[0])
    records = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        template = spec.templates[int(assign_rng.integers(len(spec.templates)))]
        protocol = make_protocol(ProtocolTemplate(template, spec.block_minutes, spec.dt))
        truth = _draw_patient_params(spec, protocol, rng)
        drift = None
        if spec.nonstationary and spec.drift_frac > 0:
            t = np.arange(protocol.T)
            drift = np.empty((protocol.T, truth.d_y))
            for j, p in enumerate(truth.eta):
                period = rng.uniform(0.5, 1.5) * protocol.T
                phase = rng.uniform(0, 2 * np.pi)
                amp = spec.drift_frac * (p.M - p.m)
                drift[:, j] = amp * np.sin(2 * np.pi * t / period + phase) \
                    + amp * (t / protocol.T) * rng.uniform(-1, 1)
        patient_seed = int(rng.integers(2 ** 31))
        series = sample_trajectory(truth, protocol, patient_seed, spec.missing,
                                   channel_names=spec.channels, drift=drift)
        records.append(PatientRecord(series=series, protocol=protocol,
                                     truth=truth, template=template,
                                     seed=patient_seed))
    return records


# ------------------------------------------------------------
# Cohort export / import
# ------------------------------------------------------------

def write_cohort(records: list[PatientRecord], out_dir: str | Path,
                 seed: int, spec: GeneratorSpec) -> Path:
    """One CSV per patient plus a manifest and ground-truth parameter files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(records):
        stem = f"patient_{i:03d}"
        csv_path = out / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_index", "u", *rec.series.channel_names])
            for t in range(rec.series.T):
                row = [t, repr(float(rec.protocol.rates[t, 0]))]
                for j in range(rec.series.d_y):
                    row.append(repr(float(rec.series.values[t, j]))
                               if rec.series.mask[t, j] else "")
                writer.writerow(row)
        truth_path = out / f"{stem}_truth.json"
        truth_path.write_text(json.dumps(rec.truth.to_dict(), sort_keys=True, indent=1))
        entries.append({"id": stem, "csv": csv_path.name, "truth": truth_path.name,
                        "template": list(rec.template), "seed": rec.seed})
    manifest = {
        "schema_version": 1,
        "seed": seed,
        "dt": spec.dt,
        "channels": list(spec.channels),
        "generator_spec": spec.to_dict(),
        "patients": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return out / "manifest.json"


def read_cohort(cohort_dir: str | Path):
    """Returns (manifest dict, list of (patient id, series, protocol))."""
    cohort_dir = Path(cohort_dir)
    manifest = json.loads((cohort_dir / "manifest.json").read_text())
    dt = float(manifest["dt"])
    out = []
    for entry in manifest["patients"]:
        series, protocol = read_patient_csv(cohort_dir / entry["csv"], dt)
        out.append((entry["id"], series, protocol))
    return manifest, out


def read_patient_csv(path: str | Path, dt: float):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    channels = tuple(header[2:])
    body = rows[1:]
    T = len(body)
    u = np.empty((T, 1))
    values = np.zeros((T, len(channels)))
    mask = np.zeros((T, len(channels)), dtype=bool)
    for t, row in enumerate(body):
        u[t, 0] = float(row[1])
        for j, cell in enumerate(row[2:]):
            if cell != "":
                values[t, j] = float(cell)
                mask[t, j] = True
    series = VitalSignSeries(dt=dt, channel_names=channels, values=values, mask=mask)
    return series, InfusionProtocol(dt=dt, rates=u)
