"""Command-line interface: simulate, fit, predict, evaluate, serve.

All flags can also come from a single JSON config file (--config); explicit
flags win over file values. Store directory, port and log level fall back to
the VITALDYN_STORE / VITALDYN_PORT / VITALDYN_LOG_LEVEL environment
variables.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .core import StateSpaceParams
from .evaluation import ModelsConfig, compare_models
from .learning import EMConfig, default_init, run_em
from .pkpd import CompartmentRates, fit_k1e_grid
from .inference import free_run, h_step_predict, run_filter
from .synth import (GeneratorSpec, make_cohort, read_cohort, read_patient_csv,
                    write_cohort)


def _fail(message: str) -> None:
    """Single-line machine-parsable error on stderr, then nonzero exit."""
    click.echo(json.dumps({"error": message}), err=True)
    sys.exit(1)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _em_config(d: dict | None) -> EMConfig:
    return EMConfig(**d) if d else EMConfig(max_iterations=25)


@click.group()
@click.option("--log-level", envvar="VITALDYN_LOG_LEVEL", default="WARNING")
def main(log_level: str) -> None:
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.WARNING))


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None,
              help="JSON: {n_patients, generator_spec{...}}")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def simulate(spec_path, seed, out_dir):
    """Write a synthetic cohort (CSV per patient + manifest)."""
    try:
        spec_doc = _load_config(spec_path)
        n = int(spec_doc.get("n_patients", 10))
        gspec = GeneratorSpec.from_dict(spec_doc.get("generator_spec", {}))
        records = make_cohort(n, seed, gspec)
        manifest = write_cohort(records, out_dir, seed, gspec)
        click.echo(str(manifest))
    except Exception as exc:
        _fail(f"simulate failed: {exc}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--family", type=click.Choice(["io-nlds", "pkpd"]), default="io-nlds")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def fit(data_dir, family, config_path, out_dir):
    """Per-patient EM fits; writes one ModelRecord JSON per patient."""
    try:
        cfg = _load_config(config_path)
        _, patients = read_cohort(data_dir)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        seed = int(cfg.get("seed", 0))
        em = _em_config(cfg.get("em"))
        for idx, (pid, series, protocol) in enumerate(patients):
            if family == "io-nlds":
                init = default_init(series, protocol, int(cfg.get("d_x", 4)),
                                    seed=seed + 1000 * idx)
                res = run_em(series, protocol, init, em)
                params, report = res.params, res.to_report()
            else:
                if "pkpd_rates" not in cfg:
                    _fail("pkpd fits need pkpd_rates in --config")
                rates = CompartmentRates.from_dict(cfg["pkpd_rates"])
                grid = cfg.get("k1e_grid") or np.geomspace(0.01, 10.0, 50).tolist()
                gf = fit_k1e_grid(series, protocol, rates, grid, em,
                                  seed=seed + 1000 * idx)
                params = gf.params
                report = {"k1e": list(gf.k1e),
                          "grid_scores": [list(s) for s in gf.scores]}
            record = {"schema_version": 1, "id": pid, "family": family,
                      "params": params.to_dict(), "fit_report": report}
            (out / f"{pid}_{family}.json").write_text(
                json.dumps(record, sort_keys=True, indent=1))
        click.echo(str(out))
    except SystemExit:
        raise
    except Exception as exc:
        _fail(f"fit failed: {exc}")


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--protocol", "protocol_path", type=click.Path(exists=True), required=True)
@click.option("--horizon", default="free", help="step count or 'free'")
@click.option("--out", "out_path", type=click.Path(), required=True)
def predict(model_path, protocol_path, horizon, out_path):
    """Prediction means and variances as CSV."""
    try:
        record = json.loads(Path(model_path).read_text())
        params = StateSpaceParams.from_dict(record["params"])
        series, protocol = read_patient_csv(protocol_path, dt=params.dt)
        if horizon == "free":
            fr = free_run(params, protocol, protocol.T)
            targets = np.arange(protocol.T)
            means, variances = fr.means, fr.variances
        else:
            h = int(horizon)
            filt = run_filter(params, protocol, series)
            targets, means, variances = h_step_predict(params, filt, protocol, h)
        with open(out_path, "w") as fh:
            cols = [f"mean_{j}" for j in range(params.d_y)] + \
                   [f"var_{j}" for j in range(params.d_y)]
            fh.write(",".join(["t_index", *cols]) + "\n")
            for i, t in enumerate(targets):
                vals = [repr(float(v)) for v in (*means[i], *variances[i])]
                fh.write(",".join([str(int(t)), *vals]) + "\n")
        click.echo(str(out_path))
    except Exception as exc:
        _fail(f"predict failed: {exc}")


@main.command()
@click.option("--cohort", "cohort_dir", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", type=click.Path(), required=True)
def evaluate(cohort_dir, config_path, out_path):
    """Full two-model comparison; JSON report + Table-1-style text table."""
    try:
        cfg = _load_config(config_path)
        _, patients = read_cohort(cohort_dir)
        rates = (CompartmentRates.from_dict(cfg["pkpd_rates"])
                 if "pkpd_rates" in cfg else None)
        mc = ModelsConfig(
            nlds_em=_em_config(cfg.get("nlds_em")),
            nlds_d_x=int(cfg.get("nlds_d_x", 4)),
            pkpd_rates=rates,
            pkpd_grid=tuple(cfg.get("pkpd_grid", (0.1, 0.45, 2.0))),
            pkpd_em=_em_config(cfg.get("pkpd_em")) if cfg.get("pkpd_em")
            else EMConfig(max_iterations=8, bfgs_evals_early=80,
                          bfgs_evals_late=50, bfgs_early_iters=2),
            seed=int(cfg.get("seed", 0)),
        )
        report = compare_models(patients, mc)
        out = Path(out_path)
        out.write_text(report.to_json())
        table = report.format_table()
        out.with_suffix(".txt").write_text(table)
        click.echo(table)
    except Exception as exc:
        _fail(f"evaluate failed: {exc}")


@main.command()
@click.option("--port", type=int, envvar="VITALDYN_PORT", default=8000)
@click.option("--store", "store_dir", type=click.Path(), envvar="VITALDYN_STORE",
              required=True)
@click.option("--workers", type=int, default=None, help="fit worker pool size")
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="directory with the built UI")
def serve(port, store_dir, workers, static_dir):
    """Start the HTTP service."""
    try:
        import uvicorn

        from .service import create_app
        app = create_app(store_dir, max_workers=workers, static_dir=static_dir)
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    except Exception as exc:
        _fail(f"serve failed: {exc}")


if __name__ == "__main__":
    main()
