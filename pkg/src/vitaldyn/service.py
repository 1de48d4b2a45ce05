"""HTTP service: simulate, asynchronous fits, model store, forecasting and
what-if protocol exploration.

Responses echo a config hash of the parameters they were computed from so a
client can reproduce any number via the CLI.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .core import InfusionProtocol, VitalSignSeries
from .evaluation import config_hash
from .inference import free_run, h_step_predict, run_filter
from .learning import EMConfig, default_init, run_em
from .pkpd import CompartmentRates, fit_k1e_grid
from .store import ModelStore
from .synth import (GeneratorSpec, MissingSpec, ProtocolTemplate, make_cohort,
                    make_protocol, sample_trajectory)

log = logging.getLogger(__name__)


# ------------------------------------------------------------
# Wire schemas (schema_version 1)
# ------------------------------------------------------------

class TemplateBody(BaseModel):
    pattern: list[float]
    block_minutes: float = 15.0
    dt: float = 15.0


class SimulateBody(BaseModel):
    schema_version: int = 1
    seed: int
    template: Optional[TemplateBody] = None
    n_patients: Optional[int] = Field(default=None, ge=1)
    generator_spec: Optional[dict] = None


class SeriesBody(BaseModel):
    dt: float
    channel_names: list[str]
    values: list[list[float]]
    mask: Optional[list[list[bool]]] = None


class ProtocolBody(BaseModel):
    dt: float
    rates: list[float]


class FitBody(BaseModel):
    schema_version: int = 1
    family: str = "io-nlds"
    series: SeriesBody
    protocol: ProtocolBody
    seed: int = 0
    d_x: int = 4
    em: Optional[dict] = None
    pkpd_rates: Optional[dict] = None
    k1e_grid: Optional[list[float]] = None


class ForecastBody(BaseModel):
    schema_version: int = 1
    protocol: ProtocolBody
    horizon: str = "free"          # "free" or an integer as string
    series: Optional[SeriesBody] = None


class WhatIfBody(BaseModel):
    schema_version: int = 1
    protocol: ProtocolBody
    thresholds: dict[str, float] = Field(default_factory=dict)
    horizon: int = Field(ge=1)
    channel_names: Optional[list[str]] = None


def _series_from_body(body: SeriesBody) -> VitalSignSeries:
    values = np.asarray(body.values, dtype=float)
    mask = (np.ones_like(values, dtype=bool) if body.mask is None
            else np.asarray(body.mask, dtype=bool))
    return VitalSignSeries(dt=body.dt, channel_names=tuple(body.channel_names),
                           values=values, mask=mask)


def _protocol_from_body(body: ProtocolBody) -> InfusionProtocol:
    return InfusionProtocol(dt=body.dt, rates=np.asarray(body.rates, dtype=float))


class JobManager:
    """Bounded worker pool; job state is persisted next to the model store."""

    def __init__(self, store: ModelStore, max_workers: int | None = None):
        self.store = store
        self.pool = ThreadPoolExecutor(max_workers=max_workers or os.cpu_count() or 2)
        self.lock = threading.Lock()

    def _path(self, job_id: str) -> Path:
        return self.store.root / f"job_{job_id}.json"

    def _write(self, job: dict) -> None:
        tmp = self._path(job["id"]).with_suffix(".tmp")
        tmp.write_text(json.dumps(job, sort_keys=True))
        os.replace(tmp, self._path(job["id"]))

    def get(self, job_id: str) -> dict | None:
        path = self._path(job_id)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def submit(self, body: FitBody) -> str:
        job_id = self.store.new_id()
        job = {"id": job_id, "status": "queued", "iteration": 0, "model_id": None,
               "error": None}
        self._write(job)
        self.pool.submit(self._run, job_id, body)
        return job_id

    def _run(self, job_id: str, body: FitBody) -> None:
        job = self.get(job_id)
        job["status"] = "running"
        self._write(job)

        def progress(it: int, _params) -> None:
            with self.lock:
                j = self.get(job_id)
                j["iteration"] = it
                self._write(j)

        try:
            series = _series_from_body(body.series)
            protocol = _protocol_from_body(body.protocol)
            em = EMConfig(**body.em) if body.em else EMConfig(max_iterations=25)
            if body.family == "pkpd":
                if body.pkpd_rates is None:
                    raise ValueError("pkpd fits require pkpd_rates")
                rates = CompartmentRates.from_dict(body.pkpd_rates)
                grid = body.k1e_grid or list(np.geomspace(0.01, 10.0, 50))
                fit = fit_k1e_grid(series, protocol, rates, grid, em,
                                   seed=body.seed)
                params = fit.params
                report = {"k1e": list(fit.k1e),
                          "grid_scores": [list(s) for s in fit.scores]}
            elif body.family == "io-nlds":
                init = default_init(series, protocol, body.d_x, seed=body.seed)
                res = run_em(series, protocol, init, em, progress=progress)
                params = res.params
                report = res.to_report()
            else:
                raise ValueError(f"unknown family: {body.family}")
            rec = self.store.create(body.family, params, report)
            with self.lock:
                job = self.get(job_id)
                job.update(status="done", model_id=rec.id)
                self._write(job)
        except Exception as exc:
            log.exception("fit job %s failed", job_id)
            with self.lock:
                job = self.get(job_id)
                job.update(status="failed", error=str(exc))
                self._write(job)


def create_app(store_dir: str | Path, max_workers: int | None = None,
               static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="vitaldyn")
    try:
        store = ModelStore(store_dir)
    except OSError as exc:
        raise RuntimeError(f"store unavailable: {exc}") from exc
    jobs = JobManager(store, max_workers)
    app.state.store = store
    app.state.jobs = jobs

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    def _store_ok():
        if not store.root.is_dir():
            raise HTTPException(status_code=503, detail="model store unavailable")

    @app.post("/simulate")
    def simulate(body: SimulateBody):
        template = ProtocolTemplate(tuple(body.template.pattern),
                                    body.template.block_minutes,
                                    body.template.dt) if body.template else None
        if body.n_patients:
            spec = (GeneratorSpec.from_dict(body.generator_spec)
                    if body.generator_spec else GeneratorSpec())
            records = make_cohort(body.n_patients, body.seed, spec)
            patients = []
            for i, rec in enumerate(records):
                patients.append({
                    "id": f"patient_{i:03d}",
                    "protocol": rec.protocol.rates[:, 0].tolist(),
                    "values": rec.series.values.tolist(),
                    "mask": rec.series.mask.tolist(),
                })
            return {"schema_version": 1, "dt": spec.dt,
                    "channels": list(spec.channels), "patients": patients,
                    "config_hash": config_hash(spec.to_dict())}
        if template is None:
            raise HTTPException(status_code=400,
                                detail="template required for single trajectory")
        spec = (GeneratorSpec.from_dict(body.generator_spec)
                if body.generator_spec else GeneratorSpec())
        protocol = make_protocol(template)
        records = make_cohort(1, body.seed,
                              GeneratorSpec.from_dict({**spec.to_dict(),
                                                       "templates": [list(template.pattern)],
                                                       "block_minutes": template.block_minutes,
                                                       "dt": template.dt}))
        rec = records[0]
        return {"schema_version": 1, "dt": template.dt,
                "channels": list(spec.channels),
                "protocol": rec.protocol.rates[:, 0].tolist(),
                "values": rec.series.values.tolist(),
                "mask": rec.series.mask.tolist(),
                "config_hash": config_hash(spec.to_dict())}

    @app.post("/fits", status_code=202)
    def start_fit(body: FitBody):
        _store_ok()
        job_id = jobs.submit(body)
        return {"schema_version": 1, "job_id": job_id}

    @app.get("/fits/{job_id}")
    def get_fit(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        out = {"schema_version": 1, "status": job["status"],
               "iteration": job["iteration"], "error": job["error"]}
        if job["status"] == "done":
            rec = store.get(job["model_id"])
            out["model"] = rec.to_dict()
        return out

    @app.post("/fits/{job_id}")
    def modify_fit(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        raise HTTPException(status_code=409, detail="job already finalized"
                            if job["status"] in ("done", "failed")
                            else "job in progress; modification unsupported")

    @app.get("/models")
    def list_models():
        _store_ok()
        return {"schema_version": 1, "models": store.list_ids()}

    def _get_record(model_id: str):
        _store_ok()
        rec = store.get(model_id)
        if rec is None:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id}")
        return rec

    @app.get("/models/{model_id}")
    def get_model(model_id: str):
        return _get_record(model_id).to_dict()

    @app.post("/models/{model_id}/forecast")
    def forecast(model_id: str, body: ForecastBody):
        rec = _get_record(model_id)
        params = rec.params
        protocol = _protocol_from_body(body.protocol)
        if body.horizon == "free":
            fr = free_run(params, protocol, protocol.T)
            targets = list(range(protocol.T))
            means, variances = fr.means, fr.variances
        else:
            try:
                h = int(body.horizon)
            except ValueError:
                raise HTTPException(status_code=400,
                                    detail=f"bad horizon: {body.horizon}")
            if body.series is None:
                raise HTTPException(status_code=400,
                                    detail="h-step forecasts require observations")
            series = _series_from_body(body.series)
            filt = run_filter(params, protocol, series)
            t_idx, means, variances = h_step_predict(params, filt, protocol, h)
            targets = t_idx.tolist()
        return {"schema_version": 1, "targets": targets,
                "means": means.tolist(), "variances": variances.tolist(),
                "config_hash": config_hash(params.to_dict())}

    @app.post("/models/{model_id}/whatif")
    def whatif(model_id: str, body: WhatIfBody):
        rec = _get_record(model_id)
        params = rec.params
        protocol = _protocol_from_body(body.protocol)
        T = min(body.horizon, protocol.T)
        fr = free_run(params, protocol, T)
        sd = np.sqrt(np.maximum(fr.variances, 0.0))
        lower = (fr.means - 1.96 * sd).tolist()
        upper = (fr.means + 1.96 * sd).tolist()
        names = (body.channel_names or
                 [f"ch{j}" for j in range(params.d_y)])
        crossings = {}
        for name, thr in body.thresholds.items():
            if name not in names:
                raise HTTPException(status_code=400,
                                    detail=f"unknown channel: {name}")
            j = names.index(name)
            side0 = fr.means[0, j] - thr
            idx = None
            for t in range(1, T):
                if (fr.means[t, j] - thr) * side0 < 0:
                    idx = t
                    break
            crossings[name] = idx
        return {"schema_version": 1, "channels": names,
                "targets": list(range(T)),
                "means": fr.means.tolist(), "variances": fr.variances.tolist(),
                "band_lower": lower, "band_upper": upper,
                "threshold_crossings": crossings,
                "config_hash": config_hash(params.to_dict())}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="ui")
    return app
