"""Directory-backed document store for fitted model records.

Records are immutable after creation; writes are atomic
(write-temp-then-rename) so concurrent readers never see partial files.
"""
from __future__ import annotations

import json
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from .core import StateSpaceParams


@dataclass(frozen=True)
class ModelRecord:
    id: str
    family: str                     # "io-nlds" | "pkpd"
    params: StateSpaceParams
    fit_report: dict
    created_at: float

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "id": self.id,
            "family": self.family,
            "params": self.params.to_dict(),
            "fit_report": self.fit_report,
            "created_at": self.created_at,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelRecord":
        return ModelRecord(id=d["id"], family=d["family"],
                           params=StateSpaceParams.from_dict(d["params"]),
                           fit_report=d.get("fit_report", {}),
                           created_at=float(d.get("created_at", 0.0)))


class ModelStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, model_id: str) -> Path:
        return self.root / f"model_{model_id}.json"

    def new_id(self) -> str:
        return uuid.uuid4().hex[:12]

    def put(self, record: ModelRecord) -> None:
        path = self._path(record.id)
        if path.exists():
            raise FileExistsError(f"model {record.id} already stored")
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record.to_dict(), sort_keys=True, indent=1))
        os.replace(tmp, path)

    def get(self, model_id: str) -> ModelRecord | None:
        path = self._path(model_id)
        if not path.exists():
            return None
        return ModelRecord.from_dict(json.loads(path.read_text()))

    def list_ids(self) -> list[str]:
        return sorted(p.stem.removeprefix("model_")
                      for p in self.root.glob("model_*.json"))

    def create(self, family: str, params: StateSpaceParams,
               fit_report: dict) -> ModelRecord:
        rec = ModelRecord(id=self.new_id(), family=family, params=params,
                          fit_report=fit_report, created_at=time.time())
        self.put(rec)
        return rec
