"""Model records, manifests, and on-disk persistence.

Parameter blobs are raw little-endian float64 files, one per record; the
manifest is a schema-versioned JSON document whose serialization is
canonical (sorted keys, fixed separators) so write-read-write round-trips
byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nncore import ArchSpec, ContractError, ParamVector
from .tasks import TaskSpec

__all__ = ["RegularizerSpec", "ModelRecord", "ZooManifest", "derive_seed",
           "MANIFEST_FORMAT_VERSION"]

MANIFEST_FORMAT_VERSION = 1


def derive_seed(config_seed: int, *parts) -> int:
    """Deterministic per-job seed; avoids collisions across grid points/generations."""
    key = ":".join([str(config_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"          # none | ewc | kld
    weight: float = 0.0
    fisher_samples: int = 256   # ewc
    teacher_id: str = ""        # kld
    temperature: float = 1.0    # kld

    def __post_init__(self):
        if self.kind not in ("none", "ewc", "kld"):
            raise ContractError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "kld" and self.temperature <= 0:
            raise ContractError("kld temperature must be positive")
        if self.kind == "kld" and not self.teacher_id:
            raise ContractError("kld regularizer requires a teacher id")
        if self.kind == "ewc" and self.weight < 0:
            raise ContractError("ewc weight must be non-negative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weight": self.weight,
                "fisher_samples": self.fisher_samples,
                "teacher_id": self.teacher_id, "temperature": self.temperature}

    @classmethod
    def from_dict(cls, d: dict) -> "RegularizerSpec":
        return cls(**d)


@dataclass
class ModelRecord:
    id: str
    arch: ArchSpec
    params: ParamVector
    generation: int
    parent_id: str | None
    tuning: dict
    test_accuracy: float

    def __post_init__(self):
        if self.generation < 1:
            raise ContractError("generation must be >= 1")
        if (self.generation == 1) != (self.parent_id is None):
            raise ContractError("generation 1 records have no parent_id and vice versa")
        if not (0.0 <= self.test_accuracy <= 1.0):
            raise ContractError("test_accuracy must be in [0, 1]")

    def meta_dict(self, blob_path: str) -> dict:
        return {
            "id": self.id,
            "arch": self.arch.to_dict(),
            "generation": self.generation,
            "parent_id": self.parent_id,
            "tuning": self.tuning,
            "test_accuracy": self.test_accuracy,
            "blob_path": blob_path,
            "layout": [[e.name, list(e.shape)] for e in self.params.layout],
        }


class ZooManifest:
    def __init__(self, tasks: dict[str, TaskSpec], records: list[ModelRecord],
                 config_seed: int, warnings: list[str] | None = None):
        self.tasks = tasks
        self.records = records
        self.config_seed = config_seed
        self.warnings = list(warnings or [])
        self._by_id = {r.id: r for r in records}
        self._validate_lineage()

    def _validate_lineage(self) -> None:
        for rec in self.records:
            seen = set()
            cur = rec
            while cur.parent_id is not None:
                if cur.parent_id in seen:
                    raise ContractError(f"lineage cycle at {cur.parent_id}")
                seen.add(cur.id)
                if cur.parent_id not in self._by_id:
                    raise ContractError(
                        f"record {cur.id} references unknown parent {cur.parent_id}")
                cur = self._by_id[cur.parent_id]
            if cur.generation != 1:
                raise ContractError(
                    f"lineage of {rec.id} does not terminate at generation 1")

    def record(self, record_id: str) -> ModelRecord:
        if record_id not in self._by_id:
            raise KeyError(record_id)
        return self._by_id[record_id]

    def by_generation(self, generation: int) -> list[ModelRecord]:
        return [r for r in self.records if r.generation == generation]

    def ancestor_at(self, record: ModelRecord, generation: int) -> ModelRecord | None:
        """Walk the parent chain up to the requested generation."""
        cur = record
        while cur.generation > generation and cur.parent_id is not None:
            cur = self._by_id[cur.parent_id]
        return cur if cur.generation == generation else None

    @property
    def generations(self) -> list[int]:
        return sorted({r.generation for r in self.records})

    # -- persistence -------------------------------------------------------

    def save(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        blob_dir = out_dir / "blobs"
        blob_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for rec in self.records:
            blob_rel = f"blobs/{rec.id}.f64"
            rec.params.values.astype("<f8").tofile(out_dir / blob_rel)
            entries.append(rec.meta_dict(blob_rel))
        doc = {
            "format_version": MANIFEST_FORMAT_VERSION,
            "config_seed": self.config_seed,
            "tasks": {name: t.to_dict() for name, t in self.tasks.items()},
            "records": entries,
            "warnings": self.warnings,
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":"),
                                   indent=1) + "\n")
        return path

    @classmethod
    def load(cls, manifest_path: str | Path) -> "ZooManifest":
        manifest_path = Path(manifest_path)
        if manifest_path.is_dir():
            manifest_path = manifest_path / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        if doc.get("format_version") != MANIFEST_FORMAT_VERSION:
            raise ContractError(
                f"unsupported manifest format version {doc.get('format_version')}")
        base = manifest_path.parent
        records = []
        for entry in doc["records"]:
            arch = ArchSpec.from_dict(entry["arch"])
            values = np.fromfile(base / entry["blob_path"], dtype="<f8")
            blocks = []
            offset = 0
            for name, shape in entry["layout"]:
                size = int(np.prod(shape)) if shape else 1
                blocks.append((name, values[offset:offset + size].reshape(shape)))
                offset += size
            params = ParamVector.from_blocks(blocks)
            records.append(ModelRecord(
                id=entry["id"], arch=arch, params=params,
                generation=entry["generation"], parent_id=entry["parent_id"],
                tuning=entry["tuning"], test_accuracy=entry["test_accuracy"]))
        tasks = {name: TaskSpec.from_dict(t) for name, t in doc["tasks"].items()}
        return cls(tasks=tasks, records=records, config_seed=doc["config_seed"],
                   warnings=doc.get("warnings", []))
