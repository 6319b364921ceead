"""Loading dialogue-structure records, embedding bundles and synthetic dataset directories.

Dialogue records look like::

    {"causal_type": "Chain_III",
     "clause": {"1": "...", "2": "...", "3": "...", "4": "..."},
     "dia_id": 1,
     "label": {"1": "0,0,0,0", "2": "1,0,0,0", "3": "0,1,0,0", "4": "0,1,1,0"}}

Keys are 1-indexed; label row ``i`` marks the utterances that cause
utterance ``i``. Internally everything is 0-indexed with
``adjacency[i, j] = 1`` meaning ``j -> i``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .scm import CausalGraph, Dataset, Sample
from .tensor import load_tensor, save_tensor

__all__ = [
    "SchemaError",
    "BindingError",
    "DatasetFormatError",
    "STRUCTURE_TYPES",
    "structure_id",
    "CausalogueRecord",
    "parse_record",
    "load_causalogue",
    "EmbeddingBundle",
    "bind_embeddings",
    "save_synthetic",
    "load_synthetic",
]

N_CLAUSES = 4
SCHEMA_VERSION = 1

STRUCTURE_TYPES = (
    "Chain_I",
    "Chain_II",
    "Chain_III",
    "Chain_IV",
    "Fork_I",
    "Fork_II",
    "Fork_III",
    "Fork_IV",
    "Hybrid_I",
    "Hybrid_II",
)


class SchemaError(ValueError):
    """A record does not follow the dialogue schema. ``dia_id`` names the record when known."""

    def __init__(self, msg: str, dia_id=None):
        super().__init__(f"record {dia_id}: {msg}" if dia_id is not None else msg)
        self.dia_id = dia_id


class BindingError(KeyError):
    def __init__(self, msg: str, keys=()):
        super().__init__(msg)
        self.keys = list(keys)

    def __str__(self) -> str:
        return self.args[0]


class DatasetFormatError(OSError):
    pass


def structure_id(causal_type: str) -> int:
    """Index into :data:`STRUCTURE_TYPES`; ``"Other"`` maps to -1."""
    if causal_type == "Other":
        return -1
    try:
        return STRUCTURE_TYPES.index(causal_type)
    except ValueError:
        raise SchemaError(f"unknown causal_type {causal_type!r}") from None


@dataclass(frozen=True, eq=False)
class CausalogueRecord:
    causal_type: str
    clauses: tuple[str, ...]
    dia_id: int
    label: tuple[str, ...]
    adjacency: np.ndarray

    @property
    def key(self) -> str:
        return str(self.dia_id)

    @property
    def n_vars(self) -> int:
        return len(self.clauses)

    @property
    def structure_id(self) -> int:
        return structure_id(self.causal_type)


def _indexed(mapping, what: str, dia_id) -> list:
    """``{"1": a, "2": b, ...}`` -> ``[a, b, ...]``, requiring keys 1..n exactly."""
    if not isinstance(mapping, Mapping):
        raise SchemaError(f"{what} must be an object keyed by position", dia_id)
    try:
        keys = sorted(int(k) for k in mapping)
    except (TypeError, ValueError):
        raise SchemaError(f"{what} keys must be integers, got {sorted(mapping)}", dia_id) from None
    if keys != list(range(1, len(keys) + 1)):
        raise SchemaError(f"{what} keys must run 1..{len(keys)}, got {keys}", dia_id)
    return [mapping[str(k)] if str(k) in mapping else mapping[k] for k in keys]


def _label_row(text, n: int, row: int, dia_id) -> np.ndarray:
    if not isinstance(text, str):
        raise SchemaError(f"label row {row + 1} must be a string", dia_id)
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != n or any(p not in ("0", "1") for p in parts):
        raise SchemaError(f"label row {row + 1} {text!r} is not {n} comma-separated 0/1 values", dia_id)
    return np.array([int(p) for p in parts], dtype=np.float64)


def parse_record(obj) -> CausalogueRecord:
    """Validate one raw JSON object; raises :class:`SchemaError` on any defect."""
    if not isinstance(obj, Mapping):
        raise SchemaError("record must be a JSON object")
    dia_id = obj.get("dia_id")
    if isinstance(dia_id, bool) or not isinstance(dia_id, int):
        raise SchemaError(f"dia_id must be an integer, got {dia_id!r}")
    causal_type = obj.get("causal_type")
    if not isinstance(causal_type, str):
        raise SchemaError("causal_type must be a string", dia_id)
    try:
        structure_id(causal_type)
    except SchemaError as exc:
        raise SchemaError(str(exc), dia_id) from None
    raw_clauses = obj.get("clause", obj.get("clauses"))
    clauses = _indexed(raw_clauses, "clause", dia_id)
    if len(clauses) != N_CLAUSES:
        raise SchemaError(f"expected {N_CLAUSES} clauses, got {len(clauses)}", dia_id)
    if not all(isinstance(c, str) for c in clauses):
        raise SchemaError("clauses must be strings", dia_id)
    rows = _indexed(obj.get("label"), "label", dia_id)
    if len(rows) != N_CLAUSES:
        raise SchemaError(f"expected {N_CLAUSES} label rows, got {len(rows)}", dia_id)
    adj = np.stack([_label_row(r, N_CLAUSES, i, dia_id) for i, r in enumerate(rows)])
    if np.any(np.triu(adj) != 0):
        i, j = np.argwhere(np.triu(adj) != 0)[0]
        if i == j:
            raise SchemaError(f"label marks utterance {i + 1} as its own cause", dia_id)
        raise SchemaError(f"label marks utterance {j + 1} as a cause of earlier utterance {i + 1}", dia_id)
    adj.setflags(write=False)
    return CausalogueRecord(
        causal_type=causal_type,
        clauses=tuple(clauses),
        dia_id=dia_id,
        label=tuple(rows),
        adjacency=adj,
    )


def load_causalogue(path) -> list[CausalogueRecord]:
    """Read a JSON array of records or one record per line."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from exc
    else:
        raw = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                raw.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    records = [parse_record(r) for r in raw]
    seen: set[int] = set()
    for r in records:
        if r.dia_id in seen:
            raise SchemaError("duplicate dia_id", r.dia_id)
        seen.add(r.dia_id)
    return records


class EmbeddingBundle:
    """Per-sample ``N x D`` feature matrices keyed by sample id (``<key>.idt`` on disk)."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self.tensors = {str(k): np.asarray(v, dtype=np.float64) for k, v in (tensors or {}).items()}

    def __contains__(self, key) -> bool:
        return str(key) in self.tensors

    def __getitem__(self, key) -> np.ndarray:
        return self.tensors[str(key)]

    def __len__(self) -> int:
        return len(self.tensors)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for key, x in sorted(self.tensors.items()):
            save_tensor(d / f"{key}.idt", x)

    @classmethod
    def load(cls, directory) -> "EmbeddingBundle":
        d = Path(directory)
        if not d.is_dir():
            raise DatasetFormatError(f"{d}: not a directory")
        return cls({p.stem: load_tensor(p) for p in sorted(d.glob("*.idt"))})


def bind_embeddings(records: Iterable, bundle: EmbeddingBundle) -> Dataset:
    """One Sample per record: features from ``bundle[record.key]``, labels as ground truth.

    Works for any record type exposing ``key``, ``adjacency`` and
    ``structure_id``, so variable-length sequences bind the same way.
    """
    records = list(records)
    missing = [r.key for r in records if r.key not in bundle]
    if missing:
        raise BindingError(f"no embedding for ids {missing}", missing)
    samples = []
    for r in records:
        x = bundle[r.key]
        if x.ndim != 2 or x.shape[0] != r.adjacency.shape[0]:
            raise BindingError(
                f"id {r.key}: embedding shape {x.shape} does not have {r.adjacency.shape[0]} rows", [r.key]
            )
        samples.append(
            Sample(
                x=x,
                structure_id=r.structure_id,
                ground_truth=CausalGraph.from_adjacency(r.adjacency),
                meta={"key": r.key},
            )
        )
    return Dataset(samples, {"source": "bound embeddings"})


# ---------------------------------------------------------------------------
# synthetic dataset directories


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tolist(a):
    return None if a is None else np.asarray(a).tolist()


def save_synthetic(dataset: Dataset, directory) -> Path:
    """Write ``manifest.json`` plus one ``sample_XXXXX.idt`` per sample.

    Each tensor file stacks ``[x, C, E]`` (or just the parts present) as a
    ``P x N x D`` tensor; graph strengths and confounder values live in the
    manifest. JSON floats round-trip exactly, so loading and saving again
    reproduces every byte.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(dataset):
        parts = ["x"] + [p for p in ("confounding", "noise") if getattr(s, p) is not None]
        fname = f"sample_{i:05d}.idt"
        save_tensor(d / fname, np.stack([getattr(s, p) for p in parts]))
        gt = s.ground_truth
        entries.append(
            {
                "file": fname,
                "sha256": _sha256(d / fname),
                "parts": parts,
                "structure_id": s.structure_id,
                "n": s.n_vars,
                "d": s.dim,
                "k": None if s.confounders is None else int(np.asarray(s.confounders).shape[0]),
                "strengths": None if gt is None else _tolist(gt.strengths),
                "adjacency": None if gt is None else _tolist(gt.adjacency),
                "confounders": _tolist(s.confounders),
                "meta": s.meta,
            }
        )
    manifest = {"schema_version": SCHEMA_VERSION, "metadata": dataset.metadata, "samples": entries}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def load_synthetic(directory) -> Dataset:
    d = Path(directory)
    mpath = d / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise DatasetFormatError(f"{d}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{mpath}: invalid JSON: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(f"{mpath}: unsupported schema_version {manifest.get('schema_version')!r}")
    samples = []
    for e in manifest["samples"]:
        path = d / e["file"]
        if not path.exists():
            raise DatasetFormatError(f"{path}: listed in manifest but missing")
        if _sha256(path) != e["sha256"]:
            raise DatasetFormatError(f"{path}: checksum mismatch")
        stack = load_tensor(path)
        expected = (len(e["parts"]), e["n"], e["d"])
        if stack.ndim != 3 or stack.shape != expected:
            raise DatasetFormatError(f"{path}: shape {stack.shape}, manifest says {expected}")
        parts = dict(zip(e["parts"], stack))
        gt = None
        if e["strengths"] is not None:
            gt = CausalGraph(strengths=np.array(e["strengths"]), adjacency=np.array(e["adjacency"]))
        samples.append(
            Sample(
                x=parts["x"],
                structure_id=e["structure_id"],
                ground_truth=gt,
                confounding=parts.get("confounding"),
                noise=parts.get("noise"),
                confounders=None if e["confounders"] is None else np.array(e["confounders"]),
                meta=e.get("meta", {}),
            )
        )
    return Dataset(samples, manifest.get("metadata", {}))
