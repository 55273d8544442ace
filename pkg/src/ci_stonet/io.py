"""CSV datasets, result tables and checkpoints.

Every CSV written here may start with one manifest row of the form
``# manifest: {json}``; readers skip lines starting with ``#``. Floats are
written with ``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .errors import CheckpointError, SchemaError
from .model import Dataset, StoNetModel, model_from_dict, model_to_dict
from .sghmc import TrainLog

CHECKPOINT_FORMAT = "ci-stonet-checkpoint"
CHECKPOINT_VERSION = 1
MANIFEST_PREFIX = "# manifest: "


# ---------------------------------------------------------------------------
# generic CSV
# ---------------------------------------------------------------------------


def manifest(config_hash: str = "", seed: Optional[int] = None, **extra) -> dict:
    out = {"artifact_version": __version__, "config_hash": config_hash, "seed": seed}
    out.update(extra)
    return out


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable], meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if meta is not None:
            fh.write(MANIFEST_PREFIX + json.dumps(meta, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_manifest(path) -> Optional[dict]:
    with Path(path).open() as fh:
        first = fh.readline()
    if first.startswith(MANIFEST_PREFIX):
        return json.loads(first[len(MANIFEST_PREFIX):])
    return None


def _read_rows(path) -> tuple[list, list]:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"no such file: {path}")
    with path.open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{path}: empty file") from None
    return [h.strip() for h in header], list(reader)


def _numeric_matrix(path, header, rows) -> np.ndarray:
    out = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise SchemaError(f"{path}: line {i}, column '{header[j]}' is empty")
            try:
                v = float(cell)
            except ValueError:
                raise SchemaError(f"{path}: line {i}, column '{header[j]}' is not numeric: '{cell}'") from None
            if not np.isfinite(v):
                raise SchemaError(f"{path}: line {i}, column '{header[j]}' is not finite")
            out[i - 2, j] = v
    return out


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSchema:
    """Expected column counts per role; ``None`` accepts any count (including zero for X)."""

    d_A: Optional[int] = None
    d_Y: Optional[int] = None
    d_X: Optional[int] = None


_ROLE = re.compile(r"^([ayx])_(\d+)$")


def dataset_header(data: Dataset) -> list:
    cols = [f"a_{j + 1}" for j in range(data.d_A)] + [f"y_{j + 1}" for j in range(data.d_Y)]
    return cols + [f"x_{j + 1}" for j in range(data.d_X)]


def write_dataset_csv(path, data: Dataset, meta: Optional[dict] = None) -> Path:
    parts = [data.A, data.Y] + ([data.X] if data.X is not None else [])
    return write_csv(path, dataset_header(data), np.hstack(parts).tolist(), meta)


def _roles(path, header) -> dict:
    roles = {"a": [], "y": [], "x": []}
    for col in header:
        m = _ROLE.match(col)
        if not m:
            raise SchemaError(f"{path}: column '{col}' is not of the form a_k, y_k or x_k")
        roles[m.group(1)].append(int(m.group(2)))
    order = [c for c in header]
    expected = [f"{r}_{k + 1}" for r in "ayx" for k in range(len(roles[r]))]
    if order != expected:
        raise SchemaError(f"{path}: columns must be a_1..a_k, y_1..y_k, x_1..x_k in order; got {order[:8]}...")
    return {r: len(v) for r, v in roles.items()}


def load_dataset_csv(path, schema: Optional[DatasetSchema] = None) -> Dataset:
    """Strict loader: rejects unknown columns, ragged rows, blank or non-finite cells."""
    header, rows = _read_rows(path)
    counts = _roles(path, header)
    schema = schema or DatasetSchema()
    if counts["a"] == 0:
        raise SchemaError(f"{path}: no treatment columns (a_1, ...)")
    if counts["y"] == 0:
        raise SchemaError(f"{path}: no outcome columns (y_1, ...)")
    for role, want in (("a", schema.d_A), ("y", schema.d_Y), ("x", schema.d_X)):
        if want is not None and counts[role] != want:
            raise SchemaError(f"{path}: expected {want} '{role}_' columns, found {counts[role]}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    M = _numeric_matrix(path, header, rows)
    a, y = counts["a"], counts["y"]
    X = M[:, a + y :] if counts["x"] else None
    return Dataset(M[:, :a].copy(), M[:, a : a + y].copy(), None if X is None else X.copy())


def truth_columns(data: Dataset) -> tuple[list, np.ndarray]:
    """Per-unit ground truth as (header, matrix); empty when the dataset has none."""
    t = data.truth or {}
    cols, blocks = [], []
    for key, prefix in (("cate", "cate"), ("propensity", "propensity"), ("marginal_effects", "me"), ("Z", "true_z")):
        v = t.get(key)
        if not isinstance(v, np.ndarray) or v.shape[0] != data.n:
            continue
        v = v.reshape(data.n, -1)
        if v.shape[1] == 1 and key in ("cate", "propensity"):
            cols.append(prefix)
        else:
            cols += [f"{prefix}_{j + 1}" for j in range(v.shape[1])]
        blocks.append(v)
    return cols, (np.hstack(blocks) if blocks else np.empty((data.n, 0)))


def write_truth_csv(path, data: Dataset, meta: Optional[dict] = None) -> Optional[Path]:
    cols, M = truth_columns(data)
    if not cols:
        return None
    return write_csv(path, cols, M.tolist(), meta)


def load_truth_csv(path) -> dict:
    header, rows = _read_rows(path)
    M = _numeric_matrix(path, header, rows)
    out = {}
    for key, prefix in (("cate", "cate"), ("propensity", "propensity"), ("marginal_effects", "me"), ("Z", "true_z")):
        idx = [i for i, h in enumerate(header) if h == prefix or h.startswith(prefix + "_")]
        if idx:
            block = M[:, idx]
            out[key] = block[:, 0] if key in ("cate", "propensity") else block
    return out


def write_generated(directory, gen, meta: Optional[dict] = None) -> dict:
    """Write ``{train,val,test}.csv``, matching ``*_truth.csv`` and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, part in gen.splits().items():
        paths[name] = write_dataset_csv(directory / f"{name}.csv", part, meta)
        write_truth_csv(directory / f"{name}_truth.csv", part, meta)
    info = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in gen.info.items()}
    for k, v in list(info.items()):
        if isinstance(v, (np.floating, np.integer)):
            info[k] = v.item()
    doc = {"manifest": meta or {}, "info": info}
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    return paths


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _payload_digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(model: StoNetModel, path, meta: Optional[dict] = None) -> Path:
    payload = {"model": model_to_dict(model), "meta": meta or {}}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sha256": _payload_digest(payload),
        "payload": payload,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def load_checkpoint(path, with_meta: bool = False):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt checkpoint ({err})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {doc.get('version')} (this build reads {CHECKPOINT_VERSION})")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or _payload_digest(payload) != doc.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch")
    try:
        model = model_from_dict(payload["model"])
    except (KeyError, TypeError, ValueError) as err:
        raise CheckpointError(f"{path}: malformed model record ({err})") from None
    return (model, payload.get("meta", {})) if with_meta else model


# ---------------------------------------------------------------------------
# logs
# ---------------------------------------------------------------------------


def write_train_log(path, log: TrainLog, meta: Optional[dict] = None) -> Path:
    return write_csv(path, TrainLog.CSV_HEADER, log.rows(), meta)
