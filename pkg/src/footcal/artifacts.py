"""Artifact files: atomic writes, schema headers, hashes and manifests.

Every CSV starts with ``# footcal-schema: <name>/<version>``; every JSON
document carries a top-level ``"schema"`` key. Floats are written with
``repr`` so they round-trip exactly, and JSON keys are sorted, which keeps
reruns byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_PREFIX = "# footcal-schema: "


class CorruptArtifactError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


def atomic_write(path, data: str | bytes) -> str:
    """Write via a temp file in the same directory and rename; returns the sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(raw).hexdigest()


def file_sha256(path) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(doc: dict) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, schema: str, doc: dict) -> str:
    return atomic_write(path, dumps_json({"schema": schema, **doc}))


def read_json(path, schema: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptArtifactError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("schema") != schema:
        found = doc.get("schema") if isinstance(doc, dict) else None
        raise CorruptArtifactError(f"{path}: expected schema {schema!r}, found {found!r}")
    return doc


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, schema: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"{SCHEMA_PREFIX}{schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return atomic_write(path, buf.getvalue())


def read_csv(path, schema: str, header: Sequence[str] | None = None) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(SCHEMA_PREFIX):
        raise CorruptArtifactError(f"{path}: missing schema header")
    found = lines[0][len(SCHEMA_PREFIX):].strip()
    if found != schema:
        raise CorruptArtifactError(f"{path}: expected schema {schema!r}, found {found!r}")
    rows = list(csv.reader(lines[1:]))
    if not rows:
        raise CorruptArtifactError(f"{path}: no column header")
    cols = rows[0]
    if header is not None and list(header) != cols:
        raise CorruptArtifactError(f"{path}: unexpected columns {cols}")
    body = rows[1:]
    if any(len(r) != len(cols) for r in body):
        raise CorruptArtifactError(f"{path}: ragged rows")
    return cols, body


def read_csv_array(path, schema: str, header: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    cols, body = read_csv(path, schema, header)
    try:
        arr = np.array(body, dtype=float).reshape(len(body), len(cols))
    except ValueError as exc:
        raise CorruptArtifactError(f"{path}: non-numeric cell ({exc})") from exc
    if not np.all(np.isfinite(arr)):
        raise CorruptArtifactError(f"{path}: non-finite value")
    return cols, arr


MANIFEST_SCHEMA = "footcal.manifest/1"


def write_manifest(out_dir, stage: str, inputs: dict[str, str], outputs: dict[str, str],
                   config_sha: str) -> str:
    """Record input and output hashes of one stage.

    ``inputs`` maps upstream manifest names to their hashes, so the chain
    leads back to the config.
    """
    path = Path(out_dir) / f"{stage}.manifest.json"
    return write_json(path, MANIFEST_SCHEMA, {
        "stage": stage,
        "config_sha256": config_sha,
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
    })


def read_manifest(out_dir, stage: str) -> dict:
    return read_json(Path(out_dir) / f"{stage}.manifest.json", MANIFEST_SCHEMA)


def verify_manifest(out_dir, stage: str) -> dict:
    """Re-hash the stage outputs; raises if any file changed since it was written."""
    man = read_manifest(out_dir, stage)
    for rel, sha in man["outputs"].items():
        if file_sha256(Path(out_dir) / rel) != sha:
            raise CorruptArtifactError(f"{rel} does not match the {stage} manifest")
    return man
