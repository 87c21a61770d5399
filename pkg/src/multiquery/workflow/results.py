"""Portable result persistence: checksummed ``results.json`` plus CSV companions."""

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
RESULTS_NAME = "results.json"
SAMPLES_NAME = "samples.csv"
OUTPUTS_NAME = "outputs.csv"

_NONFINITE = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}


class ResultsError(RuntimeError):
    """Unreadable, corrupted or incompatible results file."""


@dataclass
class ResultArtifact:
    """Everything a run produced.

    Attributes:
        meta: Run metadata (config copy, seed, timestamps, version, counts).
        parameters: Parameter block as distribution specs.
        sample_names: Column names of ``samples``.
        samples: ``(n, d)`` evaluated inputs (design rows, particles, chain
            states or optimizer iterates, depending on the method).
        outputs: ``(n, m)`` outputs row-aligned with ``samples``.
        statuses: One status string per row.
        method_results: Method-specific results.
    """

    meta: dict
    parameters: dict
    sample_names: list
    samples: np.ndarray
    outputs: np.ndarray
    statuses: list
    method_results: dict = field(default_factory=dict)

    def payload(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta,
            "parameters": self.parameters,
            "sample_names": list(self.sample_names),
            "samples": np.asarray(self.samples, dtype=float),
            "outputs": np.asarray(self.outputs, dtype=float),
            "statuses": list(self.statuses),
            "method_results": self.method_results,
        }


def _float(x):
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def encode(obj):
    """JSON-ready form; arrays become tagged objects, non-finite floats strings."""
    if isinstance(obj, np.ndarray):
        if obj.dtype.kind in "fc":
            data = [_float(v) for v in obj.astype(float).ravel()]
        elif obj.dtype.kind in "iub":
            data = obj.ravel().tolist()
        else:
            data = [str(v) for v in obj.ravel()]
        return {"__ndarray__": data, "dtype": obj.dtype.kind, "shape": list(obj.shape)}
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else {"__float__": _float(x)}
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            kind, shape = obj["dtype"], tuple(obj["shape"])
            data = obj["__ndarray__"]
            if kind in "fc":
                arr = np.array([_NONFINITE[v] if isinstance(v, str) else v for v in data], dtype=float)
            elif kind == "b":
                arr = np.array(data, dtype=bool)
            elif kind in "iu":
                arr = np.array(data, dtype=np.int64)
            else:
                arr = np.array(data, dtype=str)
            return arr.reshape(shape)
        if set(obj) == {"__float__"}:
            return _NONFINITE[obj["__float__"]]
        return {k: decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    return obj


def _canonical(encoded):
    return json.dumps(encoded, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checksum(encoded):
    return hashlib.sha256(_canonical(encoded).encode("utf-8")).hexdigest()


def atomic_write_text(path, text):
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_results(artifact, directory):
    """Write ``results.json``, ``samples.csv`` and ``outputs.csv`` into ``directory``.

    Returns:
        Path of ``results.json``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    encoded = encode(artifact.payload())
    document = dict(encoded, checksum=checksum(encoded))
    samples = np.asarray(artifact.samples, dtype=float)
    outputs = np.asarray(artifact.outputs, dtype=float)
    atomic_write_text(directory / SAMPLES_NAME, csv_text(list(artifact.sample_names), samples.tolist()))
    out_header = [f"output_{j}" for j in range(outputs.shape[1])] + ["status"]
    out_rows = [[*map(float, row), s] for row, s in zip(outputs, artifact.statuses)]
    atomic_write_text(directory / OUTPUTS_NAME, csv_text(out_header, out_rows))
    target = directory / RESULTS_NAME
    atomic_write_text(target, json.dumps(document, sort_keys=True, indent=1, allow_nan=False) + "\n")
    return target


def read_results(path):
    """Read a results file written by :func:`write_results`.

    ``path`` may be the file or the directory holding it.

    Raises:
        ResultsError: "checksum mismatch" for corrupted or truncated files,
            or an unsupported schema version.
    """
    path = Path(path)
    if path.is_dir():
        path = path / RESULTS_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ResultsError(f"cannot read {path}: {exc}") from None
    try:
        document = json.loads(text)
    except json.JSONDecodeError:
        raise ResultsError(f"checksum mismatch: {path} is not a complete results file") from None
    if not isinstance(document, dict) or "checksum" not in document:
        raise ResultsError(f"checksum mismatch: {path} has no checksum")
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ResultsError(f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    recorded = document.pop("checksum")
    if checksum(document) != recorded:
        raise ResultsError(f"checksum mismatch: {path}")
    data = decode(document)
    return ResultArtifact(
        meta=data["meta"],
        parameters=data["parameters"],
        sample_names=data["sample_names"],
        samples=data["samples"],
        outputs=data["outputs"],
        statuses=data["statuses"],
        method_results=data["method_results"],
    )


def deep_equal(a, b):
    """Structural equality treating NaN as equal to NaN."""
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        if a.shape != b.shape:
            return False
        if a.dtype.kind in "fc" and b.dtype.kind in "fc":
            return bool(np.array_equal(a, b, equal_nan=True))
        return bool(np.array_equal(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(deep_equal(a[k], b[k]) for k in a)
    if isinstance(a, (list, tuple)) and isinstance(b, (list, tuple)):
        return len(a) == len(b) and all(deep_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


def artifacts_equal(a, b, ignore_meta=("started", "finished", "wall_time")):
    """Equality of two artifacts, ignoring run-time dependent metadata."""
    ma = {k: v for k, v in a.meta.items() if k not in ignore_meta}
    mb = {k: v for k, v in b.meta.items() if k not in ignore_meta}
    return (
        deep_equal(ma, mb)
        and deep_equal(a.parameters, b.parameters)
        and list(a.sample_names) == list(b.sample_names)
        and deep_equal(a.samples, b.samples)
        and deep_equal(a.outputs, b.outputs)
        and list(a.statuses) == list(b.statuses)
        and deep_equal(a.method_results, b.method_results)
    )
