"""Matrix files, layer-stack directories and run reports.

Three matrix formats are supported:

``rawbin``
    ``b"RSCM"``, ``u32`` version (1), ``u64`` n, ``u64`` d, then ``n*d``
    little-endian float64 values in row-major order. Files are exactly
    ``24 + 8*n*d`` bytes.
``npy``
    NPY format version 1.0, 2-D, C order, float32 or float64.
``csv``
    Numeric cells with an optional single header row.
"""
from __future__ import annotations

import csv
import json
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

__all__ = [
    "MatrixFormatError",
    "load_matrix",
    "save_matrix",
    "load_stack",
    "RunReport",
    "schema_path",
    "FORMATS",
]

MAGIC = b"RSCM"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")
FORMATS = ("csv", "rawbin", "npy")
_EXT = {".csv": "csv", ".rawbin": "rawbin", ".rsb": "rawbin", ".bin": "rawbin", ".npy": "npy"}


class MatrixFormatError(ValueError):
    """Malformed or unreadable matrix file."""


def _format_of(path, fmt):
    if fmt is not None:
        if fmt not in FORMATS:
            raise ValueError(f"unknown matrix format {fmt!r}; expected one of {FORMATS}")
        return fmt
    ext = Path(path).suffix.lower()
    if ext not in _EXT:
        raise MatrixFormatError(f"{path}: cannot infer format from extension {ext!r}")
    return _EXT[ext]


def _check_finite(arr, path):
    bad = ~np.isfinite(arr)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MatrixFormatError(f"{path}: non-finite value at row {i}, column {j}")
    return arr


def _read_rawbin(path):
    data = Path(path).read_bytes()
    if len(data) < HEADER.size:
        raise MatrixFormatError(f"{path}: file is {len(data)} bytes, shorter than the {HEADER.size}-byte header")
    magic, version, n, d = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise MatrixFormatError(f"{path}: unsupported rawbin version {version}")
    expected = HEADER.size + 8 * n * d
    if len(data) != expected:
        raise MatrixFormatError(
            f"{path}: expected {expected} bytes for a {n}x{d} matrix, found {len(data)}")
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(n, d).astype(np.float64)


def _write_rawbin(path, X):
    n, d = X.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, n, d))
        fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())


def _read_npy(path):
    fmt = np.lib.format
    with open(path, "rb") as fh:
        try:
            version = fmt.read_magic(fh)
        except ValueError as exc:
            raise MatrixFormatError(f"{path}: {exc}") from exc
        if version != (1, 0):
            raise MatrixFormatError(f"{path}: NPY version {version[0]}.{version[1]} not supported, need 1.0")
        try:
            shape, fortran, dtype = fmt.read_array_header_1_0(fh)
        except ValueError as exc:
            raise MatrixFormatError(f"{path}: malformed NPY header: {exc}") from exc
        if len(shape) != 2:
            raise MatrixFormatError(f"{path}: expected a 2-D array, got shape {shape}")
        if fortran:
            raise MatrixFormatError(f"{path}: Fortran-ordered arrays are not supported")
        if dtype not in (np.dtype("<f4"), np.dtype("<f8"), np.dtype(">f4"), np.dtype(">f8")):
            raise MatrixFormatError(f"{path}: dtype {dtype} not supported, need float32 or float64")
        count = shape[0] * shape[1]
        raw = fh.read()
    if len(raw) != count * dtype.itemsize:
        raise MatrixFormatError(
            f"{path}: expected {count * dtype.itemsize} payload bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(np.float64)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise MatrixFormatError(f"{path}: empty csv")
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    width = len(rows[0])
    values = []
    for line, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise MatrixFormatError(f"{path}: line {line} has {len(row)} columns, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise MatrixFormatError(f"{path}: line {line}: {exc}") from exc
    if not values:
        raise MatrixFormatError(f"{path}: no data rows")
    return np.array(values, dtype=np.float64)


def load_matrix(path, format: str | None = None) -> np.ndarray:
    """Read a 2-D float64 matrix; the format defaults to the file extension."""
    fmt = _format_of(path, format)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{path}: no such file")
    reader = {"rawbin": _read_rawbin, "npy": _read_npy, "csv": _read_csv}[fmt]
    return _check_finite(reader(path), path)


def save_matrix(path, X, format: str | None = None) -> None:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    _check_finite(X, path)
    fmt = _format_of(path, format)
    if fmt == "rawbin":
        _write_rawbin(path, X)
    elif fmt == "npy":
        with open(path, "wb") as fh:
            np.lib.format.write_array(fh, np.ascontiguousarray(X), version=(1, 0))
    else:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row in X:
                w.writerow([repr(float(v)) for v in row])


_LAYER = re.compile(r"^layer_(\d+)\.(csv|npy|rawbin|rsb|bin)$")


def load_stack(directory, pattern: str | None = None) -> list[np.ndarray]:
    """Load ``layer_<i>.<ext>`` files ordered by index.

    Indices must be contiguous from 0 or from 1. `pattern` is an optional
    regex with one integer group replacing the default file-name pattern.
    """
    rx = re.compile(pattern) if pattern else _LAYER
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    found = {}
    for p in d.iterdir():
        m = rx.match(p.name)
        if m:
            i = int(m.group(1))
            if i in found:
                raise MatrixFormatError(f"{directory}: duplicate layer index {i}")
            found[i] = p
    if not found:
        raise MatrixFormatError(f"{directory}: no layer files found")
    lo = min(found)
    if lo not in (0, 1):
        raise MatrixFormatError(f"{directory}: layer indices must start at 0 or 1, found {lo}")
    missing = [i for i in range(lo, max(found) + 1) if i not in found]
    if missing:
        raise MatrixFormatError(f"{directory}: missing layer index {missing[0]}")
    layers = [load_matrix(found[i]) for i in sorted(found)]
    sizes = [L.shape[0] for L in layers]
    if len(set(sizes)) > 1:
        raise MatrixFormatError(f"{directory}: ragged layer stack, sample counts {sizes}")
    return layers


def schema_path() -> Path:
    return Path(__file__).with_name("schemas") / "run_report.schema.json"


@dataclass
class RunReport:
    """One calibration run as a JSON-serializable record.

    ``wall_clock_seconds`` is the only field that varies between identical runs.
    """

    kind: str  # 'scalar' or 'aggregate'
    inputs: dict
    metric: dict
    K: int
    alpha: float
    seed: int
    result: dict
    wall_clock_seconds: float = 0.0
    version: str = field(default=__version__)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "version": self.version,
            "inputs": self.inputs,
            "metric": self.metric,
            "K": self.K,
            "alpha": self.alpha,
            "seed": self.seed,
            "result": self.result,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunReport":
        return cls(kind=doc["kind"], inputs=doc["inputs"], metric=doc["metric"], K=doc["K"],
                   alpha=doc["alpha"], seed=doc["seed"], result=doc["result"],
                   wall_clock_seconds=doc["wall_clock_seconds"], version=doc["version"])

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def body(self) -> dict:
        """Report without the wall-clock field, for reproducibility checks."""
        doc = self.to_dict()
        doc.pop("wall_clock_seconds")
        return doc

    def to_csv(self) -> str:
        """Flattened ``field,value`` rows; vectors become ``name[i]`` rows."""
        rows = [("kind", self.kind), ("version", self.version), ("metric", self.metric["name"]),
                ("K", self.K), ("alpha", self.alpha), ("seed", self.seed)]
        for key, val in self.result.items():
            if isinstance(val, list) and val and isinstance(val[0], list):
                rows += [(f"{key}[{i}][{j}]", v) for i, r in enumerate(val) for j, v in enumerate(r)]
            elif isinstance(val, list):
                rows += [(f"{key}[{i}]", v) for i, v in enumerate(val)]
            else:
                rows.append((key, "" if val is None else val))
        buf = []
        for k, v in rows:
            buf.append(f"{k},{repr(v) if isinstance(v, float) else v}")
        return "\r\n".join(["field,value"] + buf) + "\r\n"
