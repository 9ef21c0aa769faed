"""Point-cloud files and flat key=value configuration files.

Formats
-------
csv
    One point per line, coordinates as comma-separated decimals.
raw_f64
    Little-endian header of two uint64 values (n, D) followed by n*D float64
    values in row-major order.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import InconsistentWidth, IoError, ParseError
from .point_index import PointCloud

FORMATS = ("csv", "raw_f64")
_HEADER = struct.Struct("<QQ")


def guess_format(path) -> str:
    return "raw_f64" if str(path).endswith((".f64", ".bin", ".raw")) else "csv"


def read_points(path, fmt: str | None = None) -> np.ndarray:
    fmt = fmt or guess_format(path)
    if fmt not in FORMATS:
        raise ValueError(f"unknown point format {fmt!r}")
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if fmt == "raw_f64":
        return _parse_raw(data)
    return _parse_csv(data.decode("utf-8"))


def _parse_csv(text: str) -> np.ndarray:
    rows, width = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise InconsistentWidth(lineno, width, len(fields))
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    if not rows:
        raise ParseError(1, "no points in file")
    return np.array(rows, dtype=float)


def _parse_raw(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise ParseError(0, "raw_f64 file shorter than its header")
    n, D = _HEADER.unpack_from(data)
    body = data[_HEADER.size:]
    if len(body) != 8 * n * D:
        raise ParseError(0, f"header announces {n}x{D} values but body holds {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(n, D).astype(float)


def load_cloud(path, fmt: str | None = None) -> PointCloud:
    return PointCloud(read_points(path, fmt))


def save_cloud(path, points, fmt: str | None = None) -> None:
    P = np.atleast_2d(np.asarray(points.points if isinstance(points, PointCloud) else points, dtype=float))
    fmt = fmt or guess_format(path)
    try:
        if fmt == "raw_f64":
            with open(path, "wb") as fh:
                fh.write(_HEADER.pack(*P.shape))
                fh.write(np.ascontiguousarray(P, dtype="<f8").tobytes())
        elif fmt == "csv":
            with open(path, "w") as fh:
                fh.write(format_csv(P))
        else:
            raise ValueError(f"unknown point format {fmt!r}")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def format_csv(rows) -> str:
    # repr round-trips float64 exactly
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in rows)


def parse_vector(text: str) -> np.ndarray:
    """'1.5,2,-3' -> array([1.5, 2., -3.])"""
    try:
        return np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError as exc:
        raise ParseError(1, f"bad vector {text!r}: {exc}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(lineno, f"expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(lineno, "empty key")
        out[key] = value
    return out
