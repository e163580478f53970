"""PLY (ASCII / binary little-endian) and CSV point cloud I/O.

Written files always use the canonical layout::

    ply
    format {ascii|binary_little_endian} 1.0
    element vertex N
    property double x
    property double y
    property double z
    [property double intensity]
    [property uchar semantic]
    [property uint instance]
    end_header

The reader accepts any scalar property types, ignores unknown properties and
skips elements declared after ``vertex``.
"""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path
from typing import Literal, Union

import numpy as np

from .cloud import PointCloud, SemanticLabel
from .errors import IoFailure, MalformedHeader, NonFiniteCoordinate, UnknownLabelCode

Format = Literal["ply-ascii", "ply-binary-le", "csv"]
FORMATS = ("ply-ascii", "ply-binary-le", "csv")

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

PathLike = Union[str, Path]


def guess_format(path: PathLike) -> Format:
    """Pick a format from the file extension and, for PLY, the header."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return "csv"
    try:
        with open(path, "rb") as fh:
            head = fh.read(256)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if b"binary_little_endian" in head:
        return "ply-binary-le"
    return "ply-ascii"


def read_point_cloud(path: PathLike, format: Format | None = None) -> PointCloud:
    fmt = format or guess_format(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if fmt == "csv":
        columns = _read_csv(raw)
    elif fmt in ("ply-ascii", "ply-binary-le"):
        columns = _read_ply(raw, fmt)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return _build_cloud(columns)


def write_point_cloud(cloud: PointCloud, path: PathLike, format: Format | None = None) -> None:
    cloud.validate()
    fmt = format or ("csv" if Path(path).suffix.lower() == ".csv" else "ply-binary-le")
    names = ["x", "y", "z"]
    if cloud.intensity is not None:
        names.append("intensity")
    if cloud.semantic is not None:
        names.append("semantic")
    if cloud.instance is not None:
        names.append("instance")
    if fmt == "csv":
        payload = _format_csv(cloud, names)
    elif fmt == "ply-ascii":
        payload = _ply_header(cloud, names, "ascii") + _format_rows(cloud, names, " ")
    elif fmt == "ply-binary-le":
        payload = _ply_header(cloud, names, "binary_little_endian") + _binary_body(cloud, names)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# --- reading ---------------------------------------------------------------


def _read_ply(raw: bytes, fmt: str) -> dict:
    marker = raw.find(b"end_header")
    if not raw.startswith(b"ply") or marker < 0:
        raise MalformedHeader("missing 'ply' magic or 'end_header'")
    body_start = raw.find(b"\n", marker)
    body_start = len(raw) if body_start < 0 else body_start + 1
    lines = raw[:marker].decode("ascii", errors="replace").splitlines()[1:]

    file_format = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in lines:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) != 3:
                raise MalformedHeader(f"bad format line: {line!r}")
            file_format = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise MalformedHeader(f"bad element line: {line!r}")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            elif len(parts) == 3 and parts[1] in _PLY_TYPES:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
            else:
                raise MalformedHeader(f"bad property line: {line!r}")
        else:
            raise MalformedHeader(f"unexpected header line: {line!r}")

    expected = {"ply-ascii": "ascii", "ply-binary-le": "binary_little_endian"}[fmt]
    if file_format != expected:
        raise MalformedHeader(f"expected format {expected}, header says {file_format}")
    if not elements or elements[0][0] != "vertex":
        raise MalformedHeader("the first element must be 'vertex'")
    _, count, props = elements[0]
    if any(kind == "list" for _, kind in props):
        raise MalformedHeader("list properties on vertex are not supported")
    names = [name for name, _ in props]
    for axis in "xyz":
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks property {axis!r}")

    body = raw[body_start:]
    if fmt == "ply-binary-le":
        dtype = np.dtype([(name, "<" + kind) for name, kind in props])
        if len(body) < dtype.itemsize * count:
            raise MalformedHeader(f"body too short for {count} vertices")
        table = np.frombuffer(body, dtype=dtype, count=count)
        return {name: table[name] for name in names}

    text_lines = body.decode("ascii", errors="replace").splitlines()
    rows = [ln.split() for ln in text_lines if ln.strip()][:count]
    if len(rows) < count:
        raise MalformedHeader(f"expected {count} vertex rows, found {len(rows)}")
    width = len(props)
    for i, row in enumerate(rows):
        if len(row) < width:
            raise MalformedHeader(f"vertex row {i} has {len(row)} values, expected {width}")
    columns = {}
    for k, (name, kind) in enumerate(props):
        values = [row[k] for row in rows]
        columns[name] = _parse_column(values, np.dtype(kind))
    return columns


def _read_csv(raw: bytes) -> dict:
    text = raw.decode("utf-8")
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedHeader("empty CSV file") from None
    for axis in "xyz":
        if axis not in header:
            raise MalformedHeader(f"CSV header lacks column {axis!r}")
    rows = [row for row in reader if row]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise MalformedHeader(f"CSV row {i} has {len(row)} fields, header has {len(header)}")
    columns = {}
    for k, name in enumerate(header):
        if name in ("x", "y", "z", "intensity"):
            columns[name] = _parse_column([r[k] for r in rows], np.dtype("f8"))
        elif name in ("semantic", "instance"):
            columns[name] = _parse_column([r[k] for r in rows], np.dtype("i8"))
    return columns


def _parse_column(values: list[str], dtype: np.dtype) -> np.ndarray:
    try:
        if dtype.kind == "f":
            return np.array([float(v) for v in values], dtype=np.float64)
        return np.array([int(v) for v in values], dtype=np.int64)
    except ValueError as exc:
        raise MalformedHeader(f"unparsable value: {exc}") from exc


def _build_cloud(columns: dict) -> PointCloud:
    xyz = np.column_stack([np.asarray(columns[a], dtype=np.float64) for a in "xyz"])
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        raise NonFiniteCoordinate(int(np.flatnonzero(bad)[0]))
    semantic = columns.get("semantic")
    if semantic is not None:
        semantic = np.asarray(semantic, dtype=np.int64)
        unknown = (semantic < 0) | (semantic > max(SemanticLabel))
        if unknown.any():
            i = int(np.flatnonzero(unknown)[0])
            raise UnknownLabelCode(int(semantic[i]), i)
    instance = columns.get("instance")
    if instance is not None:
        instance = np.asarray(instance, dtype=np.int64)
        if instance.size and (instance.min() < 0 or instance.max() > np.iinfo(np.uint32).max):
            raise MalformedHeader("instance ids must fit in uint32")
    intensity = columns.get("intensity")
    cloud = PointCloud(
        xyz,
        intensity=None if intensity is None else np.asarray(intensity, dtype=np.float64),
        semantic=semantic,
        instance=instance,
    )
    cloud.validate()
    return cloud


# --- writing ---------------------------------------------------------------

_PLY_DECL = {"x": "double", "y": "double", "z": "double", "intensity": "double",
             "semantic": "uchar", "instance": "uint"}
_BIN_DTYPE = {"x": "<f8", "y": "<f8", "z": "<f8", "intensity": "<f8",
              "semantic": "u1", "instance": "<u4"}


def _columns_of(cloud: PointCloud, names: list[str]) -> list[np.ndarray]:
    lookup = {"x": cloud.xyz[:, 0], "y": cloud.xyz[:, 1], "z": cloud.xyz[:, 2],
              "intensity": cloud.intensity, "semantic": cloud.semantic,
              "instance": cloud.instance}
    return [lookup[n] for n in names]


def _ply_header(cloud: PointCloud, names: list[str], fmt: str) -> bytes:
    lines = ["ply", f"format {fmt} 1.0", f"element vertex {len(cloud)}"]
    lines += [f"property {_PLY_DECL[n]} {n}" for n in names]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def _format_rows(cloud: PointCloud, names: list[str], sep: str) -> bytes:
    formatted = []
    for name, col in zip(names, _columns_of(cloud, names)):
        if col.dtype.kind == "f":
            formatted.append([format(v, ".17g") for v in col.tolist()])
        else:
            formatted.append([str(v) for v in col.tolist()])
    out = [sep.join(row) for row in zip(*formatted)]
    return ("".join(line + "\n" for line in out)).encode("ascii")


def _format_csv(cloud: PointCloud, names: list[str]) -> bytes:
    return (",".join(names) + "\n").encode("ascii") + _format_rows(cloud, names, ",")


def _binary_body(cloud: PointCloud, names: list[str]) -> bytes:
    dtype = np.dtype([(n, _BIN_DTYPE[n]) for n in names])
    table = np.empty(len(cloud), dtype=dtype)
    for name, col in zip(names, _columns_of(cloud, names)):
        table[name] = col
    return table.tobytes()
