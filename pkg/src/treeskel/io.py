"""Reading and writing point clouds as ASCII PLY or CSV.

PLY layout: float properties x, y, z; optional uchar red/green/blue;
optional float nx/ny/nz; an int property ``source_id``; and one extra
property per scalar field (int for integer fields, float otherwise).
CSV uses a header row naming the same columns; x, y, z are mandatory.
All lengths are meters.
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud
from .errors import ParameterError, ParseError

_COORD_COLS = ("x", "y", "z")
_COLOR_COLS = ("red", "green", "blue")
_NORMAL_COLS = ("nx", "ny", "nz")

_INT_TYPES = {"char", "uchar", "short", "ushort", "int", "uint",
              "int8", "uint8", "int16", "uint16", "int32", "uint32"}
_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def load_cloud(path, format: str = None) -> PointCloud:
    """Load a cloud from ``path``.

    ``format`` is ``"ply_ascii"`` or ``"xyz_csv"``; when omitted it is
    inferred from the file extension (.ply vs .csv/.xyz/.txt).
    """
    fmt = format or _infer_format(path)
    if fmt == "ply_ascii":
        return _load_ply(path)
    if fmt == "xyz_csv":
        return _load_csv(path)
    raise ParameterError(f"unknown format {fmt!r}")


def save_cloud(cloud: PointCloud, path, format: str = None) -> None:
    """Write ``cloud`` to ``path``.

    Coordinates keep 1e-6 m precision; integer fields round-trip exactly.
    """
    fmt = format or _infer_format(path)
    if fmt == "ply_ascii":
        _save_ply(cloud, path)
    elif fmt == "xyz_csv":
        _save_csv(cloud, path)
    else:
        raise ParameterError(f"unknown format {fmt!r}")


def _infer_format(path) -> str:
    name = str(path).lower()
    if name.endswith(".ply"):
        return "ply_ascii"
    if name.endswith((".csv", ".xyz", ".txt")):
        return "xyz_csv"
    raise ParameterError(f"cannot infer cloud format from {path!r}")


# ---------------------------------------------------------------------------
# PLY

def _load_ply(path) -> PointCloud:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()

    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", line=1)

    n_vertices = None
    props = []            # (name, kind) in declaration order
    in_vertex_element = False
    body_start = None

    for lineno, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["ascii"]:
                raise ParseError(f"unsupported PLY format {raw.strip()!r}",
                                 line=lineno)
        elif tokens[0] == "element":
            if tokens[1] == "vertex":
                try:
                    n_vertices = int(tokens[2])
                except (IndexError, ValueError):
                    raise ParseError("malformed vertex element", line=lineno)
                in_vertex_element = True
            else:
                if len(tokens) < 3 or tokens[2] != "0":
                    raise ParseError(
                        f"unsupported element {tokens[1]!r}", line=lineno)
                in_vertex_element = False
        elif tokens[0] == "property":
            if not in_vertex_element:
                continue
            if tokens[1] == "list":
                raise ParseError("list properties are not supported",
                                 line=lineno)
            if len(tokens) != 3:
                raise ParseError("malformed property declaration", line=lineno)
            ptype, name = tokens[1], tokens[2]
            if ptype in _INT_TYPES:
                kind = "int"
            elif ptype in _FLOAT_TYPES:
                kind = "float"
            else:
                raise ParseError(f"unknown property type {ptype!r}",
                                 line=lineno)
            props.append((name, kind))
        elif tokens[0] == "end_header":
            body_start = lineno + 1
            break
        else:
            raise ParseError(f"unexpected header line {raw.strip()!r}",
                             line=lineno)

    if body_start is None:
        raise ParseError("missing end_header", line=len(lines))
    if n_vertices is None:
        raise ParseError("missing vertex element", line=body_start - 1)
    names = [name for name, _ in props]
    for c in _COORD_COLS:
        if c not in names:
            raise ParseError(f"missing coordinate property {c!r}",
                             line=body_start - 1)

    data_lines = [l for l in lines[body_start - 1:] if l.strip()]
    if len(data_lines) < n_vertices:
        raise ParseError(
            f"expected {n_vertices} vertex rows, found {len(data_lines)}",
            line=len(lines))

    values = np.empty((n_vertices, len(props)), dtype=np.float64)
    for i in range(n_vertices):
        lineno = body_start + i
        tokens = data_lines[i].split()
        if len(tokens) != len(props):
            raise ParseError(
                f"expected {len(props)} values, found {len(tokens)}",
                line=lineno)
        try:
            values[i] = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"non-numeric value in {data_lines[i]!r}",
                             line=lineno)

    return _assemble(names, values, kinds=dict(props))


def _save_ply(cloud: PointCloud, path) -> None:
    columns, formats, header_props = _column_layout(cloud)
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
    ]
    lines.extend(header_props)
    lines.append("end_header")
    body = _format_rows(columns, formats)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")
        if body:
            fh.write(body)
            fh.write("\n")


# ---------------------------------------------------------------------------
# CSV

def _load_csv(path) -> PointCloud:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    rows = [(i + 1, l) for i, l in enumerate(lines) if l.strip()]
    if not rows:
        raise ParseError("empty file", line=1)

    header_line, header = rows[0]
    names = [c.strip() for c in header.split(",")]
    for c in _COORD_COLS:
        if c not in names:
            raise ParseError(f"missing column {c!r} in header",
                             line=header_line)

    values = np.empty((len(rows) - 1, len(names)), dtype=np.float64)
    for r, (lineno, line) in enumerate(rows[1:]):
        tokens = [t.strip() for t in line.split(",")]
        if len(tokens) != len(names):
            raise ParseError(
                f"expected {len(names)} columns, found {len(tokens)}",
                line=lineno)
        try:
            values[r] = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"non-numeric value in row {line!r}",
                             line=lineno)
    return _assemble(names, values)


def _save_csv(cloud: PointCloud, path) -> None:
    columns, formats, header_props = _column_layout(cloud)
    names = [p.split()[-1] for p in header_props]
    body = _format_rows(columns, formats, sep=",")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(names))
        fh.write("\n")
        if body:
            fh.write(body)
            fh.write("\n")


# ---------------------------------------------------------------------------
# shared column handling

def _column_layout(cloud: PointCloud):
    """Column arrays, per-column printf formats and PLY property lines."""
    columns = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    formats = ["%.6f"] * 3
    props = [f"property float {c}" for c in _COORD_COLS]
    if cloud.colors is not None:
        for j, c in enumerate(_COLOR_COLS):
            columns.append(cloud.colors[:, j])
            formats.append("%d")
            props.append(f"property uchar {c}")
    if cloud.normals is not None:
        for j, c in enumerate(_NORMAL_COLS):
            columns.append(cloud.normals[:, j])
            formats.append("%.9g")
            props.append(f"property float {c}")
    columns.append(cloud.source_id)
    formats.append("%d")
    props.append("property int source_id")
    for name in sorted(cloud.scalar_fields):
        values = cloud.scalar_fields[name]
        columns.append(values)
        if values.dtype.kind == "i":
            formats.append("%d")
            props.append(f"property int {name}")
        else:
            formats.append("%.9g")
            props.append(f"property float {name}")
    return columns, formats, props


def _format_rows(columns, formats, sep=" ") -> str:
    if not len(columns[0]):
        return ""
    fmt = sep.join(formats)
    return "\n".join(fmt % row for row in zip(*columns))


def _assemble(names, values, kinds=None) -> PointCloud:
    """Build a cloud from named columns.

    ``kinds`` maps column name to "int"/"float" when the source format
    declares types (PLY). CSV carries no types, so whole-valued columns are
    treated as integer fields there.
    """
    cols = {name: values[:, j] for j, name in enumerate(names)}
    xyz = np.column_stack([cols.pop(c) for c in _COORD_COLS])

    colors = None
    if all(c in cols for c in _COLOR_COLS):
        colors = np.column_stack(
            [cols.pop(c) for c in _COLOR_COLS]).astype(np.int64)
    normals = None
    if all(c in cols for c in _NORMAL_COLS):
        normals = np.column_stack([cols.pop(c) for c in _NORMAL_COLS])

    source_id = None
    if "source_id" in cols:
        source_id = cols.pop("source_id").astype(np.int64)

    fields = {}
    for name, col in cols.items():
        if kinds is not None:
            is_int = kinds.get(name) == "int"
        else:
            is_int = bool(np.all(col == np.floor(col)))
        fields[name] = col.astype(np.int64) if is_int else col
    return PointCloud(xyz, colors=colors, normals=normals,
                      scalar_fields=fields, source_id=source_id)
