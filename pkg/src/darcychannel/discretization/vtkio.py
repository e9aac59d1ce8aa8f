"""Legacy-ASCII VTK export of meshes, fields, and interface polylines."""

import numpy as np


def _fmt(x):
    return f"{float(x):.16g}"


def write_triangulation_vtk(path, vertices, triangles, point_data=None, cell_data=None):
    """Write a triangulation with optional point/cell arrays.

    ``point_data``/``cell_data``: name -> array, scalars (n,) or vectors
    (n, 2); vectors are padded with a zero third component.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    lines = [
        "# vtk DataFile Version 3.0",
        "darcychannel field export",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(vertices)} double",
    ]
    for p in vertices:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} 0")
    lines.append(f"CELLS {len(triangles)} {4 * len(triangles)}")
    for t in triangles:
        lines.append(f"3 {t[0]} {t[1]} {t[2]}")
    lines.append(f"CELL_TYPES {len(triangles)}")
    lines.extend(["5"] * len(triangles))
    lines.extend(_data_section("POINT_DATA", len(vertices), point_data))
    lines.extend(_data_section("CELL_DATA", len(triangles), cell_data))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_surface_vtk(path, points, point_data=None):
    """Write an interface polyline with point arrays."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    lines = [
        "# vtk DataFile Version 3.0",
        "darcychannel interface export",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    for p in points:
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} 0")
    lines.append(f"LINES {n - 1} {3 * (n - 1)}")
    for i in range(n - 1):
        lines.append(f"2 {i} {i + 1}")
    lines.extend(_data_section("POINT_DATA", n, point_data))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _data_section(tag, count, data):
    if not data:
        return []
    lines = [f"{tag} {count}"]
    for name, arr in data.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in arr)
        else:
            lines.append(f"VECTORS {name} double")
            lines.extend(f"{_fmt(v[0])} {_fmt(v[1])} 0" for v in arr)
    return lines
