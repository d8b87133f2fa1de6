"""Readers and writers for the exchange formats.

* legacy ASCII VTK unstructured grids (triangle cells) carrying nodal fields
  as POINT_DATA and elementwise fields as CELL_DATA,
* the residual telemetry CSV,
* ASCII PGM (P2) grayscale rasters.
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .mesh import TriMesh

__all__ = [
    "RESIDUAL_HEADER",
    "write_vtk",
    "read_vtk",
    "write_residuals_csv",
    "read_residuals_csv",
    "write_pgm",
    "read_pgm",
]

RESIDUAL_HEADER = ("sweep", "substep", "residual", "lambda", "mu")


def write_vtk(path, mesh, point_data=None, cell_data=None, title="aet field"):
    """Write a legacy ASCII VTK unstructured grid.

    Parameters
    ----------
    path : str or Path
    mesh : TriMesh
    point_data, cell_data : dict of name -> array, optional
        Nodal and elementwise scalar fields.
    title : str
    """
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    n, m = mesh.n_nodes, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m

    def block(kind, size, fields):
        if not fields:
            return
        out.append(f"{kind} {size}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (size,):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({size},)")
            if " " in name:
                raise ValueError(f"field name {name!r} contains whitespace")
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(repr(v) for v in values.tolist())

    block("POINT_DATA", n, point_data)
    block("CELL_DATA", m, cell_data)
    Path(path).write_text("\n".join(out) + "\n")


def read_vtk(path):
    """Read a file written by :func:`write_vtk`.

    Returns
    -------
    mesh : TriMesh
    point_data, cell_data : dict of name -> ndarray
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens or not tokens[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    words = " ".join(tokens[2:]).split()
    pos = 0

    def nxt():
        nonlocal pos
        if pos >= len(words):
            raise ValueError(f"{path}: unexpected end of file")
        pos += 1
        return words[pos - 1]

    if nxt() != "ASCII":
        raise ValueError(f"{path}: only ASCII VTK is supported")
    if (nxt(), nxt()) != ("DATASET", "UNSTRUCTURED_GRID"):
        raise ValueError(f"{path}: expected an unstructured grid")
    nodes = tris = None
    point_data, cell_data = {}, {}
    target = None
    while pos < len(words):
        key = nxt()
        if key == "POINTS":
            n = int(nxt())
            nxt()
            nodes = np.array([float(nxt()) for _ in range(3 * n)]).reshape(n, 3)[:, :2]
        elif key == "CELLS":
            m = int(nxt())
            nxt()
            cells = []
            for _ in range(m):
                k = int(nxt())
                if k != 3:
                    raise ValueError(f"{path}: only triangle cells are supported")
                cells.append([int(nxt()) for _ in range(3)])
            tris = np.array(cells, dtype=np.int64)
        elif key == "CELL_TYPES":
            for _ in range(int(nxt())):
                nxt()
        elif key in ("POINT_DATA", "CELL_DATA"):
            size = int(nxt())
            target = (point_data if key == "POINT_DATA" else cell_data, size)
        elif key == "SCALARS":
            if target is None:
                raise ValueError(f"{path}: SCALARS outside a data block")
            name = nxt()
            nxt()
            if words[pos] not in ("LOOKUP_TABLE",):
                nxt()
            if nxt() != "LOOKUP_TABLE":
                raise ValueError(f"{path}: expected LOOKUP_TABLE")
            nxt()
            store, size = target
            store[name] = np.array([float(nxt()) for _ in range(size)])
        else:
            raise ValueError(f"{path}: unexpected keyword {key!r}")
    if nodes is None or tris is None:
        raise ValueError(f"{path}: missing POINTS or CELLS")
    return TriMesh(nodes, tris), point_data, cell_data


def write_residuals_csv(path, rows):
    """Write ``(sweep, substep, residual, lambda, mu)`` rows under a fixed header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESIDUAL_HEADER)
        for s, i, r, lam, mu in rows:
            w.writerow([int(s), int(i), repr(float(r)), repr(float(lam)), repr(float(mu))])


def read_residuals_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != RESIDUAL_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(int(s), int(i), float(r), float(lam), float(mu)) for s, i, r, lam, mu in reader]


def write_pgm(path, image, maxval=255):
    """Write a 2-D array of integers in ``[0, maxval]`` as ASCII PGM (P2)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    img = np.rint(img).astype(np.int64)
    if img.min() < 0 or img.max() > maxval:
        raise ValueError(f"gray levels must lie in [0, {maxval}]")
    rows, cols = img.shape
    lines = ["P2", f"{cols} {rows}", str(maxval)]
    lines += [" ".join(map(str, row)) for row in img.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path):
    """Read an ASCII PGM (P2) file.

    Returns
    -------
    image : (rows, cols) float array
    maxval : int
    """
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ValueError(f"cannot read PGM image {path}: {exc}") from exc
    words = []
    for line in text.splitlines():
        words.extend(line.split("#", 1)[0].split())
    if not words or words[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM (P2) file")
    try:
        cols, rows, maxval = int(words[1]), int(words[2]), int(words[3])
        pixels = np.array([int(w) for w in words[4:]], dtype=float)
    except (IndexError, ValueError):
        raise ValueError(f"{path}: malformed PGM header or pixel data") from None
    if cols <= 0 or rows <= 0 or maxval <= 0:
        raise ValueError(f"{path}: invalid PGM dimensions")
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} pixels, found {pixels.size}")
    return pixels.reshape(rows, cols), maxval
