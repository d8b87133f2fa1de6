"""Triangular meshes of the disk and their geometric queries.

Meshes are built as concentric rings of nodes around the origin; ring ``k``
carries ``6 k`` equispaced nodes, so triangles stay close to equilateral at
every radius. Everything the finite element code needs (areas, P1 gradients,
lumped masses, the boundary loop) is precomputed on construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "TriMesh",
    "MeshFormatError",
    "RING_DENSITY",
    "generate_disk_mesh",
    "save_mesh",
    "load_mesh",
]

#: Ring spacing is ``h / RING_DENSITY``. With 1.6 a target size h = 1/64 gives
#: 8269 nodes / 16224 triangles, the density of a gmsh disk of that size.
RING_DENSITY = 1.6

_MAGIC = "aetmesh 1"


class MeshFormatError(ValueError):
    """Raised for malformed or geometrically invalid mesh data."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """An immutable P1 triangulation of a disk centered at the origin.

    Parameters
    ----------
    nodes : (n, 2) array
        Node coordinates.
    triangles : (m, 3) int array
        Counter-clockwise node index triples.

    Attributes
    ----------
    boundary_edges : (b, 2) int array
        Boundary edges ordered counter-clockwise into one closed loop.
    boundary_angles : (b,) array
        Polar angle in ``[0, 2 pi)`` of each boundary edge midpoint.
    elem_area : (m,) array
    elem_grad : (m, 3, 2) array
        Constant gradients of the three hat functions on each triangle.
    node_mass : (n,) array
        Lumped mass, a third of the area of the adjacent triangles.
    boundary_mass : (n,) array
        ``int_Gamma phi_i ds`` on the polygonal boundary.
    radius : float
        Largest node distance from the origin.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray = field(init=False)
    boundary_angles: np.ndarray = field(init=False)
    elem_area: np.ndarray = field(init=False)
    elem_grad: np.ndarray = field(init=False)
    node_mass: np.ndarray = field(init=False)
    boundary_mass: np.ndarray = field(init=False)
    radius: float = field(init=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) < 3:
            raise MeshFormatError("nodes must be an (n, 2) array with n >= 3")
        if tris.ndim != 2 or tris.shape[1] != 3 or len(tris) == 0:
            raise MeshFormatError("triangles must be a non-empty (m, 3) array")
        if tris.min() < 0 or tris.max() >= len(nodes):
            raise MeshFormatError("triangle references a missing node")
        if not np.all(np.isfinite(nodes)):
            raise MeshFormatError("non-finite node coordinate")

        p0, p1, p2 = (nodes[tris[:, k]] for k in range(3))
        e1, e2 = p1 - p0, p2 - p0
        area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        bad = np.flatnonzero(area <= 0)
        if bad.size:
            raise MeshFormatError(
                f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}"
            )

        # grad phi_i = perp(p_k - p_j) / (2 A) for (i, j, k) cyclic
        grad = np.empty((len(tris), 3, 2))
        for i, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
            pj, pk = nodes[tris[:, j]], nodes[tris[:, k]]
            grad[:, i, 0] = (pj[:, 1] - pk[:, 1]) / (2 * area)
            grad[:, i, 1] = (pk[:, 0] - pj[:, 0]) / (2 * area)

        mass = np.bincount(tris.ravel(), weights=np.repeat(area / 3, 3), minlength=len(nodes))

        loop = _boundary_loop(tris, len(nodes))
        mid = 0.5 * (nodes[loop[:, 0]] + nodes[loop[:, 1]])
        angles = np.mod(np.arctan2(mid[:, 1], mid[:, 0]), 2 * np.pi)
        start = int(np.argmin(angles))
        loop, angles = np.roll(loop, -start, axis=0), np.roll(angles, -start)
        if np.any(np.diff(angles) <= 0):
            raise MeshFormatError("boundary loop is not star-shaped about the origin")
        length = np.linalg.norm(nodes[loop[:, 1]] - nodes[loop[:, 0]], axis=1)
        bmass = np.bincount(loop.ravel(), weights=np.repeat(length / 2, 2), minlength=len(nodes))

        radius = float(np.max(np.linalg.norm(nodes, axis=1)))
        rb = np.linalg.norm(nodes[loop[:, 0]], axis=1)
        if np.any(np.abs(rb - radius) > 1e-9 * max(radius, 1.0)):
            raise MeshFormatError("boundary nodes do not lie on a common circle")
        if np.count_nonzero(bmass) != len(loop):
            raise MeshFormatError("boundary edges do not form a single simple loop")

        object.__setattr__(self, "nodes", _freeze(nodes))
        object.__setattr__(self, "triangles", _freeze(tris))
        object.__setattr__(self, "boundary_edges", _freeze(loop))
        object.__setattr__(self, "boundary_angles", _freeze(angles))
        object.__setattr__(self, "elem_area", _freeze(area))
        object.__setattr__(self, "elem_grad", _freeze(grad))
        object.__setattr__(self, "node_mass", _freeze(mass))
        object.__setattr__(self, "boundary_mass", _freeze(bmass))
        object.__setattr__(self, "radius", radius)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def centroids(self):
        return _freeze(self.nodes[self.triangles].mean(axis=1))

    @cached_property
    def boundary_nodes(self):
        return _freeze(self.boundary_edges[:, 0].copy())

    @cached_property
    def averaging_matrix(self):
        """Sparse ``(m, n)`` matrix taking nodal values to triangle means."""
        m = self.n_triangles
        rows = np.repeat(np.arange(m), 3)
        return sp.csr_matrix(
            (np.full(3 * m, 1.0 / 3.0), (rows, self.triangles.ravel())),
            shape=(m, self.n_nodes),
        )

    @cached_property
    def gradient_matrix(self):
        """Sparse ``(2m, n)`` matrix; rows ``2T, 2T+1`` give the P1 gradient on T."""
        m = self.n_triangles
        rows = (2 * np.arange(m)[:, None, None] + np.arange(2)[None, None, :])
        rows = np.broadcast_to(rows, (m, 3, 2))
        cols = np.broadcast_to(self.triangles[:, :, None], (m, 3, 2))
        return sp.csr_matrix(
            (self.elem_grad.ravel(), (rows.ravel(), cols.ravel())),
            shape=(2 * m, self.n_nodes),
        )

    def edge_lengths(self):
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.linalg.norm(self.nodes[edges[:, 0]] - self.nodes[edges[:, 1]], axis=1)

    def __repr__(self):
        return f"TriMesh(n_nodes={self.n_nodes}, n_triangles={self.n_triangles}, radius={self.radius:g})"


def _boundary_loop(tris, n_nodes):
    """Return the boundary edges chained into one oriented loop."""
    edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    flat = key[:, 0] * n_nodes + key[:, 1]
    _, inverse, counts = np.unique(flat, return_inverse=True, return_counts=True)
    if counts.max() > 2:
        raise MeshFormatError("an edge is shared by more than two triangles")
    bnd = edges[counts[inverse] == 1]
    if len(bnd) < 3:
        raise MeshFormatError("mesh has no boundary loop")
    nxt = {}
    for a, b in bnd:
        if a in nxt:
            raise MeshFormatError(f"boundary is not a simple loop at node {a}")
        nxt[int(a)] = int(b)
    start = int(bnd[0, 0])
    loop = [start]
    while True:
        b = nxt.get(loop[-1])
        if b is None:
            raise MeshFormatError("boundary loop is open")
        if b == start:
            break
        loop.append(b)
        if len(loop) > len(bnd):
            raise MeshFormatError("boundary loop does not close")
    if len(loop) != len(bnd):
        raise MeshFormatError("boundary consists of more than one loop")
    loop = np.asarray(loop)
    return np.column_stack([loop, np.roll(loop, -1)])


def generate_disk_mesh(radius=0.5, h=1 / 64):
    """Concentric-ring triangulation of the disk ``|x| <= radius``.

    The number of rings is ``ceil(RING_DENSITY * radius / h)``; ring ``k``
    holds ``6 k`` nodes. Neighbouring rings are stitched by merging their
    nodes in angular order, which always yields counter-clockwise triangles.

    Parameters
    ----------
    radius : float
        Disk radius.
    h : float
        Target mesh size, ``0 < h < radius``.

    Returns
    -------
    TriMesh
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if not 0 < h < radius:
        raise ValueError(f"mesh size must satisfy 0 < h < radius, got h={h}, radius={radius}")
    n_rings = max(3, math.ceil(RING_DENSITY * radius / h - 1e-9))

    nodes = [np.zeros((1, 2))]
    offsets = [0]
    for k in range(1, n_rings + 1):
        n = 6 * k
        th = 2 * np.pi * np.arange(n) / n
        r = radius * k / n_rings
        ring = np.column_stack([r * np.cos(th), r * np.sin(th)])
        if k == n_rings:
            # pin the outer ring exactly on the circle
            ring = ring / np.linalg.norm(ring, axis=1)[:, None] * radius
        offsets.append(offsets[-1] + len(nodes[-1]))
        nodes.append(ring)

    tris = [(0, 1 + j, 1 + (j + 1) % 6) for j in range(6)]
    for k in range(2, n_rings + 1):
        n_in, n_out = 6 * (k - 1), 6 * k
        o_in, o_out = offsets[k - 1], offsets[k]
        i = j = 0
        while i < n_in or j < n_out:
            next_in = (i + 1) / n_in
            next_out = (j + 1) / n_out
            a = o_in + i % n_in
            if j < n_out and (i >= n_in or next_out <= next_in):
                tris.append((a, o_out + j, o_out + (j + 1) % n_out))
                j += 1
            else:
                tris.append((a, o_out + j % n_out, o_in + (i + 1) % n_in))
                i += 1
    return TriMesh(np.concatenate(nodes), np.asarray(tris, dtype=np.int64))


def save_mesh(mesh, path):
    """Write ``mesh`` in the plain-text ``aetmesh 1`` format."""
    lines = [_MAGIC, str(mesh.n_nodes)]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines.append(str(mesh.n_triangles))
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a mesh written by :func:`save_mesh`.

    Raises
    ------
    MeshFormatError
        On malformed content; the message names the offending line.
    """
    text = Path(path).read_text()
    lines = text.splitlines()
    pos = 0

    def take():
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file", line=pos + 1)
        pos += 1
        return pos, lines[pos - 1].split()

    def count(lineno, parts, what):
        if len(parts) != 1:
            raise MeshFormatError(f"expected {what} count", line=lineno)
        try:
            n = int(parts[0])
        except ValueError:
            raise MeshFormatError(f"invalid {what} count {parts[0]!r}", line=lineno) from None
        if n <= 0:
            raise MeshFormatError(f"{what} count must be positive", line=lineno)
        return n

    if not lines or not text.strip():
        raise MeshFormatError("empty mesh file", line=1)
    lineno, parts = take()
    if " ".join(parts) != _MAGIC:
        raise MeshFormatError(f"expected header {_MAGIC!r}", line=lineno)

    n_nodes = count(*take(), "node")
    nodes = np.empty((n_nodes, 2))
    for k in range(n_nodes):
        lineno, parts = take()
        try:
            if len(parts) != 2:
                raise ValueError
            nodes[k] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError("expected two coordinates", line=lineno) from None

    n_tris = count(*take(), "triangle")
    tris = np.empty((n_tris, 3), dtype=np.int64)
    for k in range(n_tris):
        lineno, parts = take()
        try:
            if len(parts) != 3:
                raise ValueError
            tris[k] = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError("expected three node indices", line=lineno) from None
        if tris[k].min() < 0 or tris[k].max() >= n_nodes:
            raise MeshFormatError("node index out of range", line=lineno)
    return TriMesh(nodes, tris)
