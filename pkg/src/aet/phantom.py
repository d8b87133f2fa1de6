"""Ground-truth conductivities, boundary currents and synthetic data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .operator import Current, forward, norm_y

__all__ = [
    "Ellipse",
    "Disk",
    "Polygon",
    "GeometrySpec",
    "default_geometry",
    "geometric_phantom",
    "image_phantom",
    "rasterize",
    "currents_full",
    "currents_limited",
    "locate_points",
    "transfer_elementwise",
    "synthesize_data",
    "add_noise",
]


@dataclass(frozen=True)
class Ellipse:
    center: tuple
    axes: tuple
    value: float

    def contains(self, x, y):
        (cx, cy), (a, b) = self.center, self.axes
        return ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 <= 1.0

    def max_radius(self):
        return math.hypot(*self.center) + max(self.axes)


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    value: float

    def contains(self, x, y):
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.radius**2

    def max_radius(self):
        return math.hypot(*self.center) + self.radius


@dataclass(frozen=True)
class Polygon:
    vertices: tuple
    value: float

    def contains(self, x, y):
        v = np.asarray(self.vertices, dtype=float)
        inside = np.zeros(np.shape(x), dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xc)
        return inside

    def max_radius(self):
        return float(np.max(np.hypot(*np.asarray(self.vertices, dtype=float).T)))


@dataclass(frozen=True)
class GeometrySpec:
    """Piecewise-constant phantom: background plus shapes with absolute values.

    A node inside a shape takes that shape's value; later shapes win where
    shapes overlap.
    """

    background: float = 1.0
    shapes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not self.background > 0:
            raise ValueError("background conductivity must be positive")
        for s in self.shapes:
            if not s.value > 0:
                raise ValueError(f"shape value must be positive: {s}")


def default_geometry():
    """Background 1 with an ellipse (1.8), a disk (3.0) and an L-shaped hexagon (2.5)."""
    return GeometrySpec(
        background=1.0,
        shapes=(
            Ellipse(center=(-0.15, 0.12), axes=(0.12, 0.07), value=1.8),
            Disk(center=(0.15, 0.12), radius=0.09, value=3.0),
            Polygon(
                vertices=((-0.12, -0.27), (0.10, -0.27), (0.10, -0.20),
                          (-0.04, -0.20), (-0.04, -0.09), (-0.12, -0.09)),
                value=2.5,
            ),
        ),
    )


def geometric_phantom(mesh, spec=None):
    """Nodal conductivity of a :class:`GeometrySpec` with sharp interfaces."""
    spec = default_geometry() if spec is None else spec
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    sigma = np.full(mesh.n_nodes, float(spec.background))
    for shape in spec.shapes:
        if shape.max_radius() > mesh.radius:
            raise ValueError(f"shape extends outside the disk of radius {mesh.radius}: {shape}")
        sigma[shape.contains(x, y)] = shape.value
    return sigma


def image_phantom(raster, mesh, value_range, maxval=None):
    """Sample a grayscale raster at the mesh nodes.

    The raster covers the bounding square ``[-R, R]^2`` of the disk with row
    0 at the top. Gray levels ``0..maxval`` map affinely onto
    ``value_range``; sampling is bilinear between pixel centers.
    """
    img = np.asarray(raster, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("raster must be a non-empty 2-D array")
    lo, hi = value_range
    if not (lo > 0 and hi > 0):
        raise ValueError("value range must be positive")
    maxval = float(img.max() if maxval is None else maxval) or 1.0
    rows, cols = img.shape
    R = mesh.radius
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    c = (x + R) / (2 * R) * cols - 0.5
    r = (R - y) / (2 * R) * rows - 0.5
    gray = map_coordinates(img, [r, c], order=1, mode="nearest")
    return lo + (hi - lo) * gray / maxval


def currents_full():
    """The four linear currents ``x1, x2, (x1+x2)/sqrt2, (x1-x2)/sqrt2``."""
    s = math.sqrt(2.0)
    return [
        Current("x1", lambda x1, x2: x1),
        Current("x2", lambda x1, x2: x2),
        Current("(x1+x2)/sqrt2", lambda x1, x2: (x1 + x2) / s),
        Current("(x1-x2)/sqrt2", lambda x1, x2: (x1 - x2) / s),
    ]


def currents_limited(alpha, count=4):
    """``f_i = sin(2 i pi theta / alpha)`` on ``theta in [0, alpha]``, zero elsewhere, ``i = 1..count``."""
    if not 0 < alpha <= 2 * math.pi:
        raise ValueError(f"opening angle must lie in (0, 2 pi], got {alpha}")
    if count < 1:
        raise ValueError("need at least one current")

    def make(i):
        def f(x1, x2):
            th = np.mod(np.arctan2(x2, x1), 2 * math.pi)
            return np.where(th <= alpha, np.sin(2 * i * math.pi * th / alpha), 0.0)
        return Current(f"sin(2*{i}*pi*theta/{alpha:g})", f)

    return [make(i) for i in range(1, count + 1)]


def locate_points(mesh, points, k=12):
    """Triangle containing each point.

    Returns
    -------
    tri : (p,) int array
    fallback : (p,) bool array
        True where no candidate triangle contained the point and the
        nearest centroid was used instead.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tree = mesh.__dict__.get("_centroid_tree")
    if tree is None:
        tree = cKDTree(mesh.centroids)
        mesh.__dict__["_centroid_tree"] = tree
    k = min(k, mesh.n_triangles)
    _, cand = tree.query(pts, k=k)
    cand = cand.reshape(len(pts), k)
    tri = cand[:, 0].copy()
    found = np.zeros(len(pts), dtype=bool)
    eps = -1e-10
    for j in range(k):
        t = cand[:, j]
        verts = mesh.nodes[mesh.triangles[t]]
        lam = _barycentric(verts, pts)
        ok = ~found & np.all(lam >= eps, axis=1)
        tri[ok] = t[ok]
        found |= ok
        if found.all():
            break
    return tri, ~found


def _barycentric(verts, pts):
    a, b, c = verts[:, 0], verts[:, 1], verts[:, 2]
    v0, v1, v2 = b - a, c - a, pts - a
    den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
    l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
    return np.column_stack([1 - l1 - l2, l1, l2])


def rasterize(mesh, values, shape=(128, 128), fill=0.0):
    """Linear interpolation of a nodal field onto the pixel centers of ``[-R, R]^2``."""
    rows, cols = shape
    R = mesh.radius
    xs = -R + (np.arange(cols) + 0.5) * 2 * R / cols
    ys = R - (np.arange(rows) + 0.5) * 2 * R / rows
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= R
    out = np.full(len(pts), float(fill))
    tri, fb = locate_points(mesh, pts[inside])
    lam = _barycentric(mesh.nodes[mesh.triangles[tri]], pts[inside])
    vals = np.asarray(values, dtype=float)[mesh.triangles[tri]]
    interp = np.sum(np.clip(lam, 0, 1) * vals, axis=1) / np.sum(np.clip(lam, 0, 1), axis=1)
    out[inside] = interp
    return out.reshape(rows, cols)


def transfer_elementwise(fine, values, coarse):
    """Point-sample a piecewise-constant field of ``fine`` at the centroids of ``coarse``.

    Returns the sampled field and the number of centroids that needed the
    nearest-triangle fallback.
    """
    tri, fb = locate_points(fine, coarse.centroids)
    return np.asarray(values)[tri], int(fb.sum())


def synthesize_data(fine, sigma_fine, currents, coarse, bounds=(1e-12, np.inf)):
    """Exact power densities computed on ``fine`` and transferred to ``coarse``.

    Returns
    -------
    list of (m_coarse,) arrays
    int
        Number of fallback centroid lookups.
    """
    H, _ = forward(fine, sigma_fine, currents, bounds=bounds)
    out, fallbacks = [], 0
    for h in H:
        y, fb = transfer_elementwise(fine, h, coarse)
        out.append(y)
        fallbacks = max(fallbacks, fb)
    return out, fallbacks


def add_noise(mesh, y, delta_e, q, rng=None):
    """Add scaled Gaussian noise ``y + delta_e |y| / |e| e`` per field.

    Norms are discrete ``L^{q/2}`` norms, so ``|y_delta - y| = delta_e |y|``
    holds by construction.

    Parameters
    ----------
    mesh : TriMesh
    y : (m,) array or list of (m,) arrays
    delta_e : float
        Relative noise level.
    q : float
    rng : int or numpy.random.Generator, optional

    Returns
    -------
    y_delta, delta_abs
        Same structure as ``y``; ``delta_abs`` is ``delta_e |y|`` (a float or a
        list of floats).
    """
    if delta_e < 0:
        raise ValueError("noise level must be non-negative")
    rng = np.random.default_rng(rng)
    single = isinstance(y, np.ndarray) and y.ndim == 1
    fields = [y] if single else list(y)
    noisy, deltas = [], []
    for h in fields:
        h = np.asarray(h, dtype=float)
        e = rng.standard_normal(h.shape)
        size = norm_y(mesh, h, q)
        if delta_e == 0 or size == 0:
            noisy.append(h.copy())
            deltas.append(0.0)
            continue
        noisy.append(h + delta_e * size / norm_y(mesh, e, q) * e)
        deltas.append(delta_e * size)
    if single:
        return noisy[0], deltas[0]
    return noisy, deltas
