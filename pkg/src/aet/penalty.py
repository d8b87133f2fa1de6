"""Uniformly convex penalties and their conjugate-gradient (prox) maps.

Every penalty has the form ``Theta(s) = |s|_X^2 / (2 beta) + R(s)`` with
``R`` one of 0, the L1 norm, or the total variation. The map
``xi -> argmin_z Theta(z) - <xi, z>`` is what the iteration calls to go
from dual to primal variables.

Total variation on P1 functions is ``TV_h(z) = sum_T |T| |grad z|_T``. Its
prox is computed by accelerated projected gradient on the dual variable, one
2-vector per triangle constrained to the unit disk.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .operator import inner_x, norm_x

__all__ = [
    "PenaltyKind",
    "PenaltySpec",
    "TVConvergenceError",
    "TVResult",
    "tv_seminorm",
    "tv_denoise",
    "prox_theta",
    "theta_value",
    "bregman_distance",
]


class PenaltyKind(str, enum.Enum):
    L1 = "L1"
    TV = "TV"
    QUADRATIC = "QUADRATIC"


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty choice and the tolerances of its prox.

    Attributes
    ----------
    kind : PenaltyKind
    beta : float
        Weight of the quadratic term ``|s|^2 / (2 beta)``; the strong
        convexity modulus is ``c0 = 1 / (2 beta)``.
    tv_tol : float
        Relative primal-dual gap at which the TV prox stops.
    tv_max_iter : int
    """

    kind: PenaltyKind = PenaltyKind.L1
    beta: float = 1.0
    tv_tol: float = 1e-4
    tv_max_iter: int = 5000

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind(self.kind))
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.tv_tol > 0:
            raise ValueError(f"tv_tol must be positive, got {self.tv_tol}")
        if self.tv_max_iter < 1:
            raise ValueError("tv_max_iter must be at least 1")

    @property
    def c0(self):
        return 1.0 / (2.0 * self.beta)


class TVConvergenceError(RuntimeError):
    def __init__(self, message, gap):
        self.gap = gap
        super().__init__(message)


@dataclass
class TVResult:
    z: np.ndarray
    dual: np.ndarray
    gap: float
    iterations: int


def _weighted_gradient(mesh):
    # D_w = diag(|T|) G : nodal -> (2m,), and the Lipschitz constant of
    # p -> D_w M^{-1} D_w^T p, cached per mesh
    cache = mesh.__dict__.get("_tv_operator")
    if cache is None:
        w = np.repeat(mesh.elem_area, 2)
        D = (mesh.gradient_matrix.multiply(w[:, None])).tocsr()
        Dt = D.T.tocsr()
        minv = 1.0 / mesh.node_mass
        n2 = D.shape[0]
        op = spla.LinearOperator((n2, n2), matvec=lambda p: D @ (minv * (Dt @ p)), dtype=float)
        if n2 <= 400:
            dense = (D @ (Dt.multiply(minv[:, None]))).toarray()
            lip = float(np.linalg.eigvalsh(dense)[-1])
        else:
            lip = float(spla.eigsh(op, k=1, which="LA", tol=1e-6, return_eigenvectors=False)[0])
        cache = (D, Dt, minv, 1.02 * lip)
        mesh.__dict__["_tv_operator"] = cache
    return cache


def tv_seminorm(mesh, z):
    """``sum_T |T| |grad z|_T`` for a nodal field ``z``."""
    g = (mesh.gradient_matrix @ np.asarray(z, dtype=float)).reshape(-1, 2)
    return float(np.sum(mesh.elem_area * np.hypot(g[:, 0], g[:, 1])))


def tv_denoise(mesh, g, beta, tol=1e-4, max_iter=5000, dual0=None, full_output=False):
    """Minimize ``|z - g|_X^2 / 2 + beta TV_h(z)`` over nodal fields.

    Fast projected gradient (FISTA) on the dual problem

        min_{|p_T| <= 1}  |g - beta M^{-1} D^T p|_X^2 / 2,

    with primal recovery ``z = g - beta M^{-1} D^T p``. Stops when the
    duality gap ``beta sum_T |T| (|grad z| - p . grad z)`` falls below
    ``tol`` times the primal objective.

    Parameters
    ----------
    mesh : TriMesh
    g : (n,) array
    beta : float
    tol : float
        Relative primal-dual gap.
    max_iter : int
    dual0 : (m, 2) array, optional
        Warm start for the dual variable.
    full_output : bool
        Return a :class:`TVResult` instead of ``z``.

    Raises
    ------
    TVConvergenceError
        When the gap is still above ``tol`` after ``max_iter`` iterations.
    """
    g = np.asarray(g, dtype=float)
    if not tol > 0:
        raise ValueError("tol must be positive")
    D, Dt, minv, lip = _weighted_gradient(mesh)
    m = mesh.n_triangles
    area = mesh.elem_area
    mass = mesh.node_mass

    def primal(p):
        return g - beta * minv * (Dt @ p.ravel())

    def gap_of(z, p):
        gz = (mesh.gradient_matrix @ z).reshape(-1, 2)
        tv = np.sum(area * np.hypot(gz[:, 0], gz[:, 1]))
        gap = beta * (tv - np.sum(area * np.einsum("td,td->t", p, gz)))
        obj = 0.5 * np.sum(mass * (z - g) ** 2) + beta * tv
        return max(gap, 0.0), obj

    def project(p):
        nrm = np.hypot(p[:, 0], p[:, 1])
        return p / np.maximum(nrm, 1.0)[:, None]

    p = np.zeros((m, 2)) if dual0 is None else project(np.array(dual0, dtype=float).reshape(m, 2))
    if beta == 0:
        return TVResult(g.copy(), p, 0.0, 0) if full_output else g.copy()

    step = 1.0 / (beta * lip)
    y, t = p.copy(), 1.0
    z = primal(p)
    gap, obj = gap_of(z, p)
    # round-off floor: for (near) constant g both gap and objective vanish
    floor = 1e-13 * (0.5 * np.sum(mass * g * g) + beta * tv_seminorm(mesh, g))
    it = 0
    while not (gap <= tol * obj or gap <= floor):
        if it >= max_iter:
            raise TVConvergenceError(
                f"TV prox stopped after {max_iter} iterations with relative gap {gap / obj:.2e}",
                gap / obj)
        zy = primal(y)
        p_new = project(y + step * (D @ zy).reshape(m, 2))
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        if np.vdot(y - p_new, p_new - p) > 0:
            # adaptive restart: momentum points uphill
            y, t_new = p_new.copy(), 1.0
        else:
            y = p_new + ((t - 1) / t_new) * (p_new - p)
        p, t = p_new, t_new
        it += 1
        if it % 10 == 0 or it >= max_iter:
            z = primal(p)
            gap, obj = gap_of(z, p)
    z = primal(p)
    if full_output:
        return TVResult(z, p, gap / obj if obj > 0 else 0.0, it)
    return z


def prox_theta(mesh, xi, spec, tv_state=None):
    """Conjugate-gradient map ``argmin_z Theta(z) - <xi, z>_X``.

    Parameters
    ----------
    mesh : TriMesh
    xi : (n,) array
    spec : PenaltySpec
    tv_state : dict, optional
        Scratch space holding the last TV dual variable for warm starts.
    """
    xi = np.asarray(xi, dtype=float)
    b = spec.beta
    if spec.kind is PenaltyKind.QUADRATIC:
        return b * xi
    if spec.kind is PenaltyKind.L1:
        return b * np.sign(xi) * np.maximum(np.abs(xi) - 1.0, 0.0)
    dual0 = None if tv_state is None else tv_state.get("dual")
    res = tv_denoise(mesh, b * xi, b, tol=spec.tv_tol, max_iter=spec.tv_max_iter,
                     dual0=dual0, full_output=True)
    if tv_state is not None:
        tv_state["dual"] = res.dual
        tv_state["iterations"] = tv_state.get("iterations", 0) + res.iterations
    return res.z


def theta_value(mesh, sigma, spec):
    sigma = np.asarray(sigma, dtype=float)
    val = norm_x(mesh, sigma) ** 2 / (2 * spec.beta)
    if spec.kind is PenaltyKind.L1:
        val += float(np.sum(mesh.node_mass * np.abs(sigma)))
    elif spec.kind is PenaltyKind.TV:
        val += tv_seminorm(mesh, sigma)
    return val


def bregman_distance(mesh, sigma_bar, sigma, xi, spec):
    """``Theta(sigma_bar) - Theta(sigma) - <xi, sigma_bar - sigma>_X``.

    ``xi`` must be a subgradient of Theta at ``sigma``, which holds whenever
    ``sigma = prox_theta(xi)``.
    """
    sigma_bar = np.asarray(sigma_bar, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    return (theta_value(mesh, sigma_bar, spec) - theta_value(mesh, sigma, spec)
            - inner_x(mesh, xi, sigma_bar - sigma))
