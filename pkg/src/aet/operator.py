"""Power-density forward maps, their derivatives and discrete adjoints.

Conventions
-----------
Nodal fields (conductivity, potentials, duals, directions) are ``(n,)``
arrays; elementwise fields (power densities, residuals) are ``(m,)`` arrays.

The parameter space X = L2 uses the lumped-mass inner product
``<k, l>_X = sum_n m_n k_n l_n``. The data space Y = L^{q/2} uses
``|phi|_Y = (sum_T |T| |phi_T|^{q/2})^{2/q}`` with the pairing
``<phi, psi> = sum_T |T| phi_T psi_T``. The adjoint is the exact transpose of
the discrete derivative with respect to these two products.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .fem import SIGMA_MAX, SIGMA_MIN, NeumannSolver, boundary_load, clamp_conductivity

__all__ = [
    "Current",
    "StaleCacheError",
    "ForwardCache",
    "power_density",
    "forward",
    "derivative_apply",
    "adjoint_apply",
    "duality_map",
    "norm_y",
    "norm_x",
    "pairing_y",
    "inner_x",
    "estimate_derivative_norm",
]

_versions = itertools.count()


@dataclass(frozen=True)
class Current:
    """A boundary current density ``f(x1, x2)`` with a printable name."""

    name: str
    func: callable = field(repr=False, compare=False)

    def __call__(self, x1, x2):
        return self.func(x1, x2)


class StaleCacheError(RuntimeError):
    """A cache was used with a conductivity other than the one it was built for."""


def _elem_check(mesh, phi, name="field"):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (mesh.n_triangles,):
        raise ValueError(f"{name} has shape {phi.shape}, mesh has {mesh.n_triangles} triangles")
    return phi


def _node_check(mesh, k, name="field"):
    k = np.asarray(k, dtype=float)
    if k.shape != (mesh.n_nodes,):
        raise ValueError(f"{name} has shape {k.shape}, mesh has {mesh.n_nodes} nodes")
    return k


def _elem_gradient(mesh, u):
    """Constant gradient of the P1 function ``u`` on each triangle, ``(m, 2)``."""
    return np.einsum("tid,ti->td", mesh.elem_grad, u[mesh.triangles])


def _scatter_gradient_form(mesh, w):
    """Nodal vector ``F_i = sum_T |T| w_T . grad phi_i`` for a ``(m, 2)`` field ``w``."""
    contrib = np.einsum("tid,td->ti", mesh.elem_grad, w) * mesh.elem_area[:, None]
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


class ForwardCache:
    """Potentials and gradients for one conductivity and a set of currents.

    Potentials are solved lazily, one current at a time, and the factorized
    stiffness operator is shared by the state, sensitivity and adjoint
    problems.

    Parameters
    ----------
    mesh : TriMesh
    sigma : (n,) array
        Conductivity as produced by the iteration; it is clamped to
        ``bounds`` before anything is solved.
    currents : sequence of Current or callables
    bounds : (float, float)
        Safeguard clamp ``[sigma_min, sigma_max]``.
    backend : str
        Linear solver backend, see :class:`aet.fem.NeumannSolver`.
    """

    def __init__(self, mesh, sigma, currents, bounds=(SIGMA_MIN, SIGMA_MAX), backend="direct"):
        self.mesh = mesh
        self.sigma_input = _node_check(mesh, sigma, "sigma").copy()
        self.sigma_input.setflags(write=False)
        self.sigma = clamp_conductivity(self.sigma_input, bounds)
        self.sigma.setflags(write=False)
        self.sigma_elem = mesh.averaging_matrix @ self.sigma
        self.currents = list(currents)
        self.bounds = tuple(bounds)
        self.version = next(_versions)
        self.solver = NeumannSolver(mesh, self.sigma, backend=backend)
        self._u = {}
        self._grad = {}

    def __len__(self):
        return len(self.currents)

    def check(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        if sigma is self.sigma_input:
            return
        if sigma.shape != self.sigma_input.shape or not np.array_equal(sigma, self.sigma_input):
            raise StaleCacheError(f"cache version {self.version} was built for a different conductivity")

    def potential(self, i):
        if i not in self._u:
            load = boundary_load(self.mesh, self.currents[i])
            self._u[i] = self.solver.solve(load)
        return self._u[i]

    def gradient(self, i):
        if i not in self._grad:
            self._grad[i] = _elem_gradient(self.mesh, self.potential(i))
        return self._grad[i]

    def power_density(self, i):
        g = self.gradient(i)
        return self.sigma_elem * np.einsum("td,td->t", g, g)


def power_density(mesh, sigma, u):
    """Elementwise ``sigma_T |grad u|_T^2``.

    ``sigma_T`` is the vertex mean of the nodal conductivity; ``grad u`` is
    the constant P1 gradient on T.
    """
    sigma = _node_check(mesh, sigma, "sigma")
    u = _node_check(mesh, u, "u")
    g = _elem_gradient(mesh, u)
    return (mesh.averaging_matrix @ sigma) * np.einsum("td,td->t", g, g)


def forward(mesh, sigma, currents, bounds=(SIGMA_MIN, SIGMA_MAX), backend="direct"):
    """Power densities of every current.

    Returns
    -------
    list of (m,) arrays
        One power density per current.
    ForwardCache
        Reusable for :func:`derivative_apply` and :func:`adjoint_apply`.
    """
    cache = ForwardCache(mesh, sigma, currents, bounds=bounds, backend=backend)
    return [cache.power_density(i) for i in range(len(cache))], cache


def derivative_apply(mesh, sigma, cache, i, kappa):
    """Directional derivative ``H_i'(sigma)[kappa]`` as an elementwise field.

    Solves the sensitivity problem ``(sigma grad u', grad phi) =
    -(kappa grad u, grad phi)`` with the cached factorization and returns
    ``kappa_T |grad u|^2 + 2 sigma_T grad u . grad u'``.
    """
    cache.check(sigma)
    kappa = _node_check(mesh, kappa, "kappa")
    g = cache.gradient(i)
    kappa_elem = mesh.averaging_matrix @ kappa
    du = cache.solver.solve(-_scatter_gradient_form(mesh, kappa_elem[:, None] * g))
    dg = _elem_gradient(mesh, du)
    return kappa_elem * np.einsum("td,td->t", g, g) + 2 * cache.sigma_elem * np.einsum("td,td->t", g, dg)


def adjoint_apply(mesh, sigma, cache, i, omega):
    """Adjoint ``H_i'(sigma)^* omega`` as a nodal field.

    Solves ``(sigma grad v, grad phi) = -(sigma omega grad u, grad phi)``,
    forms ``e_T = |grad u|^2 omega_T + 2 grad u . grad v`` and returns its
    representative in the lumped X inner product, so that
    ``pairing_y(H' k, omega) == inner_x(k, H'^* omega)`` up to solver
    round-off.
    """
    cache.check(sigma)
    omega = _elem_check(mesh, omega, "omega")
    g = cache.gradient(i)
    v = cache.solver.solve(-_scatter_gradient_form(mesh, (cache.sigma_elem * omega)[:, None] * g))
    gv = _elem_gradient(mesh, v)
    e = np.einsum("td,td->t", g, g) * omega + 2 * np.einsum("td,td->t", g, gv)
    return (mesh.averaging_matrix.T @ (mesh.elem_area * e)) / mesh.node_mass


def duality_map(phi, q):
    """Duality mapping of L^{q/2} with gauge ``t -> t^{q/2-1}``.

    Returns ``|phi|^{q/2-1} sign(phi)`` elementwise.
    """
    if not q > 2:
        raise ValueError(f"exponent q must exceed 2, got {q}")
    phi = np.asarray(phi, dtype=float)
    return np.sign(phi) * np.abs(phi) ** (q / 2 - 1)


def norm_y(mesh, phi, q):
    """Discrete ``L^{q/2}`` norm of an elementwise field."""
    phi = _elem_check(mesh, phi)
    p = q / 2
    return float(np.sum(mesh.elem_area * np.abs(phi) ** p) ** (1 / p))


def pairing_y(mesh, phi, psi):
    return float(np.sum(mesh.elem_area * _elem_check(mesh, phi) * _elem_check(mesh, psi)))


def norm_x(mesh, kappa):
    """Lumped-mass L2 norm of a nodal field."""
    kappa = _node_check(mesh, kappa)
    return float(np.sqrt(np.sum(mesh.node_mass * kappa**2)))


def inner_x(mesh, kappa, lam):
    return float(np.sum(mesh.node_mass * _node_check(mesh, kappa) * _node_check(mesh, lam)))


def estimate_derivative_norm(mesh, sigma, cache, i, iterations=30, seed=0):
    """Power-iteration estimate of ``|H_i'(sigma)|`` as a map L2 -> L2.

    Used only to report a plausible derivative bound; the data space norm is
    replaced by the L2 norm, for which ``H'^* H'`` is self-adjoint.
    """
    rng = np.random.default_rng(seed)
    k = rng.standard_normal(mesh.n_nodes)
    k /= norm_x(mesh, k)
    est = 0.0
    for _ in range(iterations):
        w = adjoint_apply(mesh, sigma, cache, i, derivative_apply(mesh, sigma, cache, i, k))
        est = norm_x(mesh, w)
        if est == 0:
            return 0.0
        k = w / est
    return float(np.sqrt(est))
