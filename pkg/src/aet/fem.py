"""P1 finite elements for the conductivity equation with Neumann data.

The potential is sought in the space of P1 functions with zero boundary
mean. The constraint enters through one Lagrange multiplier, so the solved
system is

    [ K(sigma)  b ] [u  ]   [F]
    [ b^T       0 ] [lam] = [0]

with ``b`` the boundary mass vector. ``K`` is symmetric and has constants in
its kernel; the bordered matrix is symmetric and nonsingular for positive
conductivities.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SIGMA_MIN",
    "SIGMA_MAX",
    "SolverError",
    "CompatibilityError",
    "clamp_conductivity",
    "assemble_stiffness",
    "boundary_load",
    "NeumannSolver",
    "solve_neumann",
]

SIGMA_MIN = 0.05
SIGMA_MAX = 20.0

_GAUSS = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


class SolverError(RuntimeError):
    """The linear solve failed to reach its tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        self.iterations = iterations
        self.residual = residual
        super().__init__(message)


class CompatibilityError(ValueError):
    """Boundary current does not integrate to zero."""


def clamp_conductivity(sigma, bounds=(SIGMA_MIN, SIGMA_MAX)):
    """Project nodal conductivities onto ``[bounds[0], bounds[1]]``."""
    lo, hi = bounds
    return np.clip(np.asarray(sigma, dtype=float), lo, hi)


def _check_nodal(mesh, values, name):
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_nodes,):
        raise ValueError(f"{name} has shape {values.shape}, mesh has {mesh.n_nodes} nodes")
    return values


def _local_stiffness(mesh):
    # |T| grad phi_i . grad phi_j per triangle, cached on the mesh instance
    cache = mesh.__dict__.get("_local_stiffness")
    if cache is None:
        g = mesh.elem_grad
        local = np.einsum("tid,tjd->tij", g, g) * mesh.elem_area[:, None, None]
        rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
        cols = np.tile(mesh.triangles, (1, 3)).ravel()
        cache = (local, rows, cols)
        mesh.__dict__["_local_stiffness"] = cache
    return cache


def assemble_stiffness(mesh, sigma):
    """Assemble ``K_ij = sum_T sigma_T |T| grad phi_i . grad phi_j``.

    ``sigma_T`` is the arithmetic mean of the nodal conductivity over the
    three vertices of T.

    Parameters
    ----------
    mesh : TriMesh
    sigma : (n,) array
        Nodal conductivity. Must be strictly positive.

    Returns
    -------
    scipy.sparse.csr_matrix
    """
    sigma = _check_nodal(mesh, sigma, "sigma")
    if not np.all(np.isfinite(sigma)) or sigma.min() <= 0:
        raise ValueError("conductivity must be finite and strictly positive")
    return _assemble(mesh, mesh.averaging_matrix @ sigma)


def _assemble(mesh, sigma_elem):
    local, rows, cols = _local_stiffness(mesh)
    data = (local * sigma_elem[:, None, None]).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def boundary_load(mesh, f, tol=1e-3):
    """Load vector ``F_i = int_Gamma f phi_i ds``.

    Two-point Gauss quadrature on every boundary edge.

    Parameters
    ----------
    mesh : TriMesh
    f : callable
        ``f(x1, x2)`` evaluated on arrays of boundary points.
    tol : float
        Relative tolerance of the compatibility check
        ``|int f ds| <= tol * int |f| ds``.
    """
    edges = mesh.boundary_edges
    a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    load = np.zeros(mesh.n_nodes)
    total = absolute = 0.0
    for s in _GAUSS:
        pts = (1 - s) * a + s * b
        fv = np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float) * np.ones(len(pts))
        w = 0.5 * length * fv
        load += np.bincount(edges[:, 0], weights=w * (1 - s), minlength=mesh.n_nodes)
        load += np.bincount(edges[:, 1], weights=w * s, minlength=mesh.n_nodes)
        total += w.sum()
        absolute += np.abs(w).sum()
    if abs(total) > tol * absolute:
        raise CompatibilityError(
            f"boundary current integrates to {total:.3e} (|f| integrates to {absolute:.3e})"
        )
    return load


class NeumannSolver:
    """Factorized Neumann problem for one conductivity.

    All right-hand sides handed to :meth:`solve` share the factorization, so
    the state, sensitivity and adjoint problems at a fixed ``sigma`` cost one
    factorization in total.

    Parameters
    ----------
    mesh : TriMesh
    sigma : (n,) array
        Strictly positive nodal conductivity.
    backend : {"direct", "cg"}
        ``"direct"`` factorizes the bordered system with SuperLU. ``"cg"``
        runs Jacobi-preconditioned conjugate gradients on the equivalent
        positive definite system ``K + b b^T / |b|^2`` (valid because every
        right-hand side in this package integrates to zero against constants).
    rtol : float
        Required relative residual of every solve.
    """

    def __init__(self, mesh, sigma, backend="direct", rtol=1e-10):
        self.mesh = mesh
        self.stiffness = assemble_stiffness(mesh, sigma)
        self.backend = backend
        self.rtol = rtol
        b = mesh.boundary_mass
        n = mesh.n_nodes
        if backend == "direct":
            col = sp.csr_matrix(b[:, None])
            aug = sp.bmat([[self.stiffness, col], [col.T, None]], format="csc")
            self._aug = aug
            self._lu = spla.splu(aug)
        elif backend == "cg":
            bn = b / np.linalg.norm(b)
            K = self.stiffness
            self._op = spla.LinearOperator((n, n), matvec=lambda x: K @ x + bn * (bn @ x), dtype=float)
            diag = K.diagonal() + bn**2
            self._prec = spla.LinearOperator((n, n), matvec=lambda x: x / diag, dtype=float)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    def solve(self, rhs):
        """Return ``u`` with ``K u = rhs`` (up to the multiplier) and ``b^T u = 0``."""
        rhs = np.asarray(rhs, dtype=float)
        n = self.mesh.n_nodes
        scale = np.linalg.norm(rhs)
        if scale == 0:
            return np.zeros(n)
        b = self.mesh.boundary_mass
        if self.backend == "direct":
            full = np.concatenate([rhs, [0.0]])
            x = self._lu.solve(full)
            for _ in range(3):
                res = full - self._aug @ x
                rel = np.linalg.norm(res) / scale
                if rel <= self.rtol:
                    break
                x += self._lu.solve(res)
            else:
                raise SolverError(f"direct solve residual {rel:.2e} above {self.rtol:.0e}",
                                  iterations=3, residual=rel)
            return x[:n]

        iters = 0

        def count(_):
            nonlocal iters
            iters += 1

        # project out the constant component so K + b b^T sees a consistent rhs
        rhs_c = rhs - b * (rhs.sum() / b.sum())
        u, info = spla.cg(self._op, rhs_c, rtol=self.rtol, atol=0.0, M=self._prec,
                          maxiter=10 * n, callback=count)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})",
                              iterations=iters)
        return u


def solve_neumann(mesh, sigma, f, backend="direct"):
    """Solve ``-div(sigma grad u) = 0``, ``sigma du/dn = f`` with zero boundary mean.

    Parameters
    ----------
    mesh : TriMesh
    sigma : (n,) array
    f : callable or (n,) array
        Boundary current ``f(x1, x2)`` or a precomputed load vector.
    """
    load = f if isinstance(f, np.ndarray) else boundary_load(mesh, f)
    return NeumannSolver(mesh, sigma, backend=backend).solve(load)
