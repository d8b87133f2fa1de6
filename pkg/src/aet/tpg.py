"""Two-point-gradient Kaczmarz iteration with a convex penalty.

One sweep visits the equations ``H_i(sigma) = y_i`` in the order
``i = 0, ..., I-1``. Each sub-step extrapolates the dual variable,

    zeta = xi + lam (xi - xi_prev),      z = prox(zeta),

takes a gradient step on the i-th residual measured in L^{q/2},

    xi_new = zeta - mu H_i'(z)^* J_{q/2}(H_i(z) - y_i),

and maps back with ``sigma = prox(xi_new)``. Setting ``lam = 0`` gives the
Landweber-Kaczmarz method. The iteration stops at the first sweep in which
every residual is already below ``tau * delta_i`` (all step sizes zero).
"""
from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import SIGMA_MAX, SIGMA_MIN
from .metrics import psnr, rel_err_l1
from .operator import (
    ForwardCache,
    adjoint_apply,
    duality_map,
    estimate_derivative_norm,
    norm_x,
    norm_y,
)
from .penalty import bregman_distance, prox_theta

__all__ = [
    "Mode",
    "AlgoConfig",
    "IterState",
    "SubstepRecord",
    "SweepRecord",
    "RunResult",
    "step_size",
    "combination_param",
    "initial_state",
    "sweep",
    "run",
    "implied_combination_constant",
]

log = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    TPG = "TPG"
    LANDWEBER = "LANDWEBER"


@dataclass(frozen=True)
class AlgoConfig:
    """Parameters of the iteration.

    ``mu0`` defaults to ``1.8 (1 - 1/tau)``. ``eta`` is only used for the
    ``c1 > 0`` admissibility warning; it cannot be measured for this
    operator.
    """

    q: float = 2.2
    tau: float = 1.05
    mu0: float | None = None
    mu1: float = 1.0
    alpha: float = 3.0
    M: float = 1.0
    max_sweeps: int = 500
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    mode: Mode = Mode.TPG
    eta: float = 0.0
    backend: str = "direct"

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mu0 is None:
            object.__setattr__(self, "mu0", 1.8 * (1 - 1 / self.tau))
        if not self.q > 2:
            raise ValueError(f"q must exceed 2, got {self.q}")
        if not self.tau > 1:
            raise ValueError(f"tau must exceed 1, got {self.tau}")
        if not (self.mu0 > 0 and self.mu1 > 0):
            raise ValueError("step-size constants mu0, mu1 must be positive")
        if self.alpha < 3:
            raise ValueError(f"alpha must be at least 3, got {self.alpha}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be positive")

    @property
    def bounds(self):
        return (self.sigma_min, self.sigma_max)

    def c1(self, c0):
        """``1 - eta - (1 + eta)/tau - mu0/(4 c0)``; positive for admissible parameters."""
        return 1 - self.eta - (1 + self.eta) / self.tau - self.mu0 / (4 * c0)


@dataclass
class IterState:
    """Dual pair ``(xi_{n,i-1}, xi_{n,i})`` and ``sigma = prox(xi_{n,i})``."""

    xi_prev: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    sweep: int = 0
    substep: int = 0
    tv_state: dict = field(default_factory=dict, repr=False)

    def copy(self):
        return IterState(self.xi_prev.copy(), self.xi.copy(), self.sigma.copy(),
                         self.sweep, self.substep, dict(self.tv_state))


@dataclass(frozen=True)
class SubstepRecord:
    sweep: int
    substep: int
    residual: float
    lam: float
    mu: float
    diff_norm: float


@dataclass(frozen=True)
class SweepRecord:
    """Aggregates of one sweep, measured at its starting iterate ``sigma_n``."""

    sweep: int
    R: float
    bregman: float | None = None
    e_l1: float | None = None
    psnr: float | None = None
    lambda_sum: float = 0.0


@dataclass
class RunResult:
    sigma: np.ndarray
    xi: np.ndarray
    n_delta: int
    converged: bool
    sweeps: list
    substeps: list
    final_bregman: float | None = None

    def residual_table(self):
        """Rows ``(sweep, substep, residual, lambda, mu)``."""
        return [(r.sweep, r.substep, r.residual, r.lam, r.mu) for r in self.substeps]


def step_size(r_norm, grad_norm, cfg, delta):
    """Step ``mu`` from the residual norm and ``|H'^* J(r)|_X``.

    ``min{mu0 |r|^{q-2} / |g|^2, mu1} |r|^{2-q/2}`` when ``|r| > tau delta``,
    zero otherwise.
    """
    if r_norm <= cfg.tau * delta or r_norm == 0:
        return 0.0
    p = cfg.q / 2
    if grad_norm > 0:
        first = cfg.mu0 * r_norm ** (2 * (p - 1)) / grad_norm**2
    else:
        first = math.inf
    return min(first, cfg.mu1) * r_norm ** (2 - p)


def combination_param(n, diff_norm, cfg, delta, c0):
    """Extrapolation weight ``lam_{n,i}``; always 0 in Landweber mode.

    ``min{-1/2 + sqrt(1/4 + 4 c0 M tau^2 delta^2 / diff^2), n / (n + alpha)}``,
    where ``diff = |xi_{n,i} - xi_{n,i-1}|_X``.
    """
    if cfg.mode is Mode.LANDWEBER:
        return 0.0
    nesterov = n / (n + cfg.alpha)
    if diff_norm == 0:
        return nesterov
    ratio = 4 * c0 * cfg.M * cfg.tau**2 * delta**2 / diff_norm**2
    return min(-0.5 + math.sqrt(0.25 + ratio), nesterov)


def initial_state(mesh, penalty, xi0=1.0):
    """State with ``xi_{-1} = xi_0`` (a constant or a nodal array)."""
    xi = np.broadcast_to(np.asarray(xi0, dtype=float), (mesh.n_nodes,)).copy()
    state = IterState(xi.copy(), xi, np.empty(0))
    state.sigma = prox_theta(mesh, xi, penalty, state.tv_state)
    return state


def _deltas(delta, n_currents):
    d = np.broadcast_to(np.asarray(delta, dtype=float), (n_currents,)).copy()
    if np.any(d < 0):
        raise ValueError("noise levels must be non-negative")
    return d


def sweep(state, data, currents, mesh, cfg, penalty, delta):
    """Run one Kaczmarz sweep over all currents.

    Parameters
    ----------
    state : IterState
        Not modified; a new state is returned.
    data : sequence of (m,) arrays
        Noisy power densities ``y_i^delta`` on the reconstruction mesh.
    currents : sequence of Current
    mesh : TriMesh
    cfg : AlgoConfig
    penalty : PenaltySpec
    delta : float or (I,) array
        Noise bound per current.

    Returns
    -------
    IterState, list of SubstepRecord, float
        New state, per-sub-step telemetry and ``R_n = sum_i |r_{n,i}|^2``.
    """
    currents = list(currents)
    deltas = _deltas(delta, len(currents))
    st = state.copy()
    c0 = penalty.c0
    n = st.sweep
    records = []
    R = 0.0
    for i, current in enumerate(currents):
        diff = st.xi - st.xi_prev
        diff_norm = norm_x(mesh, diff)
        lam = combination_param(n, diff_norm, cfg, deltas[i], c0)
        if lam > 0 and diff_norm > 0:
            zeta = st.xi + lam * diff
            z = prox_theta(mesh, zeta, penalty, st.tv_state)
        else:
            zeta, z = st.xi, st.sigma
        cache = ForwardCache(mesh, z, [current], bounds=cfg.bounds, backend=cfg.backend)
        r = cache.power_density(0) - data[i]
        r_norm = norm_y(mesh, r, cfg.q)
        R += r_norm**2
        if r_norm <= cfg.tau * deltas[i]:
            # satisfied equation: the whole sub-step is skipped
            records.append(SubstepRecord(n, i, r_norm, 0.0, 0.0, diff_norm))
            st.xi_prev = st.xi
            st.substep = i + 1
            continue
        grad = adjoint_apply(mesh, z, cache, 0, duality_map(r, cfg.q))
        mu = step_size(r_norm, norm_x(mesh, grad), cfg, deltas[i])
        xi_new = zeta - mu * grad
        st.xi_prev, st.xi = st.xi, xi_new
        st.sigma = prox_theta(mesh, xi_new, penalty, st.tv_state)
        st.substep = i + 1
        records.append(SubstepRecord(n, i, r_norm, lam, mu, diff_norm))
    st.sweep = n + 1
    st.substep = 0
    return st, records, R


def run(mesh, currents, data, cfg, penalty, delta, sigma_true=None, xi0=1.0,
        callback=None):
    """Iterate sweeps until the discrepancy principle stops the method.

    Parameters
    ----------
    mesh, currents, data, cfg, penalty, delta
        As in :func:`sweep`.
    sigma_true : (n,) array, optional
        Ground truth on the reconstruction mesh; enables Bregman-distance,
        L1-error and PSNR telemetry.
    xi0 : float or (n,) array
        Initial dual ``xi_{-1} = xi_0``.
    callback : callable, optional
        ``callback(state, sweep_record)`` after every sweep.

    Returns
    -------
    RunResult
        ``n_delta`` is the first sweep whose step sizes are all zero. If
        ``max_sweeps`` is exhausted first, ``converged`` is False and the
        iterate with the smallest ``R_n`` is returned.
    """
    currents = list(currents)
    if len(data) != len(currents):
        raise ValueError(f"{len(data)} data fields for {len(currents)} currents")
    c1 = cfg.c1(penalty.c0)
    if c1 <= 0:
        warnings.warn(f"step-size constants give c1 = {c1:.3g} <= 0", RuntimeWarning, stacklevel=2)

    state = initial_state(mesh, penalty, xi0)
    sweeps, substeps = [], []
    lambda_sum = 0.0
    best = (math.inf, state)

    def measure(st):
        if sigma_true is None:
            return None, None, None
        return (bregman_distance(mesh, sigma_true, st.sigma, st.xi, penalty),
                rel_err_l1(mesh, st.sigma, sigma_true),
                psnr(mesh, st.sigma, sigma_true))

    for n in range(cfg.max_sweeps):
        breg, el1, ps = measure(state)
        new_state, recs, R = sweep(state, data, currents, mesh, cfg, penalty, delta)
        lambda_sum += sum(r.lam * r.diff_norm for r in recs)
        rec = SweepRecord(n, R, breg, el1, ps, lambda_sum)
        sweeps.append(rec)
        substeps.extend(recs)
        log.info("sweep %d: R=%.4e mu=%s", n, R, [f"{r.mu:.2e}" for r in recs])
        if R < best[0]:
            best = (R, state)
        if callback is not None:
            callback(new_state, rec)
        if all(r.mu == 0 for r in recs):
            breg, _, _ = measure(state)
            return RunResult(state.sigma, state.xi, n, True, sweeps, substeps, breg)
        state = new_state

    best_state = best[1]
    breg, _, _ = measure(best_state)
    log.warning("no discrepancy stop within %d sweeps", cfg.max_sweeps)
    return RunResult(best_state.sigma, best_state.xi, cfg.max_sweeps, False, sweeps, substeps, breg)


def implied_combination_constant(mesh, sigma, currents, cfg, penalty, nu=2.0, **kwargs):
    """``M = (c1/nu) min{mu0 / C_H^2, mu1}`` with ``C_H`` estimated at ``sigma``.

    ``C_H`` is the largest power-iteration estimate of ``|H_i'(sigma)|`` over
    the currents. Returns ``(M, C_H)``.
    """
    cache = ForwardCache(mesh, sigma, currents, bounds=cfg.bounds, backend=cfg.backend)
    sig = cache.sigma_input
    ch = max(estimate_derivative_norm(mesh, sig, cache, i, **kwargs) for i in range(len(currents)))
    c1 = cfg.c1(penalty.c0)
    return (c1 / nu) * min(cfg.mu0 / ch**2, cfg.mu1), ch
