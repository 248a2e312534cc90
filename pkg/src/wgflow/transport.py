"""Wasserstein-distance machinery.

Exact 1-d optimal transport by sorting, exact small-N assignment transport,
log-domain entropic (Sinkhorn) transport with epsilon-scaling, barycentric
velocity extraction, distances to target sets, displacement interpolation,
and the L2 density distance used for comparison demos.

Conventions
-----------
Ground cost is always squared Euclidean distance.  ``TransportPlan.cost`` is
the transport cost ``<c, pi>`` (a squared distance); the functions return the
unsquared ``W2`` alongside the plan.  Entropic plans use the convention
``pi_ij = a_i b_j exp((f_i + g_j - C_ij)/eps)`` so that the relative entropy
``KL(pi | a x b)`` is nonnegative and the regularized cost is
``<c, pi> + eps KL``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ConvergenceError, GridMismatchError
from .measures import (
    GridDensity,
    ParticleEnsemble,
    TargetSet,
    sample_density,
    second_moment_about_set,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TransportPlan",
    "EntropicPotentials",
    "W2Estimate",
    "ASSIGNMENT_CAP",
    "w2_exact_1d",
    "w2_assignment",
    "sinkhorn",
    "sinkhorn_divergence",
    "sinkhorn_velocity",
    "w2_to_target_set",
    "w2_grid",
    "grid_quantiles_1d",
    "displacement_interpolate",
    "l2_density_distance",
    "save_plan",
    "save_potentials",
]

#: largest ensemble size routed to the exact assignment solver
ASSIGNMENT_CAP = 512

#: fixed seed for resampling density targets, so distance estimates are reproducible
DENSITY_RESAMPLE_SEED = 1315423911

try:  # optional numba kernels for the dense softmin (the only hot loops)
    from . import _sinkhorn_kernels as _kern
    from . import _sinkhorn1d as _fast1d
except Exception:  # pragma: no cover - numba is optional
    _kern = None
    _fast1d = None


@dataclass
class TransportPlan:
    """Coupling between two uniform discrete measures.

    Either a permutation (equal sizes; ``permutation[i]`` is the target index
    matched to source ``i``) or a dense coupling matrix whose rows sum to the
    source weights and columns to the target weights.
    """

    cost: float                     # <c, pi>, squared-distance units
    epsilon: float = 0.0            # 0 for exact plans
    permutation: np.ndarray | None = None
    coupling: np.ndarray | None = None

    def __post_init__(self):
        if (self.permutation is None) == (self.coupling is None):
            raise ValueError("plan must hold exactly one of permutation/coupling")
        if self.cost < 0:
            raise ValueError("transport cost must be nonnegative")
        if self.permutation is not None:
            perm = np.asarray(self.permutation)
            if np.unique(perm).size != perm.size:
                raise ValueError("permutation plan must be a bijection")

    def marginal_error(self) -> float:
        """Worst absolute deviation of the coupling marginals from uniform."""
        if self.coupling is None:
            return 0.0
        n, m = self.coupling.shape
        row = np.abs(self.coupling.sum(axis=1) - 1.0 / n).max()
        col = np.abs(self.coupling.sum(axis=0) - 1.0 / m).max()
        return float(max(row, col))


class W2Estimate(NamedTuple):
    """A W2 value together with the backend that produced it."""

    value: float
    method: str

    def __float__(self) -> float:
        return self.value


def w2_exact_1d(a: ParticleEnsemble, b: ParticleEnsemble):
    """Exact 1-d W2 between equal-size uniform ensembles by monotone matching.

    Sorting both point sets and matching in order is the optimal coupling in
    one dimension, so the returned value is the exact Wasserstein distance.

    Returns
    -------
    (w2, plan) : (float, TransportPlan)
    """
    if a.dim != 1 or b.dim != 1:
        raise ValueError("w2_exact_1d requires one-dimensional ensembles")
    if a.n != b.n:
        raise ValueError("equal ensemble sizes required; resample upstream")
    xa = a.positions[:, 0]
    xb = b.positions[:, 0]
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    sq = float(np.mean((xa[ia] - xb[ib]) ** 2))
    perm = np.empty(a.n, dtype=np.intp)
    perm[ia] = ib
    return math.sqrt(sq), TransportPlan(cost=sq, permutation=perm)


def w2_assignment(a: ParticleEnsemble, b: ParticleEnsemble, cap: int = ASSIGNMENT_CAP):
    """Exact W2 between equal-size uniform ensembles via optimal assignment.

    Solves ``min_sigma (1/N) sum_i |x_i - y_sigma(i)|^2`` exactly with a
    shortest-augmenting-path solver; this is the discrete equal-weight case
    where the Monge and Kantorovich problems coincide.

    Raises
    ------
    ValueError
        If sizes differ or exceed ``cap`` (use Sinkhorn for larger problems).
    """
    if a.n != b.n:
        raise ValueError("equal ensemble sizes required; resample upstream")
    if a.n > cap:
        raise ValueError(
            f"assignment solver capped at N={cap}; use sinkhorn for larger ensembles"
        )
    C = cdist(a.positions, b.positions, "sqeuclidean")
    rows, cols = linear_sum_assignment(C)
    sq = float(C[rows, cols].mean())
    return math.sqrt(sq), TransportPlan(cost=sq, permutation=cols)


# ---------------------------------------------------------------------------
# entropic transport


@dataclass
class _Cloud:
    """Weighted point support of a measure (grid cells or ensemble atoms)."""

    points: np.ndarray       # (n, d)
    weights: np.ndarray      # (n,), sums to 1
    grid: GridDensity | None = None   # set when the measure is a full grid

    @property
    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)


def _as_cloud(measure, keep_grid: bool = True) -> _Cloud:
    if isinstance(measure, ParticleEnsemble):
        n = measure.n
        return _Cloud(measure.positions, np.full(n, 1.0 / n))
    if isinstance(measure, GridDensity):
        w = measure.cell_masses()
        if keep_grid:
            return _Cloud(measure.centers(), w, grid=measure)
        mask = w > 0
        return _Cloud(measure.centers()[mask], w[mask])
    raise TypeError(f"unsupported measure type {type(measure).__name__}")


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp along ``axis`` (tolerates -inf entries)."""
    mx = np.max(a, axis=axis, keepdims=True)
    mx_safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        s = np.sum(np.exp(a - mx_safe), axis=axis)
        out = np.log(s) + np.squeeze(mx_safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(mx, axis=axis)), out, -np.inf)


def _softmin_rows(C: np.ndarray, pot: np.ndarray, logw: np.ndarray, eps: float) -> np.ndarray:
    """``-eps * LSE_j((pot_j - C_ij)/eps + logw_j)`` over rows of a dense C."""
    if _kern is not None:
        return _kern.softmin_rows(C, pot, logw, eps)
    M = (pot[None, :] - C) / eps + logw[None, :]
    return -eps * _lse(M, axis=1)


class _DenseProblem:
    """Point-cloud transport with an explicit cost matrix."""

    def __init__(self, src: _Cloud, tgt: _Cloud):
        self.src, self.tgt = src, tgt
        self.C = np.ascontiguousarray(cdist(src.points, tgt.points, "sqeuclidean"))
        self._CT = None
        self.loga = src.log_weights
        self.logb = tgt.log_weights

    @property
    def CT(self):
        if self._CT is None:
            self._CT = np.ascontiguousarray(self.C.T)
        return self._CT

    def update_f(self, g, eps):
        return _softmin_rows(self.C, g, self.logb, eps)

    def update_g(self, f, eps):
        return _softmin_rows(self.CT, f, self.loga, eps)

    def marginals(self, f, g, eps):
        with np.errstate(over="ignore"):
            row = self.src.weights * np.exp((f - self.update_f(g, eps)) / eps)
            col = self.tgt.weights * np.exp((g - self.update_g(f, eps)) / eps)
        return row, col

    def costs(self, f, g, eps):
        if _kern is not None:
            primal, dual = _kern.plan_costs(self.C, f, g, self.loga, self.logb, eps)
        else:
            lp = (
                self.loga[:, None]
                + self.logb[None, :]
                + (f[:, None] + g[None, :] - self.C) / eps
            )
            pi = np.exp(lp)
            primal = float((pi * self.C).sum())
            dual = float(f @ pi.sum(axis=1)) + float(g @ pi.sum(axis=0))
        kl = max((dual - primal) / eps, 0.0)
        return primal, primal + eps * kl


class _SeparableGridProblem:
    """Grid-to-grid transport.

    The Gaussian kernel ``exp(-|x - y|^2 / eps)`` factorizes over coordinate
    axes, so each softmin over the full grid reduces to one 1-d log-sum-exp
    contraction per axis: the convolutional variant, done in the log domain.
    """

    def __init__(self, src: _Cloud, tgt: _Cloud):
        self.src, self.tgt = src, tgt
        self.src_res = src.grid.resolution
        self.tgt_res = tgt.grid.resolution
        self.dim = src.grid.domain.dim
        self.src_axes = [src.grid.axis_centers(k) for k in range(self.dim)]
        self.tgt_axes = [tgt.grid.axis_centers(k) for k in range(self.dim)]
        self.loga = src.log_weights
        self.logb = tgt.log_weights

    @staticmethod
    def _contract(A: np.ndarray, tensor: np.ndarray, axis: int) -> np.ndarray:
        """Replace axis ``axis`` (length q) of ``tensor`` by
        ``LSE_j(A[i, j] + tensor[.., j, ..])`` (new length p)."""
        moved = np.moveaxis(tensor, axis, 0)
        flat = moved.reshape(moved.shape[0], -1)
        out = _lse(A[:, :, None] + flat[None, :, :], axis=1)
        return np.moveaxis(out.reshape((A.shape[0],) + moved.shape[1:]), 0, axis)

    def _apply_kernel(self, phi_flat, from_axes, from_res, to_axes, eps):
        work = phi_flat.reshape(from_res)
        for k in range(self.dim):
            A = -((to_axes[k][:, None] - from_axes[k][None, :]) ** 2) / eps
            work = self._contract(A, work, k)
        return work.ravel()

    def update_f(self, g, eps):
        phi = g / eps + self.logb
        return -eps * self._apply_kernel(phi, self.tgt_axes, self.tgt_res, self.src_axes, eps)

    def update_g(self, f, eps):
        phi = f / eps + self.loga
        return -eps * self._apply_kernel(phi, self.src_axes, self.src_res, self.tgt_axes, eps)

    def marginals(self, f, g, eps):
        with np.errstate(over="ignore", invalid="ignore"):
            row = self.src.weights * np.exp((f - self.update_f(g, eps)) / eps)
            col = self.tgt.weights * np.exp((g - self.update_g(f, eps)) / eps)
        return np.nan_to_num(row), np.nan_to_num(col)

    def _log_pair_marginal(self, f, g, eps, k):
        """Log of the coupling's joint marginal on (source axis k, target axis k)."""
        alpha = (self.loga + f / eps).reshape(self.src_res)
        beta = (self.logb + g / eps).reshape(self.tgt_res)
        work = beta
        for m in range(self.dim):
            if m == k:
                continue
            A = -((self.src_axes[m][:, None] - self.tgt_axes[m][None, :]) ** 2) / eps
            work = self._contract(A, work, m)
        # work now has source axes everywhere except target axis k at slot k
        a0 = np.moveaxis(alpha, k, 0).reshape(self.src_res[k], -1)
        u0 = np.moveaxis(work, k, 0).reshape(self.tgt_res[k], -1)
        pair = _lse(a0[:, None, :] + u0[None, :, :], axis=2)  # (src_k, tgt_k)
        A_k = -((self.src_axes[k][:, None] - self.tgt_axes[k][None, :]) ** 2) / eps
        return pair + A_k

    def costs(self, f, g, eps):
        primal = 0.0
        for k in range(self.dim):
            lm = self._log_pair_marginal(f, g, eps, k)
            sq = (self.src_axes[k][:, None] - self.tgt_axes[k][None, :]) ** 2
            primal += float((np.exp(lm) * sq).sum())
        row, col = self.marginals(f, g, eps)
        dual = float(f @ row) + float(g @ col)
        kl = max((dual - primal) / eps, 0.0)
        return primal, primal + eps * kl


@dataclass
class EntropicPotentials:
    """Dual potentials of an entropic transport solve, plus solve metadata."""

    f: np.ndarray
    g: np.ndarray
    epsilon: float
    iterations: int
    marginal_error: float
    converged: bool
    primal_cost: float
    regularized_cost: float
    source_points: np.ndarray
    target_points: np.ndarray
    source_log_weights: np.ndarray
    target_log_weights: np.ndarray

    def dual_cost(self) -> float:
        """``<f, a> + <g, b>``; equals the regularized cost at convergence."""
        with np.errstate(invalid="ignore"):
            fa = np.where(np.isfinite(self.source_log_weights), self.f, 0.0)
            gb = np.where(np.isfinite(self.target_log_weights), self.g, 0.0)
        return float(fa @ np.exp(self.source_log_weights)) + float(
            gb @ np.exp(self.target_log_weights)
        )

    def plan(self, max_size: int = 4_000_000) -> TransportPlan:
        """Materialize the dense coupling (small problems only)."""
        n, m = self.source_points.shape[0], self.target_points.shape[0]
        if n * m > max_size:
            raise ValueError(f"plan of size {n}x{m} exceeds max_size={max_size}")
        C = cdist(self.source_points, self.target_points, "sqeuclidean")
        lp = (
            self.source_log_weights[:, None]
            + self.target_log_weights[None, :]
            + (self.f[:, None] + self.g[None, :] - C) / self.epsilon
        )
        pi = np.exp(lp)
        return TransportPlan(
            cost=float((pi * C).sum()), epsilon=self.epsilon, coupling=pi
        )


def _eps_schedule(eps: float, scaling: float, levels: int) -> np.ndarray:
    if levels <= 1 or scaling <= 1:
        return np.array([eps])
    return np.geomspace(eps * scaling, eps, levels)


def sinkhorn(
    a,
    b,
    epsilon: float,
    tol: float = 1e-6,
    max_iter: int = 2000,
    eps_scaling: float = 10.0,
    eps_levels: int = 4,
    check_every: int = 5,
    compute_costs: bool = True,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> EntropicPotentials:
    """Log-domain Sinkhorn iteration between two measures.

    Alternates dual softmin updates until the worst absolute marginal
    violation of the implied plan drops below ``tol``.  A geometric
    epsilon-scaling warm start (from ``eps_scaling * epsilon`` down to
    ``epsilon``) keeps small regularizations tractable; all arithmetic stays
    in the log domain, so the kernel never underflows.

    Parameters
    ----------
    a, b : ParticleEnsemble or GridDensity
        Source and target measures.  When both are grids the kernel is
        applied as a separable per-axis convolution.
    epsilon : float
        Entropic regularization (> 0), in squared-distance units.
    tol : float
        Worst-marginal-violation stopping threshold.
    max_iter : int
        Iteration budget at the final epsilon level.  Hitting it returns a
        result flagged ``converged=False`` (never silently accepted).
    warm_start : (f, g), optional
        Initial potentials (e.g. from the previous step of a flow); skips
        the epsilon-scaling schedule.

    Returns
    -------
    EntropicPotentials
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if (
        _fast1d is not None
        and warm_start is None
        and isinstance(a, ParticleEnsemble)
        and isinstance(b, ParticleEnsemble)
        and a.dim == 1
        and a.n == b.n
        and a.n > 512
    ):
        result = _sinkhorn_fast_1d(a, b, epsilon, tol, max_iter, compute_costs)
        if result.converged or a.n > 4096:
            return result
        # small enough to afford the epsilon-scaled dense solve instead
        logger.info("1d fast path did not converge; retrying on the dense path")
    separable = isinstance(a, GridDensity) and isinstance(b, GridDensity)
    src = _as_cloud(a, keep_grid=separable)
    tgt = _as_cloud(b, keep_grid=separable)
    prob = _SeparableGridProblem(src, tgt) if separable else _DenseProblem(src, tgt)

    if warm_start is not None:
        f = np.array(warm_start[0], dtype=float)
        g = np.array(warm_start[1], dtype=float)
        schedule = np.array([epsilon])
    else:
        f = np.zeros(src.weights.size)
        g = np.zeros(tgt.weights.size)
        schedule = _eps_schedule(epsilon, eps_scaling, eps_levels)

    from ._anderson import AndersonMixer

    iterations = 0
    err = math.inf
    nf = f.size
    for eps in schedule:
        final = eps == schedule[-1]
        budget = max_iter if final else max(10, min(40, max_iter // 10))
        level_tol = tol if final else max(100 * tol, 1e-4)
        mixer = AndersonMixer() if final else None
        best_res = math.inf
        it = 0
        while it < budget:
            steps = min(check_every, budget - it)
            for _ in range(steps):
                f_n = prob.update_f(g, eps)
                g_n = prob.update_g(f_n, eps)
                it += 1
                iterations += 1
                if mixer is None:
                    f, g = f_n, g_n
                    continue
                z = np.concatenate([f, g])
                Gz = np.concatenate([f_n, g_n])
                res = float(np.abs(Gz - z).max()) / eps
                if res > 10.0 * best_res:  # acceleration overshoot; restart
                    mixer.reset()
                    f, g = f_n, g_n
                    continue
                best_res = min(best_res, res)
                mixer.push(z, Gz)
                z_new = mixer.propose()
                f, g = z_new[:nf], z_new[nf:]
            row, col = prob.marginals(f, g, eps)
            err = float(
                max(np.abs(row - src.weights).max(), np.abs(col - tgt.weights).max())
            )
            if err < level_tol:
                break

    converged = bool(err < tol)
    if not converged:
        logger.warning(
            "sinkhorn stopped at marginal error %.3e > tol %.3e after %d iterations",
            err, tol, iterations,
        )
    if compute_costs:
        primal, regularized = prob.costs(f, g, epsilon)
    else:
        primal = regularized = math.nan
    return EntropicPotentials(
        f=f,
        g=g,
        epsilon=epsilon,
        iterations=iterations,
        marginal_error=err,
        converged=converged,
        primal_cost=primal,
        regularized_cost=regularized,
        source_points=src.points,
        target_points=tgt.points,
        source_log_weights=src.log_weights,
        target_log_weights=tgt.log_weights,
    )


def _sinkhorn_fast_1d(
    a: ParticleEnsemble,
    b: ParticleEnsemble,
    epsilon: float,
    tol: float,
    max_iter: int,
    compute_costs: bool,
) -> EntropicPotentials:
    """Sorted-support fast path for equal-size uniform 1-d problems."""
    xa = np.sort(a.positions[:, 0])
    xb = np.sort(b.positions[:, 0])
    f, g, iterations, err, converged = _fast1d.solve_sorted_1d(
        xa, xb, epsilon, tol, max_iter
    )
    if not converged:
        logger.warning(
            "sinkhorn (1d fast path) stopped at marginal error %.3e > tol %.3e",
            err, tol,
        )
    n = xa.size
    logw = np.full(n, -math.log(n))
    if compute_costs:
        primal, dual = _kern.plan_costs_1d(xa, xb, f, g, logw, logw, epsilon)
        kl = max((dual - primal) / epsilon, 0.0)
        regularized = primal + epsilon * kl
    else:
        primal = regularized = math.nan
    return EntropicPotentials(
        f=f,
        g=g,
        epsilon=epsilon,
        iterations=iterations,
        marginal_error=err,
        converged=converged,
        primal_cost=primal,
        regularized_cost=regularized,
        source_points=xa[:, None],
        target_points=xb[:, None],
        source_log_weights=logw,
        target_log_weights=logw,
    )


def _self_dual_value(measure, epsilon: float, tol: float, max_iter: int) -> float:
    """Dual value of the self-transport problem ``OT_eps(a, a)`` via the
    symmetric fixed point ``h <- (h + softmin(h)) / 2`` (fast and stable)."""
    if (
        _fast1d is not None
        and isinstance(measure, ParticleEnsemble)
        and measure.dim == 1
        and measure.n > 64
    ):
        x = np.sort(measure.positions[:, 0])
        h, _, err = _fast1d.solve_sorted_1d_symmetric(x, epsilon, tol, max_iter)
        if err > 10 * tol:
            logger.warning("symmetric sinkhorn (1d) marginal error %.3e", err)
        return 2.0 * float(h.mean())
    separable = isinstance(measure, GridDensity)
    cloud = _as_cloud(measure, keep_grid=separable)
    prob = (
        _SeparableGridProblem(cloud, cloud) if separable else _DenseProblem(cloud, cloud)
    )
    h = np.zeros(cloud.weights.size)
    for _ in range(max_iter):
        h_new = 0.5 * (h + prob.update_f(h, epsilon))
        delta = float(np.abs(np.nan_to_num(h_new - h)).max())
        h = h_new
        if delta < 0.1 * tol * epsilon:
            break
    with np.errstate(invalid="ignore"):
        hv = np.where(np.isfinite(cloud.log_weights), h, 0.0)
    return 2.0 * float(hv @ cloud.weights)


def sinkhorn_divergence(a, b, epsilon: float, tol: float = 1e-6, max_iter: int = 2000):
    """Debiased entropic divergence ``OT_eps(a,b) - (OT_eps(a,a) + OT_eps(b,b))/2``.

    Computed from dual values; removes the epsilon bias of the raw
    regularized cost, so the value approximates ``W2^2(a, b)`` for small
    epsilon and is exactly zero when both arguments are the same measure.

    Returns
    -------
    (value, potentials) : (float, EntropicPotentials)
        The divergence and the cross-term potentials (reusable for velocity
        extraction).
    """
    pots = sinkhorn(a, b, epsilon, tol=tol, max_iter=max_iter, compute_costs=False)
    if np.array_equal(pots.source_points, pots.target_points) and np.array_equal(
        pots.source_log_weights, pots.target_log_weights
    ):
        return 0.0, pots
    cross = pots.dual_cost()
    self_a = _self_dual_value(a, epsilon, tol, max_iter)
    self_b = _self_dual_value(b, epsilon, tol, max_iter)
    return cross - 0.5 * (self_a + self_b), pots


def sinkhorn_velocity(
    positions: np.ndarray, potentials: EntropicPotentials, chunk: int = 2048
) -> np.ndarray:
    """Barycentric-projection velocity ``v(x) = T_eps(x) - x``.

    ``T_eps(x) = E_pi[y | x]`` is the conditional mean of the entropic plan
    expressed through the target potential; the same formula extends to
    arbitrary query points, which is how agent-level controls are extracted
    from a grid-level transport solve.  As ``eps -> 0`` on smooth problems
    the map approaches the Monge displacement.

    Raises
    ------
    ConvergenceError
        If the potentials are flagged unconverged (stale potentials must be
        re-solved by the caller).
    """
    if not potentials.converged:
        raise ConvergenceError(
            "potentials are not converged for this source/target pair; re-solve"
        )
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    y = potentials.target_points
    score = potentials.g / potentials.epsilon + potentials.target_log_weights
    T = np.empty_like(x)
    for start in range(0, x.shape[0], chunk):
        block = x[start : start + chunk]
        logits = score[None, :] - cdist(block, y, "sqeuclidean") / potentials.epsilon
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        T[start : start + chunk] = w @ y
    return T - x


def w2_to_target_set(
    rho: ParticleEnsemble,
    target: TargetSet,
    epsilon: float | None = None,
    cap: int = ASSIGNMENT_CAP,
) -> W2Estimate:
    """W2 distance from an ensemble to a target, by the cheapest exact backend.

    * point-set target: closed form ``sqrt(mean_i dist^2(x_i, M))`` -- the
      exact distance to the set of all measures supported on the points;
    * ensemble target: exact 1-d / assignment transport when sizes allow,
      debiased Sinkhorn otherwise;
    * density target: the density is resampled (fixed seed, size matched to
      ``rho``) and handled as an ensemble target -- an estimate, not exact.
    """
    if target.kind == "points":
        return W2Estimate(
            math.sqrt(second_moment_about_set(rho, target.points)), "point-set"
        )
    if target.kind == "density":
        resampled = sample_density(target.density, rho.n, DENSITY_RESAMPLE_SEED)
        est = w2_to_target_set(
            rho, TargetSet.from_ensemble(resampled), epsilon=epsilon, cap=cap
        )
        return W2Estimate(est.value, est.method + "+resampled-density")
    other = target.ensemble
    if rho.n == other.n:
        if rho.dim == 1:
            return W2Estimate(w2_exact_1d(rho, other)[0], "exact-1d")
        if rho.n <= cap:
            return W2Estimate(w2_assignment(rho, other, cap=cap)[0], "assignment")
    eps = epsilon if epsilon is not None else 1e-3 * rho.domain.diameter**2
    value, _ = sinkhorn_divergence(rho, other, eps)
    return W2Estimate(math.sqrt(max(value, 0.0)), "sinkhorn-debiased")


def displacement_interpolate(
    a: ParticleEnsemble, b: ParticleEnsemble, t: float
) -> ParticleEnsemble:
    """Displacement interpolation ``((1-t) Id + t T)_# a`` on particles.

    Positions are ``(1-t) x_i + t y_{sigma(i)}`` under the optimal matching,
    so ``W2(a, interp(t)) = t W2(a, b)`` along the path.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("interpolation parameter must lie in [0, 1]")
    if a.dim == 1:
        _, plan = w2_exact_1d(a, b)
    else:
        _, plan = w2_assignment(a, b)
    matched = b.positions[plan.permutation]
    return a.with_positions((1.0 - t) * a.positions + t * matched)


def l2_density_distance(a: GridDensity, b: GridDensity) -> float:
    """L2 distance ``sqrt(sum (a - b)^2 cellVolume)`` between same-grid densities."""
    if a.resolution != b.resolution or not (
        np.array_equal(a.domain.lower, b.domain.lower)
        and np.array_equal(a.domain.upper, b.domain.upper)
    ):
        raise GridMismatchError("grid densities must share domain and resolution")
    return float(np.sqrt(((a.values - b.values) ** 2).sum() * a.cell_volume))


# ---------------------------------------------------------------------------
# 1-d grid distance (quantile form); fast exact metric for sweeps and demos


def grid_quantiles_1d(grid: GridDensity, s: np.ndarray) -> np.ndarray:
    """Quantile function of a 1-d grid density at levels ``s`` in (0, 1).

    The CDF of a piecewise-constant density is piecewise linear, so its
    inverse is evaluated exactly per cell.
    """
    if grid.domain.dim != 1:
        raise ValueError("grid_quantiles_1d requires a 1-d grid")
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("quantile levels must lie strictly inside (0, 1)")
    vals = grid.values
    w = grid.cell_widths[0]
    edges = grid.domain.lower[0] + np.arange(vals.size + 1) * w
    cdf = np.concatenate([[0.0], np.cumsum(vals * w)])
    cdf[-1] = 1.0
    idx = np.clip(np.searchsorted(cdf, s, side="left") - 1, 0, vals.size - 1)
    # the located cell always has positive mass: cdf[idx] < s <= cdf[idx+1]
    return edges[idx] + (s - cdf[idx]) / np.maximum(vals[idx], 1e-300)


def w2_grid(
    a: GridDensity, b: GridDensity, epsilon: float | None = None, n_quad: int = 4096
) -> float:
    """W2 between grid densities: exact quantile integration in 1-d, debiased
    Sinkhorn otherwise."""
    if a.domain.dim == 1 and b.domain.dim == 1:
        s = (np.arange(n_quad) + 0.5) / n_quad
        qa = grid_quantiles_1d(a, s)
        qb = grid_quantiles_1d(b, s)
        return float(np.sqrt(np.mean((qa - qb) ** 2)))
    eps = epsilon if epsilon is not None else 1e-3 * a.domain.diameter**2
    value, _ = sinkhorn_divergence(a, b, eps)
    return math.sqrt(max(value, 0.0))


# ---------------------------------------------------------------------------
# exports


def save_plan(path, plan: TransportPlan) -> None:
    """Couplings as (i, j, mass) CSV triples; permutations as two columns."""
    with open(path, "w") as fh:
        if plan.permutation is not None:
            fh.write("i,j\n")
            for i, j in enumerate(plan.permutation):
                fh.write(f"{i},{j}\n")
        else:
            fh.write("i,j,mass\n")
            n, m = plan.coupling.shape
            for i in range(n):
                for j in range(m):
                    mass = plan.coupling[i, j]
                    if mass > 0:
                        fh.write(f"{i},{j},{mass:.17g}\n")


def save_potentials(path, pots: EntropicPotentials) -> None:
    with open(path, "w") as fh:
        fh.write(
            f"# epsilon {pots.epsilon!r} iterations {pots.iterations} "
            f"marginalError {pots.marginal_error!r}\n"
        )
        fh.write("side,index,value\n")
        for i, v in enumerate(pots.f):
            fh.write(f"f,{i},{v:.17g}\n")
        for j, v in enumerate(pots.g):
            fh.write(f"g,{j},{v:.17g}\n")
