"""Semi-discrete optimal transport and the quantization flow.

Equal-mass Voronoi-Laguerre partitions of a grid target density, the
centroid flow ``dx_i/dt = c_i - x_i`` driving sites toward the optimal
quantizer, and the sweep measuring how the ultimate squared distance scales
with the number of sites.

The 1-d solver is exact: cells are quantile intervals of the target and all
moments come from closed-form piecewise integration.  In higher dimension
cell membership is resolved on the target's grid and the weights follow a
damped ascent on the dual (step proportional to the mass defect), which is
accurate at desk scale without exact polygonal power diagrams.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConvergenceError
from .measures import GridDensity, sample_density, substream

logger = logging.getLogger(__name__)

__all__ = [
    "LaguerreDiagram",
    "SdotEnergy",
    "SdotConfig",
    "QuantizationReport",
    "solve_laguerre",
    "sdot_energy",
    "sdot_flow_step",
    "run_sdot_flow",
    "quantization_sweep",
    "save_diagram",
    "save_sweep",
]

DEFAULT_MASS_TOL = 1e-4


@dataclass(frozen=True)
class LaguerreDiagram:
    """Equal-mass power diagram of a target density.

    ``cell_masses`` are each ``1/N`` within the solver's mass tolerance and
    sum to one; ``within_cell_variance[i]`` is the target's second moment
    about the cell centroid, restricted to cell ``i``.
    """

    sites: np.ndarray
    weights: np.ndarray
    cell_masses: np.ndarray
    centroids: np.ndarray
    within_cell_variance: np.ndarray
    mass_tol: float

    def __post_init__(self):
        n = self.sites.shape[0]
        total = self.cell_masses.sum()
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"cell masses sum to {total!r}, expected 1")
        worst = np.abs(self.cell_masses - 1.0 / n).max()
        if worst > self.mass_tol:
            raise ValueError(
                f"worst mass defect {worst:.3g} exceeds tolerance {self.mass_tol:.3g}"
            )


class SdotEnergy(tuple):
    """Energy value with its bias/variance decomposition."""

    def __new__(cls, total, bias, within):
        return super().__new__(cls, (total, bias, within))

    @property
    def total(self):
        return self[0]

    @property
    def bias(self):
        return self[1]

    @property
    def within(self):
        return self[2]


# ---------------------------------------------------------------------------
# exact 1-d machinery


def _edge_antiderivatives(target: GridDensity):
    """Antiderivatives of (rho, x rho, x^2 rho) at the grid edges."""
    vals = target.values
    w = target.cell_widths[0]
    edges = target.domain.lower[0] + np.arange(vals.size + 1) * w
    f0 = np.concatenate([[0.0], np.cumsum(vals * w)])
    f1 = np.concatenate([[0.0], np.cumsum(vals * (edges[1:] ** 2 - edges[:-1] ** 2) / 2.0)])
    f2 = np.concatenate([[0.0], np.cumsum(vals * (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0)])
    return edges, vals, f0, f1, f2


def _eval_antideriv(x, edges, vals, F, power):
    """Evaluate the antiderivative of ``x^power rho`` at arbitrary points."""
    idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, vals.size - 1)
    base = edges[idx]
    if power == 0:
        inc = vals[idx] * (x - base)
    elif power == 1:
        inc = vals[idx] * (x**2 - base**2) / 2.0
    else:
        inc = vals[idx] * (x**3 - base**3) / 3.0
    return F[idx] + inc


def _solve_laguerre_1d(sites: np.ndarray, target: GridDensity, mass_tol: float) -> LaguerreDiagram:
    from .transport import grid_quantiles_1d

    s = sites[:, 0]
    order = np.argsort(s)
    n = s.size
    qs = grid_quantiles_1d(target, (np.arange(1, n) / n))
    bounds = np.concatenate([[target.domain.lower[0]], qs, [target.domain.upper[0]]])
    edges, vals, f0, f1, f2 = _edge_antiderivatives(target)
    M0 = np.diff(_eval_antideriv(bounds, edges, vals, f0, 0))
    M1 = np.diff(_eval_antideriv(bounds, edges, vals, f1, 1))
    M2 = np.diff(_eval_antideriv(bounds, edges, vals, f2, 2))
    centroids = M1 / M0
    within = M2 - M0 * centroids**2
    # weights from the shared-boundary conditions, anchored at w_0 = 0
    ss = s[order]
    b = bounds[1:-1]
    w_sorted = np.zeros(n)
    w_sorted[1:] = np.cumsum((b - ss[1:]) ** 2 - (b - ss[:-1]) ** 2)
    inv = np.empty(n, dtype=np.intp)
    inv[order] = np.arange(n)
    return LaguerreDiagram(
        sites=sites.copy(),
        weights=w_sorted[inv],
        cell_masses=M0[inv],
        centroids=centroids[inv, None],
        within_cell_variance=within[inv],
        mass_tol=max(mass_tol, 1e-12),
    )


# ---------------------------------------------------------------------------
# grid-membership solver for d >= 2


def _solve_laguerre_grid(
    sites: np.ndarray, target: GridDensity, mass_tol: float, max_iter: int
) -> LaguerreDiagram:
    n = sites.shape[0]
    centers = target.centers()
    cell_mass = target.cell_masses()
    D = cdist(centers, sites, "sqeuclidean")
    eta = 0.5 / max(target.values.max(), 1e-300)
    w = np.zeros(n)
    prev_defect = math.inf
    target_mass = 1.0 / n
    for it in range(max_iter):
        assign = np.argmin(D - w[None, :], axis=1)
        masses = np.bincount(assign, weights=cell_mass, minlength=n)
        defect = np.abs(masses - target_mass).max()
        if defect <= mass_tol:
            break
        if defect > prev_defect:
            eta = max(0.5 * eta, 1e-6 / target.values.max())
        prev_defect = defect
        w = w + eta * (target_mass - masses)
    else:
        raise ConvergenceError(
            f"laguerre solve: worst mass defect {defect:.3g} > {mass_tol:.3g} "
            f"after {max_iter} iterations"
        )
    d = sites.shape[1]
    centroids = np.empty((n, d))
    for k in range(d):
        centroids[:, k] = np.bincount(assign, weights=cell_mass * centers[:, k], minlength=n)
    centroids /= masses[:, None]
    sq = (centers**2).sum(axis=1)
    second = np.bincount(assign, weights=cell_mass * sq, minlength=n)
    within = second - masses * (centroids**2).sum(axis=1)
    return LaguerreDiagram(
        sites=sites.copy(),
        weights=w,
        cell_masses=masses,
        centroids=centroids,
        within_cell_variance=within,
        mass_tol=mass_tol,
    )


def solve_laguerre(
    sites: np.ndarray,
    target: GridDensity,
    mass_tol: float = DEFAULT_MASS_TOL,
    max_iter: int = 5000,
) -> LaguerreDiagram:
    """Equal-mass Voronoi-Laguerre partition of a grid density.

    1-d targets are solved exactly (quantile intervals); otherwise cell
    membership is resolved per grid cell and the weights follow a damped
    dual ascent, halving the step on oscillation.

    Raises
    ------
    ValueError
        On coincident sites.
    ConvergenceError
        If the worst mass defect stays above ``mass_tol``.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if sites.ndim != 2 or sites.shape[1] != target.domain.dim:
        raise ValueError("sites must be an (n, d) array matching the target dimension")
    rounded = np.ascontiguousarray(sites).view([("", sites.dtype)] * sites.shape[1])
    if np.unique(rounded).size != sites.shape[0]:
        raise ValueError("coincident sites are not allowed")
    if target.domain.dim == 1:
        return _solve_laguerre_1d(sites, target, mass_tol)
    return _solve_laguerre_grid(sites, target, mass_tol, max_iter)


def sdot_energy(diagram: LaguerreDiagram, sites: np.ndarray) -> SdotEnergy:
    """Squared distance of the site measure to the target, decomposed.

    ``total = bias + within``: the site-to-centroid term ``(1/N) sum
    |s_i - c_i|^2`` plus the within-cell variance of the target.  The
    diagram must have been solved for exactly these sites.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if not np.array_equal(sites, diagram.sites):
        raise ValueError("stale diagram: it was solved for different sites")
    n = sites.shape[0]
    bias = float(((sites - diagram.centroids) ** 2).sum() / n)
    within = float(diagram.within_cell_variance.sum())
    return SdotEnergy(bias + within, bias, within)


def sdot_flow_step(sites: np.ndarray, diagram: LaguerreDiagram, dt: float) -> np.ndarray:
    """One explicit step of the centroid flow, ``x_i += dt (c_i - x_i)``.

    ``dt = 1`` jumps straight to the centroids (a Lloyd-type iteration).
    """
    if not 0.0 < dt <= 1.0:
        raise ValueError("dt must lie in (0, 1]")
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if not np.array_equal(sites, diagram.sites):
        raise ValueError("stale diagram: it was solved for different sites")
    return sites + dt * (diagram.centroids - sites)


@dataclass
class SdotConfig:
    dt: float = 0.5
    max_steps: int = 200
    bias_rel_tol: float = 1e-6     # stationary when bias <= tol * within term
    plateau_rel_tol: float = 1e-3  # ... or when the bias stops moving
    plateau_window: int = 3
    mass_tol: float = DEFAULT_MASS_TOL
    max_weight_iters: int = 5000
    seed: int = 0


@dataclass
class SdotFlowResult:
    times: np.ndarray
    energies: np.ndarray          # total at each logged step
    biases: np.ndarray
    withins: np.ndarray
    sites: np.ndarray
    diagram: LaguerreDiagram
    converged: bool


def run_sdot_flow(sites0: np.ndarray, target: GridDensity, cfg: SdotConfig) -> SdotFlowResult:
    """Alternate (re-solve diagram, move sites) until stationarity.

    Stationary means the bias term has either shrunk to ``bias_rel_tol``
    times the within-cell floor, or stopped moving relative to itself for
    ``plateau_window`` consecutive steps (a local quantizer).
    """
    sites = np.atleast_2d(np.asarray(sites0, dtype=float)).copy()
    times, totals, biases, withins = [], [], [], []
    converged = False
    stalled = 0
    diagram = solve_laguerre(sites, target, cfg.mass_tol, cfg.max_weight_iters)
    for k in range(cfg.max_steps + 1):
        energy = sdot_energy(diagram, sites)
        times.append(k * cfg.dt)
        totals.append(energy.total)
        biases.append(energy.bias)
        withins.append(energy.within)
        if energy.bias <= cfg.bias_rel_tol * max(energy.within, 1e-300):
            converged = True
            break
        if k > 0:
            prev = biases[-2]
            if abs(prev - energy.bias) <= cfg.plateau_rel_tol * max(prev, 1e-300):
                stalled += 1
                if stalled >= cfg.plateau_window:
                    converged = True
                    break
            else:
                stalled = 0
        if k == cfg.max_steps:
            break
        sites = sdot_flow_step(sites, diagram, cfg.dt)
        diagram = solve_laguerre(sites, target, cfg.mass_tol, cfg.max_weight_iters)
    return SdotFlowResult(
        times=np.asarray(times),
        energies=np.asarray(totals),
        biases=np.asarray(biases),
        withins=np.asarray(withins),
        sites=sites,
        diagram=diagram,
        converged=converged,
    )


@dataclass
class QuantizationReport:
    ns: np.ndarray
    energies: np.ndarray
    included: np.ndarray          # mask of points used in the slope fit
    slope: float
    constant: float               # energy ~ constant * N^slope
    residual: float
    flagged: list = dc_field(default_factory=list)

    def summary(self) -> str:
        used = int(self.included.sum())
        return (
            f"quantization sweep: slope={self.slope:.3f}, constant={self.constant:.4g}, "
            f"residual={self.residual:.3g}, {used}/{self.ns.size} points used"
        )


def quantization_sweep(target: GridDensity, ns, cfg: SdotConfig | None = None) -> QuantizationReport:
    """Ultimate flow energy for each swarm size, with a log-log slope fit.

    Sites start from target samples (sub-seeded per size).  Runs that do not
    converge are excluded and flagged; the fit additionally drops sizes that
    break monotone decrease of the energy (local-quantizer stalls), since the
    scaling law concerns sufficiently large, well-converged sizes.
    """
    cfg = cfg or SdotConfig()
    ns = np.asarray(sorted(int(n) for n in ns))
    if ns.size < 2 or np.any(np.diff(ns) <= 0):
        raise ValueError("need at least two strictly increasing sizes")
    energies = np.empty(ns.size)
    flagged = []
    converged = np.ones(ns.size, dtype=bool)
    for i, n in enumerate(ns):
        rng = substream(cfg.seed, "sdot-sweep", n)
        sites0 = sample_density(target, n, rng).positions
        try:
            result = run_sdot_flow(sites0, target, cfg)
        except ConvergenceError as exc:
            logger.warning("sweep size %d failed: %s", n, exc)
            flagged.append((int(n), str(exc)))
            converged[i] = False
            energies[i] = math.nan
            continue
        energies[i] = result.energies[-1]
        if not result.converged:
            flagged.append((int(n), "flow did not reach its stationarity tolerance"))
    included = converged.copy()
    finite = np.isfinite(energies)
    included &= finite
    for i in range(1, ns.size):
        if included[i] and included[: i].any():
            prev = energies[:i][included[:i]][-1]
            if energies[i] >= prev:
                included[i] = False
                flagged.append((int(ns[i]), "energy not decreasing; excluded from fit"))
    if included.sum() < 2:
        raise ConvergenceError("fewer than two usable sweep points; cannot fit a slope")
    slope, intercept = np.polyfit(np.log(ns[included]), np.log(energies[included]), 1)
    fit = intercept + slope * np.log(ns[included])
    residual = float(np.sqrt(np.mean((np.log(energies[included]) - fit) ** 2)))
    return QuantizationReport(
        ns=ns,
        energies=energies,
        included=included,
        slope=float(slope),
        constant=float(math.exp(intercept)),
        residual=residual,
        flagged=flagged,
    )


# ---------------------------------------------------------------------------
# CSV exports


def save_diagram(path, diagram: LaguerreDiagram) -> None:
    d = diagram.sites.shape[1]
    cols = (
        [f"site{k}" for k in range(d)]
        + ["weight", "mass"]
        + [f"centroid{k}" for k in range(d)]
        + ["withinCellVariance"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(diagram.sites.shape[0]):
            row = (
                list(diagram.sites[i])
                + [diagram.weights[i], diagram.cell_masses[i]]
                + list(diagram.centroids[i])
                + [diagram.within_cell_variance[i]]
            )
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def save_sweep(path, report: QuantizationReport) -> None:
    with open(path, "w") as fh:
        fh.write("N,ultimateEnergy,includedInFit\n")
        for n, e, inc in zip(report.ns, report.energies, report.included):
            fh.write(f"{n},{e:.17g},{int(inc)}\n")
        fh.write(f"# {report.summary()}\n")
