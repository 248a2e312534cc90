"""Kernel density estimation and the kernel-regression control field.

Provides the bandwidth law ``h = c N^{-1/(d+2)}``, KDE evaluation on grids
(with boundary mass folded back by renormalization), the kernel-regression
velocity field interpolating per-agent convolved controls, and the closed
form perturbation bound ``2 L^2 (mu2 + mu1^2) h^2`` tying the approximation
error to the kernel moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .fields import VelocityField
from .measures import BoxDomain, GridDensity, ParticleEnsemble, _as_resolution

__all__ = [
    "KernelSpec",
    "bandwidth_rule",
    "kde_evaluate",
    "kde_score",
    "nadaraya_velocity",
    "convolved_agent_inputs",
    "kde_perturbation_bound",
    "save_agent_inputs",
]

#: below this density the kernel-regression field falls back to the nearest
#: agent's control (the vanishing-density limit)
DENSITY_FLOOR = 1e-12


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.exp(gammaln(d / 2 + 1))


@dataclass(frozen=True)
class KernelSpec:
    """Isotropic smoothing kernel ``K_h`` with unit mass and known moments.

    ``mu1`` and ``mu2`` are the normalized absolute moments:
    ``int K_h(z) |z| dz = h mu1`` and ``int K_h(z) |z|^2 dz = h^2 mu2``.
    """

    family: str  # "gaussian" | "epanechnikov"
    bandwidth: float
    dim: int

    def __post_init__(self):
        if self.family not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def mu1(self) -> float:
        d = self.dim
        if self.family == "gaussian":
            return math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))
        return d * (d + 2) / ((d + 1) * (d + 3))

    @property
    def mu2(self) -> float:
        d = self.dim
        if self.family == "gaussian":
            return float(d)
        return d / (d + 4)

    @property
    def support_radius(self) -> float:
        """Radius beyond which the kernel vanishes (inf for gaussian)."""
        return math.inf if self.family == "gaussian" else self.bandwidth

    def values(self, sq_dists: np.ndarray) -> np.ndarray:
        """Kernel values from squared distances ``|x - z|^2``."""
        h, d = self.bandwidth, self.dim
        if self.family == "gaussian":
            norm = (2.0 * math.pi) ** (d / 2) * h**d
            return np.exp(-0.5 * sq_dists / h**2) / norm
        norm = 2.0 * _unit_ball_volume(d) / (d + 2) * h**d
        return np.maximum(1.0 - sq_dists / h**2, 0.0) / norm


def bandwidth_rule(n: int, c: float, d: int) -> float:
    """Bandwidth law ``h = c N^(-1/(d+2))`` coupling smoothing to swarm size."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if c <= 0:
        raise ValueError("c must be positive")
    return c * float(n) ** (-1.0 / (d + 2))


def _sq_dists(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kde_evaluate(z: ParticleEnsemble, kernel: KernelSpec, grid, chunk: int = 512) -> GridDensity:
    """Kernel density estimate of the ensemble on a grid.

    Evaluates ``(1/N) sum_i K_h(x - x_i)`` at cell centers and renormalizes
    over the box, folding back the kernel mass truncated at the boundary so
    the estimate remains a probability density on the domain.

    Parameters
    ----------
    grid : GridDensity or resolution
        Grid layout to evaluate on; a resolution uses the ensemble's domain.
    """
    if isinstance(grid, GridDensity):
        domain, resolution = grid.domain, grid.resolution
    else:
        domain = z.domain
        resolution = _as_resolution(grid, domain.dim)
    layout = GridDensity.uniform(domain, resolution)
    centers = layout.centers()
    vals = np.zeros(centers.shape[0])
    for start in range(0, z.n, chunk):
        block = z.positions[start : start + chunk]
        vals += kernel.values(_sq_dists(block, centers)).sum(axis=0)
    vals /= z.n
    return GridDensity.from_values(domain, vals.reshape(resolution))


def kde_score(z: ParticleEnsemble, kernel: KernelSpec):
    """Gradient of the log KDE, ``x -> grad log rho^{h,N}(x)``, in closed form.

    The score of a kernel mixture is the kernel-weighted average of the
    per-atom pulls; for the Epanechnikov family the (one-sided) gradient of
    the parabola is used inside its support.
    """
    h2 = kernel.bandwidth**2

    def score(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        diff = z.positions[None, :, :] - pts[:, None, :]  # (m, n, d)
        sq = (diff**2).sum(axis=2)
        if kernel.family == "gaussian":
            w = np.exp(-0.5 * sq / h2)
            numer = (w[:, :, None] * diff / h2).sum(axis=1)
            denom = w.sum(axis=1)
        else:
            w = np.maximum(1.0 - sq / h2, 0.0)
            numer = (np.where(w > 0, 2.0 / h2, 0.0)[:, :, None] * diff).sum(axis=1)
            denom = w.sum(axis=1)
        return numer / np.maximum(denom, DENSITY_FLOOR)[:, None]

    return score


def _quadrature_layout(domain: BoxDomain, kernel: KernelSpec, resolution=None) -> GridDensity:
    h = kernel.bandwidth
    if resolution is None:
        cells = np.ceil(domain.widths / (h / 4.0)).astype(int)
        cells = np.clip(cells, 8, 1024)
        resolution = tuple(int(c) for c in cells)
    else:
        resolution = _as_resolution(resolution, domain.dim)
    layout = GridDensity.uniform(domain, resolution)
    if np.any(layout.cell_widths > h / 2.0):
        raise ValueError(
            f"quadrature grid {resolution} is coarser than h/2={h/2:.4g}; "
            "the convolution would be undersampled"
        )
    return layout


def convolved_agent_inputs(
    z: ParticleEnsemble,
    kernel: KernelSpec,
    ideal_field,
    resolution=None,
    t: float = 0.0,
    chunk: int = 512,
) -> np.ndarray:
    """Per-agent controls ``g_i = (v * K_h)(x_i)`` by grid quadrature.

    ``ideal_field`` must be evaluable at arbitrary points (a pointwise
    VelocityField or a plain callable on point arrays).  The quadrature
    weights are normalized per agent, so the kernel mass truncated at the
    box boundary does not bias the average.
    """
    layout = _quadrature_layout(z.domain, kernel, resolution)
    centers = layout.centers()
    if isinstance(ideal_field, VelocityField):
        F = ideal_field.at_points(centers, t)
    else:
        F = np.asarray(ideal_field(centers), dtype=float)
    out = np.empty_like(z.positions)
    for start in range(0, z.n, chunk):
        block = z.positions[start : start + chunk]
        K = kernel.values(_sq_dists(block, centers))
        mass = np.maximum(K.sum(axis=1), DENSITY_FLOOR)
        out[start : start + chunk] = (K @ F) / mass[:, None]
    return out


def nadaraya_velocity(
    z: ParticleEnsemble,
    kernel: KernelSpec,
    ideal_field,
    resolution=None,
    t: float = 0.0,
) -> VelocityField:
    """Kernel-regression velocity field of the KDE-controlled swarm.

    Each agent carries the convolved control ``g_i = (v * K_h)(x_i)``; the
    effective transport field is their kernel regression

        field(x) = sum_j g_j K_h(x - x_j) / sum_j K_h(x - x_j),

    a convex combination of the ``g_j``.  Where the denominator falls below
    the density floor, the nearest agent's control is used (the vanishing
    density limit).
    """
    g = convolved_agent_inputs(z, kernel, ideal_field, resolution=resolution, t=t)
    agents = z.positions

    def field(points: np.ndarray, _t: float) -> np.ndarray:
        pts = np.atleast_2d(points)
        sq = _sq_dists(pts, agents)
        K = kernel.values(sq)
        denom = K.sum(axis=1)
        out = np.empty((pts.shape[0], agents.shape[1]))
        ok = denom > DENSITY_FLOOR
        if np.any(ok):
            out[ok] = (K[ok] @ g) / denom[ok, None]
        if np.any(~ok):
            nearest = np.argmin(sq[~ok], axis=1)
            out[~ok] = g[nearest]
        return out

    vf = VelocityField.pointwise(field, f"nadaraya(h={kernel.bandwidth:.4g})")
    vf.agent_inputs = g
    return vf


def kde_perturbation_bound(grad_lipschitz: float, kernel: KernelSpec) -> float:
    """Closed-form bound ``2 L^2 (mu2 + mu1^2) h^2`` on the mean-square
    deviation between the kernel-regression field and the ideal field."""
    if grad_lipschitz < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    mu1, mu2 = kernel.mu1, kernel.mu2
    return 2.0 * grad_lipschitz**2 * (mu2 + mu1**2) * kernel.bandwidth**2


def save_agent_inputs(path, g: np.ndarray) -> None:
    """Per-agent convolved controls as CSV (debugging aid)."""
    header = ",".join(f"g{k}" for k in range(g.shape[1]))
    np.savetxt(path, g, delimiter=",", header=header, fmt="%.17g")
