"""Probability measures on axis-aligned box domains.

Three concrete representations are used throughout the package:

* :class:`ParticleEnsemble` -- the empirical measure ``(1/N) sum_i delta_{x_i}``
  carried by every particle flow,
* :class:`GridDensity` -- a cell-averaged, piecewise-constant density on a
  regular grid (targets, KDE outputs, surrogates),
* :class:`TargetSet` -- a tagged union of the target kinds a flow can be
  steered to: a finite point set, a grid density, or another ensemble.

All discrete measures carry uniform weights.  Every object is immutable after
construction and safe to share between workers; randomized operations take an
explicit seed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BoxDomain",
    "ParticleEnsemble",
    "GridDensity",
    "TargetSet",
    "sample_density",
    "dist_to_set",
    "dists_to_set",
    "second_moment_about_set",
    "substream",
    "save_grid",
    "load_grid",
    "save_ensemble",
    "load_ensemble",
]

#: tolerance on |total mass - 1| for normalized grid densities
MASS_TOL = 1e-10


def substream(seed: int, *labels) -> np.random.Generator:
    """Deterministic child generator derived from ``seed`` and string labels.

    One seeded stream per experiment; sub-streams per module/replica are
    derived by hashing the labels, so parallel or out-of-order execution
    reproduces the same draws.
    """
    digest = hashlib.sha256("/".join(str(l) for l in labels).encode()).digest()
    words = tuple(int(w) for w in np.frombuffer(digest[:16], dtype=np.uint32))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=words))


def _visible_array(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BoxDomain:
    """Compact axis-aligned box ``[lower, upper] in R^d``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _visible_array(np.atleast_1d(self.lower))
        upper = _visible_array(np.atleast_1d(self.upper))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(upper - lower > 0):
            raise ValueError("box must have positive extent in every coordinate")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "BoxDomain":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def centered(cls, dim: int, halfwidth: float) -> "BoxDomain":
        return cls(-halfwidth * np.ones(dim), halfwidth * np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, points: np.ndarray, atol: float = 0.0) -> bool:
        pts = np.atleast_2d(points)
        return bool(
            np.all(pts >= self.lower - atol) and np.all(pts <= self.upper + atol)
        )


@dataclass(frozen=True)
class ParticleEnsemble:
    """Empirical measure ``(1/N) sum_i delta_{x_i}`` with all atoms in ``domain``."""

    domain: BoxDomain
    positions: np.ndarray  # (n, d)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("positions must be a nonempty (n, d) array")
        if pos.shape[1] != self.domain.dim:
            raise ValueError(
                f"positions have dimension {pos.shape[1]}, domain has {self.domain.dim}"
            )
        if not self.domain.contains(pos):
            raise ValueError("all particle positions must lie inside the domain")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def with_positions(self, positions: np.ndarray) -> "ParticleEnsemble":
        """New ensemble on the same domain."""
        return ParticleEnsemble(self.domain, positions)


@dataclass(frozen=True)
class GridDensity:
    """Piecewise-constant probability density on a regular grid.

    ``values[i0, ..., i_{d-1}]`` is the (constant) density on the cell with
    multi-index ``(i0, ..., i_{d-1})``; integrals use midpoint quadrature,
    which is exact for this representation.  The constructor requires the
    density to be normalized; use :meth:`from_values` to normalize raw data.
    """

    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != self.domain.dim:
            raise ValueError(
                f"values must have one axis per dimension ({self.domain.dim}), got {vals.ndim}"
            )
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        mass = vals.sum() * self._cell_volume(vals.shape)
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(
                f"grid density is not normalized (mass={mass!r}); build via GridDensity.from_values"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _cell_volume(self, resolution) -> float:
        return float(np.prod(self.domain.widths / np.asarray(resolution)))

    @classmethod
    def from_values(cls, domain: BoxDomain, values: np.ndarray) -> "GridDensity":
        """Normalize raw nonnegative cell values into a density."""
        vals = np.asarray(values, dtype=float)
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        cell_vol = float(np.prod(domain.widths / np.asarray(vals.shape)))
        total = vals.sum() * cell_vol
        if total <= 0:
            raise ValueError("cannot normalize a density with zero total mass")
        return cls(domain, vals / total)

    @classmethod
    def from_function(cls, domain: BoxDomain, resolution, fn) -> "GridDensity":
        """Midpoint-sample ``fn`` on the grid and normalize.

        ``fn`` takes an ``(m, d)`` array of points and returns ``(m,)`` values.
        """
        resolution = _as_resolution(resolution, domain.dim)
        grid = cls.from_values(domain, np.ones(resolution))  # layout helper
        vals = np.asarray(fn(grid.centers()), dtype=float).reshape(resolution)
        return cls.from_values(domain, vals)

    @classmethod
    def uniform(cls, domain: BoxDomain, resolution) -> "GridDensity":
        resolution = _as_resolution(resolution, domain.dim)
        return cls.from_values(domain, np.ones(resolution))

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def cell_widths(self) -> np.ndarray:
        return self.domain.widths / np.asarray(self.resolution)

    @property
    def cell_volume(self) -> float:
        return self._cell_volume(self.resolution)

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.resolution[axis]
        w = self.cell_widths[axis]
        return self.domain.lower[axis] + (np.arange(n) + 0.5) * w

    def centers(self) -> np.ndarray:
        """Cell centers as an ``(ncells, d)`` array in row-major (C) order."""
        axes = [self.axis_centers(k) for k in range(self.domain.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def cell_masses(self) -> np.ndarray:
        return self.values.ravel() * self.cell_volume


@dataclass(frozen=True)
class TargetSet:
    """Target of a flow: a finite point set, a density, or an ensemble."""

    kind: str  # "points" | "density" | "ensemble"
    points: np.ndarray | None = None
    density: GridDensity | None = None
    ensemble: ParticleEnsemble | None = None

    def __post_init__(self):
        if self.kind == "points":
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if pts.size == 0:
                raise ValueError("point-set target must be nonempty")
            pts.setflags(write=False)
            object.__setattr__(self, "points", pts)
        elif self.kind == "density":
            if self.density is None:
                raise ValueError("density target requires a GridDensity")
        elif self.kind == "ensemble":
            if self.ensemble is None:
                raise ValueError("ensemble target requires a ParticleEnsemble")
        else:
            raise ValueError(f"unknown target kind {self.kind!r}")

    @classmethod
    def from_points(cls, points) -> "TargetSet":
        return cls("points", points=points)

    @classmethod
    def from_density(cls, density: GridDensity) -> "TargetSet":
        return cls("density", density=density)

    @classmethod
    def from_ensemble(cls, ensemble: ParticleEnsemble) -> "TargetSet":
        return cls("ensemble", ensemble=ensemble)


def _as_resolution(resolution, dim: int) -> tuple:
    if np.isscalar(resolution):
        resolution = (int(resolution),) * dim
    resolution = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(resolution) != dim or any(r < 1 for r in resolution):
        raise ValueError(f"resolution must be {dim} positive cell counts")
    return resolution


def sample_density(target: GridDensity, n: int, seed) -> ParticleEnsemble:
    """Draw ``n`` i.i.d. samples from a grid density.

    Cells are chosen by a single multinomial draw over the cell masses and
    each sample is jittered uniformly inside its cell, so samples only land
    in cells of positive mass and the result is deterministic for a fixed
    seed.

    Parameters
    ----------
    target : GridDensity
        Normalized density to sample.
    n : int
        Number of samples, ``n >= 1``.
    seed : int or numpy.random.Generator
        Seed (or generator) controlling the draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    masses = target.cell_masses()
    total = masses.sum()
    if abs(total - 1.0) > MASS_TOL:
        raise ValueError(f"target density is not normalized: mass={total!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    counts = rng.multinomial(n, masses / total)
    cell_idx = np.repeat(np.arange(masses.size), counts)
    multi = np.unravel_index(cell_idx, target.resolution)
    corners = target.domain.lower + np.stack(multi, axis=1) * target.cell_widths
    jitter = rng.random((n, target.domain.dim))
    return ParticleEnsemble(target.domain, corners + jitter * target.cell_widths)


def _target_points(M) -> np.ndarray:
    if isinstance(M, TargetSet):
        if M.kind != "points":
            raise ValueError("expected a point-set target")
        return M.points
    pts = np.atleast_2d(np.asarray(M, dtype=float))
    if pts.size == 0:
        raise ValueError("point set must be nonempty")
    return pts


def dists_to_set(points: np.ndarray, M) -> np.ndarray:
    """Euclidean distance from each row of ``points`` to the nearest point of ``M``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    target = _target_points(M)
    if pts.shape[1] != target.shape[1]:
        raise ValueError("point set and query points have different dimensions")
    diff = pts[:, None, :] - target[None, :, :]
    return np.sqrt((diff**2).sum(axis=2)).min(axis=1)


def dist_to_set(point: np.ndarray, M) -> float:
    """Distance from a single point to the nearest point of the set ``M``."""
    return float(dists_to_set(np.atleast_2d(point), M)[0])


def second_moment_about_set(rho: ParticleEnsemble, M) -> float:
    """Mean squared distance ``(1/N) sum_i dist^2(x_i, M)``.

    For a target supported on ``M`` this equals the squared Wasserstein
    distance from ``rho`` to the set of all distributions on ``M``.
    """
    return float(np.mean(dists_to_set(rho.positions, M) ** 2))


# ---------------------------------------------------------------------------
# plain-text serialization


def save_grid(path, grid: GridDensity) -> None:
    """Write a grid density: text header (dim, resolution, bounds) + row-major values."""
    with open(path, "w") as fh:
        fh.write(f"dim {grid.domain.dim}\n")
        fh.write("resolution " + " ".join(str(r) for r in grid.resolution) + "\n")
        fh.write("lower " + " ".join(f"{v:.17g}" for v in grid.domain.lower) + "\n")
        fh.write("upper " + " ".join(f"{v:.17g}" for v in grid.domain.upper) + "\n")
        flat = grid.values.ravel(order="C")
        for start in range(0, flat.size, 8):
            fh.write(" ".join(f"{v:.17g}" for v in flat[start : start + 8]) + "\n")


def load_grid(path) -> GridDensity:
    with open(path) as fh:
        tokens = fh.read().split()
    it = iter(tokens)
    if next(it) != "dim":
        raise ValueError("malformed grid file: missing 'dim'")
    dim = int(next(it))
    fields = {}
    for name, count in (("resolution", dim), ("lower", dim), ("upper", dim)):
        if next(it) != name:
            raise ValueError(f"malformed grid file: missing '{name}'")
        fields[name] = [next(it) for _ in range(count)]
    domain = BoxDomain([float(v) for v in fields["lower"]], [float(v) for v in fields["upper"]])
    resolution = tuple(int(v) for v in fields["resolution"])
    values = np.array([float(v) for v in it]).reshape(resolution)
    return GridDensity(domain, values)


def save_ensemble(path, ens: ParticleEnsemble) -> None:
    """Write an ensemble as CSV, one row per particle; domain kept in comments."""
    header = (
        "lower " + " ".join(f"{v:.17g}" for v in ens.domain.lower) + "\n"
        "upper " + " ".join(f"{v:.17g}" for v in ens.domain.upper) + "\n"
        + ",".join(f"x{k}" for k in range(ens.dim))
    )
    np.savetxt(path, ens.positions, delimiter=",", header=header, fmt="%.17g")


def load_ensemble(path) -> ParticleEnsemble:
    lower = upper = None
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if body.startswith("lower "):
                lower = [float(v) for v in body.split()[1:]]
            elif body.startswith("upper "):
                upper = [float(v) for v in body.split()[1:]]
    if lower is None or upper is None:
        raise ValueError("ensemble file lacks domain header comments")
    positions = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return ParticleEnsemble(BoxDomain(lower, upper), positions)
