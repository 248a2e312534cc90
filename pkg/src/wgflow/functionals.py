"""Functionals on measures, their gradient fields, and property checkers.

Supported functionals: lifted potential energies ``rho -> E_rho[V]`` (proper
loss functions), the entropy ``int rho log rho``, and squared transport
distance to a target (exact or entropic).  Each exposes a value and a
particle velocity field; the checkers measure the quadratic-growth,
gradient-dominance, and smoothness moduli empirically on batches of
ensembles, reporting moduli rather than booleans so tolerances stay in
caller-controlled config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .fields import VelocityField
from .kde import KernelSpec, bandwidth_rule, kde_score
from .measures import GridDensity, ParticleEnsemble, TargetSet, sample_density
from . import transport

__all__ = [
    "FunctionalSpec",
    "potential_energy",
    "quadratic_potential",
    "entropy_functional",
    "ot_to_target",
    "eval_functional",
    "gradient_field",
    "CheckerReport",
    "check_quadratic_growth",
    "check_gradient_dominance",
    "check_l_smoothness",
    "fisher_information",
    "save_report",
]


@dataclass(frozen=True)
class FunctionalSpec:
    """A functional on probability measures.

    Exactly one ``kind`` is active; ``convexity`` (lambda) and ``smoothness``
    (l) are *claimed* moduli used by the checkers, and may be left unset.
    """

    kind: str  # "potential" | "entropy" | "ot_to_target"
    potential: Callable | None = None        # V: (m, d) -> (m,)
    potential_grad: Callable | None = None   # grad V: (m, d) -> (m, d)
    grad_lipschitz: float | None = None      # Lipschitz constant of grad V
    score: Callable | None = None            # oracle grad log rho, for entropy
    kernel_c: float = 1.0                    # bandwidth constant for KDE score
    target: TargetSet | None = None          # for ot_to_target
    epsilon: float = 0.0                     # entropic regularization (0 exact)
    convexity: float | None = None
    smoothness: float | None = None


def potential_energy(
    V: Callable,
    grad_V: Callable,
    grad_lipschitz: float | None = None,
    convexity: float | None = None,
    smoothness: float | None = None,
) -> FunctionalSpec:
    """Lift a pointwise loss to the functional ``rho -> E_rho[V]``."""
    return FunctionalSpec(
        kind="potential",
        potential=V,
        potential_grad=grad_V,
        grad_lipschitz=grad_lipschitz,
        convexity=convexity,
        smoothness=smoothness,
    )


def quadratic_potential(center=0.0, modulus: float = 1.0) -> FunctionalSpec:
    """``V(x) = modulus |x - center|^2 / 2``, the workhorse benchmark."""
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def V(pts):
        return 0.5 * modulus * ((pts - c) ** 2).sum(axis=1)

    def grad_V(pts):
        return modulus * (pts - c)

    return FunctionalSpec(
        kind="potential",
        potential=V,
        potential_grad=grad_V,
        grad_lipschitz=modulus,
        convexity=modulus,
        smoothness=modulus,
    )


def entropy_functional(score: Callable | None = None, kernel_c: float = 1.0) -> FunctionalSpec:
    """Entropy ``int rho log rho``; needs a density surrogate to evaluate.

    ``score`` may supply an oracle ``grad log rho``; otherwise the gradient
    field builds a Gaussian-KDE score with bandwidth ``kernel_c N^(-1/(d+2))``.
    """
    return FunctionalSpec(kind="entropy", score=score, kernel_c=kernel_c)


def ot_to_target(target: TargetSet, epsilon: float = 0.0, smoothness: float | None = None) -> FunctionalSpec:
    """Squared transport distance to a target (entropic when epsilon > 0)."""
    return FunctionalSpec(
        kind="ot_to_target", target=target, epsilon=epsilon,
        convexity=None, smoothness=smoothness,
    )


def eval_functional(
    F: FunctionalSpec, rho: ParticleEnsemble, surrogate: GridDensity | None = None
) -> float:
    """Value of the functional at an empirical measure.

    Entropy requires a grid/KDE ``surrogate`` density of ``rho`` (the entropy
    of a raw atomic measure is minus infinity).  The transport kind returns
    the squared distance (regularized transport cost when epsilon > 0).
    """
    if F.kind == "potential":
        return float(np.mean(F.potential(rho.positions)))
    if F.kind == "entropy":
        if surrogate is None:
            raise ValueError("entropy needs a grid/KDE density surrogate of rho")
        vals = surrogate.values
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(vals > 0, vals * np.log(vals), 0.0)
        return float(terms.sum() * surrogate.cell_volume)
    if F.kind == "ot_to_target":
        if F.epsilon > 0:
            other = _target_measure(F.target, rho)
            pots = transport.sinkhorn(rho, other, F.epsilon)
            return float(pots.regularized_cost)
        return float(transport.w2_to_target_set(rho, F.target).value ** 2)
    raise ValueError(f"unknown functional kind {F.kind!r}")


def _target_measure(target: TargetSet, rho: ParticleEnsemble):
    """A measure object for transport backends (ensemble or grid)."""
    if target.kind == "ensemble":
        return target.ensemble
    if target.kind == "density":
        return target.density
    return ParticleEnsemble(rho.domain, target.points)


def target_ensemble(target: TargetSet, rho: ParticleEnsemble, n: int | None = None) -> ParticleEnsemble:
    """An equal-size ensemble representing the target (resampling densities)."""
    n = n or rho.n
    if target.kind == "ensemble":
        return target.ensemble
    if target.kind == "density":
        return sample_density(target.density, n, transport.DENSITY_RESAMPLE_SEED)
    pts = target.points
    reps = np.resize(np.arange(pts.shape[0]), n)
    return ParticleEnsemble(rho.domain, pts[reps])


def gradient_field(F: FunctionalSpec, rho: ParticleEnsemble) -> VelocityField:
    """Velocity field of the Wasserstein gradient flow of ``F`` at ``rho``.

    The flow velocity is minus the gradient of the first variation:
    ``-grad V`` for potentials, ``-grad log rho`` (via KDE or oracle score)
    for the entropy, and the transport displacement toward the target for
    the distance kind (barycentric entropic map for epsilon > 0, optimal
    assignment for epsilon = 0; the latter is bound to ``rho``'s atoms).
    """
    if F.kind == "potential":
        grad = F.potential_grad
        return VelocityField.pointwise(lambda pts, t: -grad(pts), "potential-descent")
    if F.kind == "entropy":
        if F.score is not None:
            score = F.score
            return VelocityField.pointwise(
                lambda pts, t: -np.asarray(score(pts)), "entropy-descent-oracle"
            )

        def ens_fn(ens, t):
            h = bandwidth_rule(ens.n, F.kernel_c, ens.dim)
            sc = kde_score(ens, KernelSpec("gaussian", h, ens.dim))
            return -np.asarray(sc(ens.positions))

        return VelocityField.on_ensemble(ens_fn, "entropy-descent-kde")
    if F.kind == "ot_to_target":
        if F.epsilon > 0:
            other = _target_measure(F.target, rho)
            pots = transport.sinkhorn(rho, other, F.epsilon, compute_costs=False)
            return VelocityField.pointwise(
                lambda pts, t: transport.sinkhorn_velocity(pts, pots),
                f"entropic-transport(eps={F.epsilon:.3g})",
            )
        other = target_ensemble(F.target, rho)
        if rho.dim == 1:
            _, plan = transport.w2_exact_1d(rho, other)
        else:
            _, plan = transport.w2_assignment(rho, other)
        disp = other.positions[plan.permutation] - rho.positions
        base = rho.positions

        def bound_field(pts, t):
            if pts.shape != base.shape or not np.array_equal(pts, base):
                raise ValueError("exact transport field is bound to its ensemble")
            return disp

        return VelocityField(provenance="exact-transport", point_fn=None,
                             ensemble_fn=lambda ens, t: bound_field(ens.positions, t))
    raise ValueError(f"unknown functional kind {F.kind!r}")


# ---------------------------------------------------------------------------
# empirical property checkers


@dataclass
class CheckerReport:
    """Outcome of an empirical modulus check over a batch of samples."""

    name: str
    lhs: np.ndarray
    rhs: np.ndarray
    ratios: np.ndarray
    empirical_modulus: float
    skipped: list
    violations: list
    claimed: float | None
    passed: bool | None

    def summary(self) -> str:
        status = "n/a" if self.passed is None else ("pass" if self.passed else "FAIL")
        return (
            f"{self.name}: modulus={self.empirical_modulus:.6g} "
            f"({len(self.ratios)} samples, {len(self.skipped)} skipped, "
            f"{len(self.violations)} violations, claimed={self.claimed}, {status})"
        )


def _functional_min(F: FunctionalSpec, target: TargetSet, rho0: ParticleEnsemble) -> float:
    rep = target_ensemble(target, rho0)
    return eval_functional(F, rep)


def check_quadratic_growth(
    F: FunctionalSpec,
    samples: Sequence[ParticleEnsemble],
    target: TargetSet,
    claimed: float | None = None,
    rel_tol: float = 1e-6,
    skip_tol: float = 1e-12,
) -> CheckerReport:
    """Empirical quadratic-growth modulus.

    For each sample the ratio ``2 (F(rho) - F*) / W2^2(rho, target)`` is an
    upper-bound witness for the growth modulus; the reported empirical
    modulus is the minimum ratio.  Samples at the target (W2 below
    ``skip_tol``) are skipped with a note.
    """
    claimed = claimed if claimed is not None else F.convexity
    f_star = _functional_min(F, target, samples[0])
    lhs, rhs, ratios, skipped = [], [], [], []
    for idx, rho in enumerate(samples):
        w2 = transport.w2_to_target_set(rho, target).value
        if w2 <= skip_tol:
            skipped.append(idx)
            continue
        gap = eval_functional(F, rho) - f_star
        lhs.append(2.0 * gap)
        rhs.append(w2**2)
        ratios.append(2.0 * gap / w2**2)
    ratios = np.asarray(ratios)
    modulus = float(ratios.min()) if ratios.size else math.nan
    violations = (
        [i for i, r in enumerate(ratios) if r < claimed * (1.0 - rel_tol)]
        if claimed is not None
        else []
    )
    return CheckerReport(
        name="quadratic-growth",
        lhs=np.asarray(lhs),
        rhs=np.asarray(rhs),
        ratios=ratios,
        empirical_modulus=modulus,
        skipped=skipped,
        violations=violations,
        claimed=claimed,
        passed=None if claimed is None else not violations,
    )


def check_gradient_dominance(
    F: FunctionalSpec,
    samples: Sequence[ParticleEnsemble],
    target: TargetSet,
    claimed: float | None = None,
    rel_tol: float = 1e-6,
    skip_tol: float = 1e-12,
) -> CheckerReport:
    """Empirical gradient-dominance modulus.

    Ratio per sample: ``|grad dF/drho|^2_rho / (2 (F(rho) - F*))``, with the
    squared field norm measured as the particle average of the gradient
    field.  Samples with vanishing functional gap are skipped.
    """
    claimed = claimed if claimed is not None else F.convexity
    f_star = _functional_min(F, target, samples[0])
    lhs, rhs, ratios, skipped = [], [], [], []
    for idx, rho in enumerate(samples):
        gap = eval_functional(F, rho) - f_star
        if abs(gap) <= skip_tol:
            skipped.append(idx)
            continue
        v = gradient_field(F, rho)(rho)
        grad_sq = float(np.mean((v**2).sum(axis=1)))
        lhs.append(grad_sq)
        rhs.append(2.0 * gap)
        ratios.append(grad_sq / (2.0 * gap))
    ratios = np.asarray(ratios)
    modulus = float(ratios.min()) if ratios.size else math.nan
    violations = (
        [i for i, r in enumerate(ratios) if r < claimed * (1.0 - rel_tol)]
        if claimed is not None
        else []
    )
    return CheckerReport(
        name="gradient-dominance",
        lhs=np.asarray(lhs),
        rhs=np.asarray(rhs),
        ratios=ratios,
        empirical_modulus=modulus,
        skipped=skipped,
        violations=violations,
        claimed=claimed,
        passed=None if claimed is None else not violations,
    )


def check_l_smoothness(
    F: FunctionalSpec,
    pairs: Sequence[tuple],
    claimed: float | None = None,
    rel_tol: float = 1e-6,
    skip_tol: float = 1e-12,
) -> CheckerReport:
    """Empirical smoothness modulus along optimal-transport directions.

    For each pair the directional derivative is evaluated through the
    optimal assignment plan, and the ratio ``|F1 - F0 - D_v F| / (W2^2 / 2)``
    upper-bounds the smoothness modulus; the report carries the maximum.
    """
    claimed = claimed if claimed is not None else F.smoothness
    lhs, rhs, ratios, skipped = [], [], [], []
    for idx, (rho0, rho1) in enumerate(pairs):
        if rho0.dim == 1:
            w2, plan = transport.w2_exact_1d(rho0, rho1)
        else:
            w2, plan = transport.w2_assignment(rho0, rho1)
        if w2 <= skip_tol:
            skipped.append(idx)
            continue
        v = rho1.positions[plan.permutation] - rho0.positions
        grad_phi = -gradient_field(F, rho0)(rho0)
        d_v = float(np.mean((grad_phi * v).sum(axis=1)))
        remainder = abs(eval_functional(F, rho1) - eval_functional(F, rho0) - d_v)
        lhs.append(remainder)
        rhs.append(0.5 * w2**2)
        ratios.append(remainder / (0.5 * w2**2))
    ratios = np.asarray(ratios)
    modulus = float(ratios.max()) if ratios.size else math.nan
    violations = (
        [i for i, r in enumerate(ratios) if r > claimed * (1.0 + rel_tol)]
        if claimed is not None
        else []
    )
    return CheckerReport(
        name="l-smoothness",
        lhs=np.asarray(lhs),
        rhs=np.asarray(rhs),
        ratios=ratios,
        empirical_modulus=modulus,
        skipped=skipped,
        violations=violations,
        claimed=claimed,
        passed=None if claimed is None else not violations,
    )


def fisher_information(rho: GridDensity, floor: float | None = None, on_low: str = "error") -> float:
    """Fisher information ``int |grad rho|^2 / rho`` by central differences
    and midpoint quadrature.

    ``floor`` defaults to ``1e-12`` times the uniform density.  Cells below
    the floor raise (naming the first offending cell) unless
    ``on_low="clip"``, which clamps the denominator instead.
    """
    if floor is None:
        floor = 1e-12 / rho.domain.volume
    vals = rho.values
    low = vals < floor
    if np.any(low):
        if on_low == "error":
            idx = tuple(int(k) for k in np.argwhere(low)[0])
            raise ValueError(
                f"density below floor {floor:.3g} at cell {idx}; Fisher "
                "information needs a strictly positive density"
            )
        vals = np.maximum(vals, floor)
    if rho.domain.dim == 1:
        grads = [np.gradient(vals, rho.cell_widths[0])]
    else:
        grads = np.gradient(vals, *rho.cell_widths)
    grad_sq = sum(g**2 for g in grads)
    return float((grad_sq / vals).sum() * rho.cell_volume)


def save_report(path, report: CheckerReport) -> None:
    """Checker report as CSV rows (sample, lhs, rhs, ratio) + summary line."""
    with open(path, "w") as fh:
        fh.write("sample,lhs,rhs,ratio\n")
        for i, (l, r, q) in enumerate(zip(report.lhs, report.rhs, report.ratios)):
            fh.write(f"{i},{l:.17g},{r:.17g},{q:.17g}\n")
        fh.write(f"# {report.summary()}\n")
