"""Time integration of perturbed particle flows.

Euler-Maruyama (or Heun for the deterministic part) stepping of

    dx = (drift + perturbation drift) dt + sqrt(2 u(t)) dW,

with specular reflection at the box faces (the particle-level realization of
the no-flux boundary condition) and probe logging into a
:class:`~wgflow.monitor.TrajectoryLog`.  Disturbance signals carry their
sup-norm in closed form; perturbation fields cover additive vector fields,
isotropic diffusion (the particle form of an entropic disturbance), and the
drift induced by entropic regularization of a transport objective.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import NumericsError
from .fields import VelocityField
from .functionals import FunctionalSpec, eval_functional, gradient_field, fisher_information, target_ensemble
from .kde import KernelSpec, bandwidth_rule, kde_evaluate
from .measures import BoxDomain, ParticleEnsemble, TargetSet, dists_to_set
from .monitor import TrajectoryLog
from . import transport

logger = logging.getLogger(__name__)

__all__ = [
    "DisturbanceSignal",
    "FlowConfig",
    "PerturbationField",
    "Probes",
    "integrate",
    "make_perturbed_gradient_flow",
    "perturbation_norm",
    "reflect",
]


@dataclass(frozen=True)
class DisturbanceSignal:
    """Nonnegative scalar disturbance u(t) with a closed-form sup-norm.

    All kinds satisfy the shift property: the sup-norm of ``u(. + s)`` never
    exceeds that of ``u`` for ``s >= 0``.
    """

    kind: str
    params: tuple

    @classmethod
    def constant(cls, u0: float) -> "DisturbanceSignal":
        if u0 < 0:
            raise ValueError("disturbance values must be nonnegative")
        return cls("constant", (float(u0),))

    @classmethod
    def zero(cls) -> "DisturbanceSignal":
        return cls.constant(0.0)

    @classmethod
    def sinusoid(cls, amplitude: float, period: float, offset: float) -> "DisturbanceSignal":
        if period <= 0:
            raise ValueError("period must be positive")
        if amplitude < 0 or offset < amplitude:
            raise ValueError("need offset >= amplitude >= 0 for a nonnegative signal")
        return cls("sinusoid", (float(amplitude), float(period), float(offset)))

    @classmethod
    def piecewise_constant(cls, breakpoints, values) -> "DisturbanceSignal":
        bp = tuple(float(b) for b in breakpoints)
        vals = tuple(float(v) for v in values)
        if len(bp) != len(vals):
            raise ValueError("one value per breakpoint required")
        if len(bp) == 0 or bp[0] != 0.0 or any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must start at 0 and increase")
        if any(v < 0 for v in vals):
            raise ValueError("disturbance values must be nonnegative")
        return cls("piecewise", (bp, vals))

    @classmethod
    def decaying_exponential(cls, u0: float, rate: float) -> "DisturbanceSignal":
        if u0 < 0 or rate < 0:
            raise ValueError("u0 and rate must be nonnegative")
        return cls("exp-decay", (float(u0), float(rate)))

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.params[0])
        elif self.kind == "sinusoid":
            amp, period, offset = self.params
            out = offset + amp * np.sin(2.0 * math.pi * t / period)
        elif self.kind == "piecewise":
            bp, vals = self.params
            idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, len(vals) - 1)
            out = np.asarray(vals)[idx]
        else:
            u0, rate = self.params
            out = u0 * np.exp(-rate * t)
        return float(out) if out.ndim == 0 else out

    def sup_norm(self) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "sinusoid":
            amp, _, offset = self.params
            return offset + amp
        if self.kind == "piecewise":
            return max(self.params[1])
        return self.params[0]


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    t_end: float
    integrator: str = "euler"       # "euler" | "heun"
    boundary: str = "reflect"
    seed: int = 0
    log_every: int = 1
    drift_lipschitz: float | None = None  # enables the dt stability warning

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.integrator not in ("euler", "heun"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.boundary != "reflect":
            raise ValueError("only reflecting boundaries are supported")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.drift_lipschitz is not None and self.dt > 0.5 / self.drift_lipschitz:
            logger.warning(
                "dt=%.3g exceeds the stability cap 1/(2L)=%.3g",
                self.dt, 0.5 / self.drift_lipschitz,
            )


@dataclass
class PerturbationField:
    """Disturbance entering the flow, with its driving signal.

    kinds: ``none``; ``diffusion`` (isotropic noise of amplitude
    ``sqrt(2 u(t))``, the particle form of a density-level Laplacian term);
    ``additive`` (a vector field scaled by the signal, entering with a minus
    sign alongside the descent drift); ``entropic`` (the drift induced by
    solving the transport objective with regularization ``eps = u(t)``
    instead of exactly).
    """

    kind: str = "none"
    signal: DisturbanceSignal = dc_field(default_factory=DisturbanceSignal.zero)
    zeta: VelocityField | None = None
    target: TargetSet | None = None
    solver_tol: float = 1e-6
    fisher_kernel_c: float | None = None
    fisher_resolution: int = 128

    @classmethod
    def none(cls) -> "PerturbationField":
        return cls()

    @classmethod
    def isotropic_diffusion(
        cls, signal: DisturbanceSignal, fisher_kernel_c: float | None = None,
        fisher_resolution: int = 128,
    ) -> "PerturbationField":
        return cls(
            kind="diffusion", signal=signal,
            fisher_kernel_c=fisher_kernel_c, fisher_resolution=fisher_resolution,
        )

    @classmethod
    def additive(cls, signal: DisturbanceSignal, zeta: VelocityField) -> "PerturbationField":
        return cls(kind="additive", signal=signal, zeta=zeta)

    @classmethod
    def entropic_drift(
        cls, signal: DisturbanceSignal, target: TargetSet, solver_tol: float = 1e-6
    ) -> "PerturbationField":
        if signal.sup_norm() <= 0:
            raise ValueError("entropic drift needs a positive regularization signal")
        return cls(kind="entropic", signal=signal, target=target, solver_tol=solver_tol)


@dataclass
class Probes:
    """What to measure at logging times."""

    target: TargetSet | None = None
    lyapunov: Callable | None = None      # ParticleEnsemble -> float
    per_particle_distances: bool = False  # needs a point-set target

    def __post_init__(self):
        if self.per_particle_distances and (
            self.target is None or self.target.kind != "points"
        ):
            raise ValueError("per-particle distances need a point-set target")


def reflect(positions: np.ndarray, domain: BoxDomain) -> np.ndarray:
    """Specular reflection into the box (exact for any excursion size).

    Interior coordinates pass through bitwise unchanged, so unperturbed
    trajectories replay exactly.
    """
    inside = (positions >= domain.lower) & (positions <= domain.upper)
    if np.all(inside):
        return positions
    width = domain.widths
    z = np.mod(positions - domain.lower, 2.0 * width)
    folded = domain.lower + np.minimum(z, 2.0 * width - z)
    return np.where(inside, positions, folded)


def _entropic_velocity(pert: PerturbationField, ens: ParticleEnsemble, eps: float):
    other = (
        pert.target.ensemble
        if pert.target.kind == "ensemble"
        else pert.target.density
        if pert.target.kind == "density"
        else ParticleEnsemble(ens.domain, pert.target.points)
    )
    pots = transport.sinkhorn(ens, other, eps, tol=pert.solver_tol, compute_costs=False)
    return transport.sinkhorn_velocity(ens.positions, pots)


def _exact_transport_velocity(pert: PerturbationField, ens: ParticleEnsemble):
    other = target_ensemble(pert.target, ens)
    if ens.dim == 1:
        _, plan = transport.w2_exact_1d(ens, other)
    else:
        _, plan = transport.w2_assignment(ens, other)
    return other.positions[plan.permutation] - ens.positions


def effective_velocity(
    drift: VelocityField, pert: PerturbationField | None, ens: ParticleEnsemble, t: float
) -> np.ndarray:
    """Deterministic velocity of the perturbed flow (noise handled separately).

    ``drift`` is the unperturbed field; additive perturbations subtract
    ``u(t) zeta``, and the entropic kind replaces the drift with the
    regularized transport velocity at ``eps = u(t)``.
    """
    if pert is not None and pert.kind == "entropic":
        return _entropic_velocity(pert, ens, max(pert.signal.value(t), 1e-12))
    v = drift(ens, t)
    if pert is not None and pert.kind == "additive":
        v = v - pert.signal.value(t) * pert.zeta(ens, t)
    return v


def make_perturbed_gradient_flow(F: FunctionalSpec, pert: PerturbationField | None) -> VelocityField:
    """Composite deterministic drift of the perturbed gradient flow of ``F``.

    The diffusion kind has no deterministic part and yields the pure descent
    field (its noise is added by :func:`integrate`).  For state-dependent
    functionals the descent field is rebuilt at every evaluation.
    """
    if F.kind == "potential":
        base = gradient_field(F, None)  # pointwise; rho unused
    else:
        base = VelocityField.on_ensemble(
            lambda ens, t: gradient_field(F, ens)(ens, t), f"{F.kind}-descent"
        )
    if pert is None or pert.kind in ("none", "diffusion"):
        return base
    if pert.kind == "additive":
        return VelocityField.on_ensemble(
            lambda ens, t: base(ens, t) - pert.signal.value(t) * pert.zeta(ens, t),
            "perturbed:" + base.provenance,
        )
    if pert.kind == "entropic":
        if F.kind != "ot_to_target":
            raise ValueError("entropic drift perturbs a transport objective")
        return VelocityField.on_ensemble(
            lambda ens, t: _entropic_velocity(pert, ens, max(pert.signal.value(t), 1e-12)),
            "entropic-transport-drift",
        )
    raise ValueError(f"unknown perturbation kind {pert.kind!r}")


def perturbation_norm(
    pert: PerturbationField | None, rho: ParticleEnsemble, t: float,
    drift: VelocityField | None = None,
) -> float:
    """Instantaneous squared disturbance size ``(1/N) sum |zeta_u(x_i)|^2``.

    * additive: ``u(t)^2`` times the mean squared field;
    * diffusion: ``u(t)^2`` times the measured Fisher information of a KDE
      surrogate of ``rho`` (the entropic perturbation is ``u grad log rho``);
    * entropic: mean squared deviation between the regularized and exact
      transport velocities (``drift`` may supply the exact field).
    """
    if pert is None or pert.kind == "none":
        return 0.0
    u = pert.signal.value(t)
    if pert.kind == "additive":
        z = pert.zeta(rho, t)
        return float(u**2 * np.mean((z**2).sum(axis=1)))
    if pert.kind == "diffusion":
        c = pert.fisher_kernel_c
        if c is None:
            spread = float(np.mean(rho.positions.std(axis=0)))
            c = max(1.06 * spread, 1e-3 * rho.domain.diameter)
        h = bandwidth_rule(rho.n, c, rho.dim)
        # keep the kernel resolvable on the evaluation grid
        h = max(h, 1.5 * float(rho.domain.widths.max()) / pert.fisher_resolution)
        surrogate = kde_evaluate(rho, KernelSpec("gaussian", h, rho.dim), pert.fisher_resolution)
        info = fisher_information(surrogate, on_low="clip")
        return float(u**2 * info)
    if pert.kind == "entropic":
        v_eps = _entropic_velocity(pert, rho, max(u, 1e-12))
        v_exact = (
            drift(rho, t) if drift is not None else _exact_transport_velocity(pert, rho)
        )
        return float(np.mean(((v_eps - v_exact) ** 2).sum(axis=1)))
    raise ValueError(f"unknown perturbation kind {pert.kind!r}")


def _config_hash(cfg: FlowConfig, pert: PerturbationField | None, u: DisturbanceSignal) -> str:
    blob = repr((cfg, None if pert is None else (pert.kind, pert.signal), u)).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def integrate(
    rho0: ParticleEnsemble,
    drift: VelocityField,
    pert: PerturbationField | None = None,
    cfg: FlowConfig = None,
    probes: Probes | None = None,
    u: DisturbanceSignal | None = None,
) -> TrajectoryLog:
    """Run the perturbed particle flow and log probe series.

    Steps ``x += dt * v`` (Euler, or Heun for the deterministic part) plus
    ``sqrt(2 u(t) dt)`` isotropic noise for diffusion perturbations, then
    reflects at the box faces.  Probes are measured every ``cfg.log_every``
    steps (and at the final step).  The counter-based Philox generator keyed
    by ``cfg.seed`` makes replays bit-identical.

    Raises
    ------
    NumericsError
        On non-finite positions, or when a particle leaves the twice-inflated
        box in a single step (instability escalation).
    """
    if cfg is None:
        raise ValueError("a FlowConfig is required")
    u = u if u is not None else (pert.signal if pert is not None else DisturbanceSignal.zero())
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    domain = rho0.domain
    center = 0.5 * (domain.lower + domain.upper)
    inflated = domain.widths  # inflated box: center +- widths

    x = rho0.positions.copy()
    n_steps = int(round(cfg.t_end / cfg.dt))
    diffusive = pert is not None and pert.kind == "diffusion"

    times, w2s, lyap, pnorm, uvals = [], [], [], [], []
    per_particle = [] if (probes is not None and probes.per_particle_distances) else None

    def log_state(t, ens):
        times.append(t)
        uvals.append(float(u.value(t)))
        if probes is not None and probes.target is not None:
            w2s.append(transport.w2_to_target_set(ens, probes.target).value)
        else:
            w2s.append(math.nan)
        if probes is not None and probes.lyapunov is not None:
            lyap.append(float(probes.lyapunov(ens)))
        else:
            lyap.append(math.nan)
        pnorm.append(perturbation_norm(pert, ens, t, drift=drift))
        if per_particle is not None:
            per_particle.append(dists_to_set(ens.positions, probes.target.points))

    ens = rho0
    log_state(0.0, ens)
    for k in range(n_steps):
        t = k * cfg.dt
        v = effective_velocity(drift, pert, ens, t)
        if cfg.integrator == "heun":
            pred = ParticleEnsemble(domain, reflect(x + cfg.dt * v, domain))
            v2 = effective_velocity(drift, pert, pred, t + cfg.dt)
            v = 0.5 * (v + v2)
        x_new = x + cfg.dt * v
        if diffusive:
            amp = math.sqrt(2.0 * max(u.value(t), 0.0) * cfg.dt)
            x_new = x_new + amp * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x_new)):
            raise NumericsError(f"non-finite position at step {k}")
        if np.any(np.abs(x_new - center) > inflated):
            raise NumericsError(
                f"step {k}: positions left the twice-inflated box; "
                f"dt={cfg.dt:.3g} is unstable for this drift"
            )
        x = reflect(x_new, domain)
        ens = ParticleEnsemble(domain, x)
        if (k + 1) % cfg.log_every == 0 or k == n_steps - 1:
            log_state((k + 1) * cfg.dt, ens)

    return TrajectoryLog(
        times=np.asarray(times),
        w2=np.asarray(w2s),
        lyapunov=np.asarray(lyap),
        pert_norm_sq=np.asarray(pnorm),
        u=np.asarray(uvals),
        per_particle_dist=None if per_particle is None else np.asarray(per_particle),
        metadata={
            "seed": cfg.seed,
            "dt": cfg.dt,
            "config_hash": _config_hash(cfg, pert, u),
            "final_positions": x,
        },
    )
