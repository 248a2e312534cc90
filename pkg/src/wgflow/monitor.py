"""Trajectory certification: decay checks, gain envelopes, tail bounds.

Consumes :class:`TrajectoryLog` series produced by the flow integrator and
certifies the stability claims numerically: the Lyapunov decay inequality
along logged steps, transient/gain envelopes fitted across disturbance
levels (with pointwise domination checks, never trusting the fit alone), the
positivity sandwich between the Lyapunov value and the distance to target,
and the probabilistic tail check obtained from the fitted envelope through
Markov's inequality.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TrajectoryLog",
    "DissEnvelope",
    "DecayReport",
    "EnvelopeError",
    "check_decay_condition",
    "fit_envelope",
    "markov_nss_check",
    "check_positivity_bounds",
    "invariant_level_holds",
    "save_log",
    "load_log",
]


@dataclass
class TrajectoryLog:
    """Time series logged along one flow trajectory."""

    times: np.ndarray
    w2: np.ndarray
    lyapunov: np.ndarray
    pert_norm_sq: np.ndarray
    u: np.ndarray
    bound: np.ndarray | None = None
    per_particle_dist: np.ndarray | None = None  # (T, N)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        n = self.times.size
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        for name in ("w2", "lyapunov", "pert_norm_sq", "u"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"series {name!r} must have length {n}")
            setattr(self, name, arr)
        if np.any(self.w2 < 0) or np.any(self.lyapunov[np.isfinite(self.lyapunov)] < 0):
            raise ValueError("W2 and Lyapunov series must be nonnegative")
        if self.per_particle_dist is not None:
            self.per_particle_dist = np.asarray(self.per_particle_dist, dtype=float)
            if self.per_particle_dist.shape[0] != n:
                raise ValueError("per-particle distances must have one row per time")

    def sup_u(self) -> float:
        return float(self.u.max())


class EnvelopeError(ValueError):
    """Envelope fitting rejected the data (non-monotone or non-stationary)."""


@dataclass
class DecayReport:
    fraction: float
    threshold: float
    passed: bool
    satisfied: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    def summary(self) -> str:
        return (
            f"decay-condition: {100 * self.fraction:.2f}% of steps satisfied "
            f"(threshold {100 * self.threshold:.0f}%), {'PASS' if self.passed else 'FAIL'}"
        )


def check_decay_condition(
    log: TrajectoryLog,
    lam: float,
    gamma_gain: float = 0.5,
    threshold: float = 0.99,
    slack_coeff: float = 1.0,
) -> DecayReport:
    """Check ``dV/dt <= -lambda^2/2 W2^2 + gamma_gain * |zeta|^2`` pointwise.

    The derivative is estimated by central differences at interior logged
    points; an ``O(dt)`` slack proportional to the logging interval and the
    derivative scale absorbs discretization error.  Passes when the fraction
    of satisfied points reaches ``threshold``.
    """
    if log.times.size < 3:
        raise ValueError("need at least 3 logged points for a decay check")
    if np.any(~np.isfinite(log.lyapunov)):
        raise ValueError("decay check needs a Lyapunov series (probes.lyapunov)")
    t, V = log.times, log.lyapunov
    vdot = (V[2:] - V[:-2]) / (t[2:] - t[:-2])
    mid = slice(1, -1)
    rhs = -0.5 * lam**2 * log.w2[mid] ** 2 + gamma_gain * log.pert_norm_sq[mid]
    dt_log = float(np.median(np.diff(t)))
    scale = max(float(np.abs(vdot).max()), 1e-12)
    slack = slack_coeff * dt_log * scale + 1e-12
    satisfied = vdot <= rhs + slack
    fraction = float(np.mean(satisfied))
    return DecayReport(
        fraction=fraction,
        threshold=threshold,
        passed=fraction >= threshold,
        satisfied=satisfied,
        lhs=vdot,
        rhs=rhs,
    )


@dataclass
class DissEnvelope:
    """Fitted transient/gain envelope ``W2(t) <= K r0 e^(-rate t) + gain(u)``."""

    K: float
    rate: float
    gamma_template: str          # "linear" | "sqrt" | "power"
    gamma_gain: float
    gamma_exponent: float
    plateaus: np.ndarray
    u_levels: np.ndarray
    residual: float
    valid: bool                  # pointwise domination verified
    domination_fraction: float

    def beta(self, r0: float, t) -> np.ndarray:
        return self.K * r0 * np.exp(-self.rate * np.asarray(t))

    def gamma(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.gamma_gain * u**self.gamma_exponent

    def bound(self, r0: float, t, u_c: float) -> np.ndarray:
        return self.beta(r0, t) + float(self.gamma(u_c))


def _plateau(log: TrajectoryLog, tail_fraction: float = 0.2):
    """Mean of the trailing window, plus a stationarity diagnostic."""
    k = max(int(log.times.size * tail_fraction), 3)
    w = log.w2[-k:]
    t = log.times[-k:]
    slope = np.polyfit(t, w, 1)[0]
    noise = float(w.std())
    drift = abs(slope) * (t[-1] - t[0])
    stationary = drift <= max(3.0 * noise, 0.05 * max(w.mean(), 1e-12))
    return float(w.mean()), noise, bool(stationary)


def fit_envelope(
    logs: list,
    gamma_template: str = "power",
    tail_fraction: float = 0.2,
    domination_target: float = 0.99,
    domination_slack: float = 0.05,
    monotone_rel_tol: float = 0.05,
) -> DissEnvelope:
    """Fit the transient/gain envelope from runs at several disturbance levels.

    The gain is fitted to the stationary plateaus across levels (which must
    be nondecreasing in the disturbance, up to a relative tolerance); the
    transient rate comes from a log-linear regression of ``W2(t) - plateau``.
    Validity means the fitted envelope dominates at least
    ``domination_target`` of all logged samples with ``domination_slack``
    headroom -- checked pointwise, never assumed from the fit.

    Raises
    ------
    EnvelopeError
        On fewer than two levels, non-stationary tails, or plateaus that
        decrease as the disturbance grows.
    """
    if len(logs) < 2:
        raise EnvelopeError("need runs at >= 2 disturbance levels")
    logs = sorted(logs, key=lambda lg: lg.sup_u())
    u_levels = np.array([lg.sup_u() for lg in logs])
    plateaus, noises = [], []
    for lg in logs:
        p, noise, stationary = _plateau(lg, tail_fraction)
        if not stationary:
            raise EnvelopeError(
                f"run at |u|={lg.sup_u():.3g} has not reached stationarity"
            )
        plateaus.append(p)
        noises.append(noise)
    plateaus = np.array(plateaus)
    for i in range(len(plateaus) - 1):
        if plateaus[i + 1] < plateaus[i] * (1.0 - monotone_rel_tol) - 3.0 * noises[i]:
            raise EnvelopeError(
                "plateaus decrease across increasing disturbance levels; "
                "either the system is not dISS or runs are not stationary"
            )

    # gain fit across levels (zero-disturbance runs pin the floor only)
    pos = u_levels > 0
    if gamma_template == "linear":
        gain = float(plateaus[pos] @ u_levels[pos] / (u_levels[pos] @ u_levels[pos]))
        exponent = 1.0
    elif gamma_template == "sqrt":
        r = np.sqrt(u_levels[pos])
        gain = float(plateaus[pos] @ r / (r @ r))
        exponent = 0.5
    elif gamma_template == "power":
        if pos.sum() < 2:
            raise EnvelopeError("power-law gain fit needs >= 2 positive levels")
        lp = np.log(np.maximum(plateaus[pos], 1e-300))
        lu = np.log(u_levels[pos])
        exponent, intercept = np.polyfit(lu, lp, 1)
        gain = float(np.exp(intercept))
        exponent = float(exponent)
    else:
        raise ValueError(f"unknown gamma template {gamma_template!r}")

    # transient fit on each run: log(W2 - plateau) against t
    rates, Ks, residuals = [], [], []
    for lg, p in zip(logs, plateaus):
        y = lg.w2 - p
        r0 = lg.w2[0]
        floor = max(0.02 * max(y[0], 0.0), 3.0 * noises[0], 1e-12)
        mask = y > floor
        if mask.sum() >= 3 and y[0] > floor:
            coef = np.polyfit(lg.times[mask], np.log(y[mask]), 1)
            rates.append(-coef[0])
            Ks.append(math.exp(coef[1]) / max(r0, 1e-300))
            fit = coef[1] + coef[0] * lg.times[mask]
            residuals.append(float(np.sqrt(np.mean((np.log(y[mask]) - fit) ** 2))))
    if not rates:
        raise EnvelopeError("no run shows a usable transient above its plateau")
    rate = float(np.mean(rates))
    K = float(max(Ks))
    residual = float(np.mean(residuals))
    if rate <= 0:
        raise EnvelopeError(f"fitted transient rate {rate:.3g} is not positive")

    env = DissEnvelope(
        K=K,
        rate=rate,
        gamma_template=gamma_template,
        gamma_gain=gain,
        gamma_exponent=exponent,
        plateaus=plateaus,
        u_levels=u_levels,
        residual=residual,
        valid=False,
        domination_fraction=0.0,
    )
    total, dominated = 0, 0
    for lg in logs:
        bound = env.bound(lg.w2[0], lg.times, lg.sup_u())
        dominated += int(((1.0 + domination_slack) * bound >= lg.w2).sum())
        total += lg.times.size
    env.domination_fraction = dominated / total
    env.valid = env.domination_fraction >= domination_target
    return env


@dataclass
class MarkovReport:
    epsilons: np.ndarray
    worst_exceedance: np.ndarray
    allowed: np.ndarray
    passed: bool

    def summary(self) -> str:
        lines = [
            f"eps={e:g}: worst exceedance {x:.4f} <= {a:.4f}"
            for e, x, a in zip(self.epsilons, self.worst_exceedance, self.allowed)
        ]
        return f"markov-tail-check {'PASS' if self.passed else 'FAIL'}: " + "; ".join(lines)


def markov_nss_check(
    log: TrajectoryLog,
    envelope: DissEnvelope,
    epsilons,
    binom_sigmas: float = 3.0,
) -> MarkovReport:
    """Tail check: scaling the envelope by ``1/sqrt(eps)`` caps the fraction
    of particles beyond it at ``eps`` (Markov's inequality on dist^2).

    For each confidence level the empirical exceedance fraction must stay
    below ``eps`` plus binomial sampling slack at every logged time.
    """
    if log.per_particle_dist is None:
        raise ValueError("log carries no per-particle distances")
    n = log.per_particle_dist.shape[1]
    epsilons = np.asarray(epsilons, dtype=float)
    if np.any((epsilons <= 0) | (epsilons > 1)):
        raise ValueError("confidence levels must lie in (0, 1]")
    if np.any(n * epsilons < 20):
        raise ValueError(
            f"ensemble of size {n} is too small for the requested levels (need N*eps >= 20)"
        )
    r0 = log.w2[0]
    u_c = log.sup_u()
    base = envelope.bound(r0, log.times, u_c)  # (T,)
    worst, allowed = [], []
    for eps in epsilons:
        thresh = base / math.sqrt(eps)
        frac = (log.per_particle_dist > thresh[:, None]).mean(axis=1)
        worst.append(float(frac.max()))
        allowed.append(eps + binom_sigmas * math.sqrt(eps * (1 - eps) / n))
    worst = np.asarray(worst)
    allowed = np.asarray(allowed)
    return MarkovReport(
        epsilons=epsilons,
        worst_exceedance=worst,
        allowed=allowed,
        passed=bool(np.all(worst <= allowed)),
    )


@dataclass
class PositivityReport:
    feasible: bool
    lower: tuple
    upper: tuple
    tightest_lower_coeff: float
    tightest_upper_coeff: float
    witness: int | None

    def summary(self) -> str:
        status = "PASS" if self.feasible else "FAIL"
        return (
            f"positivity-bounds {status}: tightest a1={self.tightest_lower_coeff:.6g}, "
            f"a2={self.tightest_upper_coeff:.6g}"
            + (f", witness at index {self.witness}" if self.witness is not None else "")
        )


def check_positivity_bounds(log: TrajectoryLog, psi1: tuple, psi2: tuple) -> PositivityReport:
    """Verify the sandwich ``a1 r^p1 <= V <= a2 r^p2`` at every logged point.

    ``psi1``/``psi2`` are ``(a, p)`` power-law templates with ``a > 0`` and
    ``p >= 1``.  Also reports the tightest feasible coefficients for the
    given exponents (largest lower, smallest upper).
    """
    for a, p in (psi1, psi2):
        if a <= 0 or p < 1:
            raise ValueError("templates must be a * r^p with a > 0, p >= 1")
    r, V = log.w2, log.lyapunov
    if np.any(~np.isfinite(V)):
        raise ValueError("positivity check needs a Lyapunov series")
    a1, p1 = psi1
    a2, p2 = psi2
    lo_ok = a1 * r**p1 <= V * (1 + 1e-12) + 1e-300
    hi_ok = V <= a2 * r**p2 * (1 + 1e-12) + 1e-300
    feasible = bool(np.all(lo_ok) and np.all(hi_ok))
    witness = None
    if not feasible:
        witness = int(np.argmin(lo_ok & hi_ok))
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = r > 0
        tight_lo = float(np.min(V[pos] / r[pos] ** p1)) if pos.any() else math.inf
        tight_hi = float(np.max(V[pos] / r[pos] ** p2)) if pos.any() else 0.0
    return PositivityReport(
        feasible=feasible,
        lower=psi1,
        upper=psi2,
        tightest_lower_coeff=tight_lo,
        tightest_upper_coeff=tight_hi,
        witness=witness,
    )


def invariant_level_holds(log: TrajectoryLog, level: float, slack: float = 0.05) -> bool:
    """Once the Lyapunov value drops to ``level``, it never exceeds
    ``level * (1 + slack)`` again (the observable content of the invariant
    sublevel-set argument)."""
    V = log.lyapunov
    below = np.nonzero(V <= level)[0]
    if below.size == 0:
        return True
    first = below[0]
    return bool(np.all(V[first:] <= level * (1.0 + slack)))


# ---------------------------------------------------------------------------
# CSV interface


def save_log(path, log: TrajectoryLog) -> None:
    """Trajectory CSV: t, W2_to_target, F_value, pert_norm, u_t, bound_value."""
    bound = log.bound if log.bound is not None else np.full_like(log.times, math.nan)
    with open(path, "w") as fh:
        fh.write("t,W2_to_target,F_value,pert_norm,u_t,bound_value\n")
        for row in zip(log.times, log.w2, log.lyapunov, log.pert_norm_sq, log.u, bound):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_log(path) -> TrajectoryLog:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    bound = data["bound_value"]
    return TrajectoryLog(
        times=data["t"],
        w2=data["W2_to_target"],
        lyapunov=data["F_value"],
        pert_norm_sq=data["pert_norm"],
        u=data["u_t"],
        bound=None if np.all(np.isnan(bound)) else bound,
    )
