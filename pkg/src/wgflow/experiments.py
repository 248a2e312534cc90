"""Experiment runner: configs, benchmark scenarios, sweeps, demo tables.

Five scenarios bind the library together:

* ``potential-flow``   -- quadratic-potential descent with an additive
  disturbance field;
* ``entropic-ou``      -- the same descent under isotropic diffusion (the
  particle form of an entropic disturbance);
* ``regularized-ot``   -- transport-to-target flow where the velocity comes
  from the entropically regularized objective instead of the exact one;
* ``kde-sinkhorn``     -- a KDE-represented swarm steered by convolved
  controls extracted from a grid-level entropic transport solve;
* ``sdot``             -- the semi-discrete quantization flow.

Configs are flat INI files with one section per module.  Every run writes
plot-ready CSVs plus a manifest with a content hash, so reruns are
byte-comparable.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, flows, functionals, kde, monitor, sdot, transport
from .errors import ConfigError
from .fields import VelocityField
from .measures import (
    BoxDomain,
    GridDensity,
    ParticleEnsemble,
    TargetSet,
    load_ensemble,
    load_grid,
    sample_density,
    substream,
)

__all__ = ["ExperimentConfig", "load_config", "run", "run_sweep", "demo_figures"]

SCENARIOS = ("potential-flow", "entropic-ou", "regularized-ot", "kde-sinkhorn", "sdot")


@dataclass
class ExperimentConfig:
    """Validated experiment description (see ``load_config``)."""

    scenario: str
    seed: int
    domain: BoxDomain
    target: TargetSet
    n: int
    init: dict
    flow: flows.FlowConfig | None
    disturbance: flows.DisturbanceSignal
    direction: np.ndarray | None
    kernel_c: float
    kernel_family: str
    include_agent_count_factor: bool
    sdot_cfg: sdot.SdotConfig | None
    sweep_axis: str | None
    sweep_values: tuple
    sweep_seeds: int
    monitor_cfg: dict
    raw: dict

    def with_overrides(self, **kw) -> "ExperimentConfig":
        import dataclasses

        return dataclasses.replace(self, **kw)


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _parse_domain(sec) -> BoxDomain:
    lower = _floats(sec.get("lower", "-1"))
    upper = _floats(sec.get("upper", "1"))
    return BoxDomain(lower, upper)


def _parse_target(sec, domain: BoxDomain) -> TargetSet:
    kind = sec.get("kind", "points")
    if kind == "points":
        pts = np.array(_floats(sec.get("points", "0"))).reshape(-1, domain.dim)
        return TargetSet.from_points(pts)
    if kind == "density-gaussian":
        center = np.array(_floats(sec.get("center", "0")))
        sigma = float(sec.get("sigma", "0.2"))
        res = int(sec.get("resolution", "128"))
        grid = GridDensity.from_function(
            domain, res, lambda x: np.exp(-((x - center) ** 2).sum(axis=1) / (2 * sigma**2))
        )
        return TargetSet.from_density(grid)
    if kind == "density-uniform":
        res = int(sec.get("resolution", "128"))
        return TargetSet.from_density(GridDensity.uniform(domain, res))
    if kind == "density-file":
        return TargetSet.from_density(load_grid(sec.get("path")))
    if kind == "ensemble-file":
        return TargetSet.from_ensemble(load_ensemble(sec.get("path")))
    raise ConfigError(f"unknown target kind {kind!r}")


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment INI file.

    Raises
    ------
    ConfigError
        On unknown scenarios, missing sections required by the scenario, or
        inconsistent cross-field combinations.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    try:
        exp = parser["experiment"]
        scenario = exp.get("scenario")
        if scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
        seed = exp.getint("seed", 0)
        domain = _parse_domain(parser["domain"] if parser.has_section("domain") else {})
        target = _parse_target(
            parser["target"] if parser.has_section("target") else {}, domain
        )
        init = dict(parser["init"]) if parser.has_section("init") else {}
        n = int(init.get("n", "1000"))

        flow_cfg = None
        if parser.has_section("flow"):
            f = parser["flow"]
            flow_cfg = flows.FlowConfig(
                dt=f.getfloat("dt", 1e-3),
                t_end=f.getfloat("t_end", 5.0),
                integrator=f.get("integrator", "euler"),
                seed=seed,
                log_every=f.getint("log_every", 1),
            )
        elif scenario != "sdot":
            raise ConfigError(f"scenario {scenario!r} requires a [flow] section")

        if parser.has_section("disturbance"):
            d = parser["disturbance"]
            kind = d.get("kind", "constant")
            if kind == "constant":
                signal = flows.DisturbanceSignal.constant(d.getfloat("u0", 0.0))
            elif kind == "sinusoid":
                signal = flows.DisturbanceSignal.sinusoid(
                    d.getfloat("amplitude"), d.getfloat("period"), d.getfloat("offset")
                )
            elif kind == "piecewise":
                signal = flows.DisturbanceSignal.piecewise_constant(
                    _floats(d.get("breakpoints")), _floats(d.get("values"))
                )
            elif kind == "exp-decay":
                signal = flows.DisturbanceSignal.decaying_exponential(
                    d.getfloat("u0"), d.getfloat("rate")
                )
            else:
                raise ConfigError(f"unknown disturbance kind {kind!r}")
        else:
            signal = flows.DisturbanceSignal.zero()

        direction = None
        if parser.has_section("perturbation"):
            direction = np.array(_floats(parser["perturbation"].get("direction", "1")))
            if direction.size != domain.dim:
                raise ConfigError("perturbation direction must match the domain dimension")

        kernel_c = 0.5
        kernel_family = "gaussian"
        include_factor = False
        if parser.has_section("kernel"):
            k = parser["kernel"]
            kernel_c = k.getfloat("c", 0.5)
            kernel_family = k.get("family", "gaussian")
            include_factor = k.getboolean("include_agent_count_factor", False)
        elif scenario == "kde-sinkhorn":
            raise ConfigError("kde-sinkhorn requires a [kernel] section")

        sdot_cfg = None
        if parser.has_section("sdot"):
            s = parser["sdot"]
            sdot_cfg = sdot.SdotConfig(
                dt=s.getfloat("dt", 0.5),
                max_steps=s.getint("max_steps", 200),
                mass_tol=s.getfloat("mass_tol", sdot.DEFAULT_MASS_TOL),
                seed=seed,
            )
        elif scenario == "sdot":
            sdot_cfg = sdot.SdotConfig(seed=seed)

        sweep_axis = None
        sweep_values = ()
        sweep_seeds = 1
        if parser.has_section("sweep"):
            sw = parser["sweep"]
            sweep_axis = sw.get("axis")
            if sweep_axis not in ("u", "N", "epsilon"):
                raise ConfigError("sweep axis must be one of u, N, epsilon")
            sweep_values = tuple(_floats(sw.get("values", "")))
            if not sweep_values:
                raise ConfigError("sweep values must be nonempty")
            sweep_seeds = sw.getint("seeds", 1)

        mon = dict(parser["monitor"]) if parser.has_section("monitor") else {}

        if scenario == "kde-sinkhorn":
            if target.kind != "density":
                raise ConfigError("kde-sinkhorn requires a density target")
            if signal.sup_norm() <= 0 and sweep_axis not in ("u", "epsilon"):
                raise ConfigError("kde-sinkhorn needs a positive regularization signal")
        if scenario == "regularized-ot" and signal.sup_norm() <= 0:
            raise ConfigError("regularized-ot needs a positive regularization signal")

        raw = {s: dict(parser[s]) for s in parser.sections()}
        return ExperimentConfig(
            scenario=scenario,
            seed=seed,
            domain=domain,
            target=target,
            n=n,
            init=init,
            flow=flow_cfg,
            disturbance=signal,
            direction=direction,
            kernel_c=kernel_c,
            kernel_family=kernel_family,
            include_agent_count_factor=include_factor,
            sdot_cfg=sdot_cfg,
            sweep_axis=sweep_axis,
            sweep_values=sweep_values,
            sweep_seeds=sweep_seeds,
            monitor_cfg=mon,
            raw=raw,
        )
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


# ---------------------------------------------------------------------------
# scenario machinery


def _initial_ensemble(cfg: ExperimentConfig, seed: int) -> ParticleEnsemble:
    rng = substream(seed, "init")
    kind = cfg.init.get("kind", "uniform")
    n, dom = cfg.n, cfg.domain
    if kind == "point":
        center = np.array(_floats(cfg.init.get("center", "0")))
        return ParticleEnsemble(dom, np.tile(center, (n, 1)))
    if kind == "uniform":
        pts = dom.lower + rng.random((n, dom.dim)) * dom.widths
        return ParticleEnsemble(dom, pts)
    if kind == "gaussian":
        center = np.array(_floats(cfg.init.get("center", "0")))
        sigma = float(cfg.init.get("sigma", "0.1"))
        pts = center + sigma * rng.standard_normal((n, dom.dim))
        pts = flows.reflect(pts, dom)
        return ParticleEnsemble(dom, pts)
    if kind == "sample-target":
        if cfg.target.kind != "density":
            raise ConfigError("init kind sample-target needs a density target")
        return sample_density(cfg.target.density, n, rng)
    raise ConfigError(f"unknown init kind {kind!r}")


def kde_swarm_drift(
    target: GridDensity,
    u: flows.DisturbanceSignal,
    kernel_family: str,
    kernel_c: float,
    include_agent_count_factor: bool = False,
    solver_tol: float = 1e-6,
) -> VelocityField:
    """Drift of the KDE-represented swarm under regularized transport control.

    Per evaluation: estimate the swarm density on the target's grid, solve
    the entropic transport toward the target at ``eps = u(t)`` (warm-started
    across calls), extract the barycentric velocity field, and hand each
    agent the kernel-convolved control.  The ``1/N`` factor of the raw
    per-agent objective gradient is dropped by default (it only rescales
    time uniformly); a config flag restores it.
    """
    state = {"warm": None}

    def drift(ens: ParticleEnsemble, t: float) -> np.ndarray:
        h = kde.bandwidth_rule(ens.n, kernel_c, ens.dim)
        kspec = kde.KernelSpec(kernel_family, h, ens.dim)
        density = kde.kde_evaluate(ens, kspec, target)
        eps = max(float(u.value(t)), 1e-9)
        pots = transport.sinkhorn(
            density, target, eps, tol=solver_tol,
            warm_start=state["warm"], compute_costs=False,
        )
        state["warm"] = (pots.f, pots.g) if pots.converged else None
        ideal = VelocityField.pointwise(
            lambda pts, _t: transport.sinkhorn_velocity(pts, pots), "entropic-map"
        )
        g = kde.convolved_agent_inputs(ens, kspec, ideal, t=t)
        if include_agent_count_factor:
            g = g / ens.n
        return g

    return VelocityField.on_ensemble(drift, "kde-sinkhorn-swarm")


def _scenario_run(cfg: ExperimentConfig, seed: int):
    """Run one scenario instance; returns (TrajectoryLog, extras dict)."""
    if cfg.scenario == "sdot":
        import dataclasses

        rng = substream(seed, "sdot-init")
        if cfg.target.kind != "density":
            raise ConfigError("sdot needs a density target")
        sites0 = sample_density(cfg.target.density, cfg.n, rng).positions
        sdot_cfg = dataclasses.replace(cfg.sdot_cfg, seed=seed)
        result = sdot.run_sdot_flow(sites0, cfg.target.density, sdot_cfg)
        # the quantization floor (within-cell term) plays the disturbance
        # role for this flow: d/dt W2^2 = -2 W2^2 + 2 u(t)
        log = monitor.TrajectoryLog(
            times=result.times,
            w2=np.sqrt(result.energies),
            lyapunov=result.energies,
            pert_norm_sq=2.0 * result.withins,
            u=result.withins,
            metadata={"seed": seed, "scenario": "sdot"},
        )
        return log, {"sdot_result": result}

    x0 = _initial_ensemble(cfg, seed)
    flow_cfg = flows.FlowConfig(
        dt=cfg.flow.dt,
        t_end=cfg.flow.t_end,
        integrator=cfg.flow.integrator,
        seed=seed,
        log_every=cfg.flow.log_every,
    )
    per_particle = cfg.monitor_cfg.get("per_particle", "false").lower() == "true"

    if cfg.scenario in ("potential-flow", "entropic-ou"):
        center = cfg.target.points[0] if cfg.target.kind == "points" else np.zeros(cfg.domain.dim)
        F = functionals.quadratic_potential(center=center)
        drift = functionals.gradient_field(F, None)
        if cfg.scenario == "potential-flow":
            direction = cfg.direction if cfg.direction is not None else np.ones(cfg.domain.dim)
            direction = direction / np.linalg.norm(direction)
            zeta = VelocityField.pointwise(
                lambda pts, t: np.broadcast_to(direction, pts.shape), "constant-field"
            )
            pert = flows.PerturbationField.additive(cfg.disturbance, zeta)
        else:
            pert = flows.PerturbationField.isotropic_diffusion(cfg.disturbance)
        probes = flows.Probes(
            target=cfg.target,
            lyapunov=lambda e: functionals.eval_functional(F, e),
            per_particle_distances=per_particle and cfg.target.kind == "points",
        )
        log = flows.integrate(x0, drift, pert, flow_cfg, probes)
        return log, {"final": log.metadata["final_positions"]}

    if cfg.scenario == "regularized-ot":
        F = functionals.ot_to_target(cfg.target, epsilon=0.0)
        base = VelocityField.on_ensemble(
            lambda ens, t: functionals.gradient_field(F, ens)(ens, t), "exact-ot-descent"
        )
        pert = flows.PerturbationField.entropic_drift(cfg.disturbance, cfg.target)
        probes = flows.Probes(
            target=cfg.target,
            lyapunov=lambda e: transport.w2_to_target_set(e, cfg.target).value ** 2,
        )
        log = flows.integrate(x0, base, pert, flow_cfg, probes)
        return log, {"final": log.metadata["final_positions"]}

    if cfg.scenario == "kde-sinkhorn":
        drift = kde_swarm_drift(
            cfg.target.density,
            cfg.disturbance,
            cfg.kernel_family,
            cfg.kernel_c,
            cfg.include_agent_count_factor,
        )
        probes = flows.Probes(target=cfg.target)
        log = flows.integrate(
            x0, drift, None, flow_cfg, probes, u=cfg.disturbance
        )
        final = log.metadata["final_positions"]
        ens = ParticleEnsemble(cfg.domain, final)
        h = kde.bandwidth_rule(ens.n, cfg.kernel_c, ens.dim)
        final_kde = kde.kde_evaluate(
            ens, kde.KernelSpec(cfg.kernel_family, h, ens.dim), cfg.target.density
        )
        final_w2 = transport.w2_grid(final_kde, cfg.target.density)
        return log, {"final": final, "final_kde_w2": final_w2}

    raise ConfigError(f"unknown scenario {cfg.scenario!r}")


# ---------------------------------------------------------------------------
# artifact writing


def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(outdir: Path, cfg_raw: dict, files: list) -> None:
    entries = {f.name: _hash_file(f) for f in sorted(files)}
    combined = hashlib.sha256(
        "".join(f"{k}:{v}" for k, v in sorted(entries.items())).encode()
    ).hexdigest()
    manifest = {
        "package_version": __version__,
        "config": cfg_raw,
        "outputs": entries,
        "content_hash": combined,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _final_w2(cfg: ExperimentConfig, log: monitor.TrajectoryLog, extras: dict) -> float:
    if "final_kde_w2" in extras:
        return float(extras["final_kde_w2"])
    return float(log.w2[-1])


def _plateau_mean(log: monitor.TrajectoryLog) -> float:
    k = max(int(log.times.size * 0.2), 1)
    return float(log.w2[-k:].mean())


def run(cfg: ExperimentConfig, outdir) -> dict:
    """Run one experiment; write trajectory CSV, reports, and a manifest.

    Returns a result dict with the final distance, plateau estimate, and any
    certification verdicts.  Artifacts: ``trajectory.csv``, scenario extras
    (final positions, diagrams), ``result.json``, ``manifest.json``.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    log, extras = _scenario_run(cfg, cfg.seed)
    files = []

    traj = outdir / "trajectory.csv"
    monitor.save_log(traj, log)
    files.append(traj)

    if "final" in extras:
        fin = outdir / "final_positions.csv"
        np.savetxt(
            fin, extras["final"], delimiter=",",
            header=",".join(f"x{k}" for k in range(extras["final"].shape[1])),
            fmt="%.17g",
        )
        files.append(fin)
    if "sdot_result" in extras:
        diag = outdir / "diagram.csv"
        sdot.save_diagram(diag, extras["sdot_result"].diagram)
        files.append(diag)

    result = {
        "scenario": cfg.scenario,
        "seed": cfg.seed,
        "final_w2": _final_w2(cfg, log, extras),
        "plateau": _plateau_mean(log),
    }
    if cfg.monitor_cfg.get("check_decay", "false").lower() == "true":
        report = monitor.check_decay_condition(
            log,
            lam=float(cfg.monitor_cfg.get("lambda", "1.0")),
            gamma_gain=float(cfg.monitor_cfg.get("gamma_gain", "0.5")),
            threshold=float(cfg.monitor_cfg.get("decay_threshold", "0.99")),
        )
        result["decay_fraction"] = report.fraction
        result["decay_pass"] = bool(report.passed)
    res_file = outdir / "result.json"
    res_file.write_text(json.dumps(result, indent=2, sort_keys=True))
    files.append(res_file)
    _write_manifest(outdir, cfg.raw, files)
    return result


def _apply_axis(cfg: ExperimentConfig, axis: str, value: float, seed: int) -> ExperimentConfig:
    out = cfg.with_overrides(seed=seed)
    if axis in ("u", "epsilon"):
        return out.with_overrides(disturbance=flows.DisturbanceSignal.constant(value))
    if axis == "N":
        return out.with_overrides(n=int(round(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}")


def run_sweep(cfg: ExperimentConfig, outdir) -> dict:
    """Expand the sweep axis into child runs and aggregate the summary.

    Children live in ``<outdir>/<axis>=<value>/seed=<k>``; the summary CSV
    carries one row per child plus envelope fit metrics when the axis is a
    disturbance level with at least two values.
    """
    if cfg.sweep_axis is None:
        raise ConfigError("config has no [sweep] section")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    logs_by_value = {}
    for value in cfg.sweep_values:
        for k in range(cfg.sweep_seeds):
            child_seed = int(substream(cfg.seed, "sweep", value, k).integers(2**31))
            child_cfg = _apply_axis(cfg, cfg.sweep_axis, value, child_seed)
            child_dir = outdir / f"{cfg.sweep_axis}={value:g}" / f"seed={k}"
            res = run(child_cfg, child_dir)
            rows.append((value, k, res["final_w2"], res["plateau"]))
            logs_by_value.setdefault(value, []).append(
                monitor.load_log(child_dir / "trajectory.csv")
            )

    fit = {}
    if cfg.sweep_axis in ("u", "epsilon") and len(cfg.sweep_values) >= 2:
        try:
            env = monitor.fit_envelope(
                [lgs[0] for lgs in logs_by_value.values()],
                gamma_template=cfg.monitor_cfg.get("gamma_template", "power"),
            )
            fit = {
                "rate": env.rate,
                "K": env.K,
                "gamma_gain": env.gamma_gain,
                "gamma_exponent": env.gamma_exponent,
                "valid": env.valid,
            }
        except monitor.EnvelopeError as exc:
            fit = {"error": str(exc)}

    summary = outdir / "sweep_summary.csv"
    with open(summary, "w") as fh:
        fh.write("axisValue,seed,finalW2,plateau,envRate,envGammaGain,envGammaExponent\n")
        for value, k, fw2, plat in rows:
            fh.write(
                f"{value:g},{k},{fw2:.17g},{plat:.17g},"
                f"{fit.get('rate', math.nan):.8g},{fit.get('gamma_gain', math.nan):.8g},"
                f"{fit.get('gamma_exponent', math.nan):.8g}\n"
            )
    _write_manifest(outdir, cfg.raw, [summary])
    means = {
        v: float(np.mean([r[2] for r in rows if r[0] == v])) for v in cfg.sweep_values
    }
    return {"rows": rows, "fit": fit, "mean_final_w2": means}


# ---------------------------------------------------------------------------
# demonstration tables (L2-vs-W2 discrimination, interpolation curves)


def count_modes(values: np.ndarray, prominence: float = 0.05) -> int:
    """Strict interior local maxima above a relative prominence floor."""
    v = np.asarray(values, dtype=float)
    floor = prominence * v.max()
    interior = v[1:-1]
    return int(np.sum((interior > v[:-2]) & (interior > v[2:]) & (interior > floor)))


def _bump(domain, res, center, sigma, cutoff=3.0):
    def fn(x):
        d2 = ((x - center) ** 2).sum(axis=1)
        return np.where(d2 < (cutoff * sigma) ** 2, np.exp(-0.5 * d2 / sigma**2), 0.0)

    return GridDensity.from_function(domain, res, fn)


def demo_figures(outdir) -> dict:
    """Emit the discrimination and interpolation demo tables.

    * translated disjoint-support bumps: equal L2 distance to the target,
      strictly ordered W2 (vertical metrics cannot see horizontal motion);
    * step densities inside the target's support with the same property;
    * displacement vs. linear midpoint of two separated Gaussians: the
      displacement midpoint stays unimodal, the mixture is bimodal.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []

    # translated bumps against a far target (disjoint supports)
    dom = BoxDomain([0.0], [16.0])
    res = 512
    rho1 = _bump(dom, res, np.array([2.0]), 0.5)
    rho2 = _bump(dom, res, np.array([7.5]), 0.5)
    star = _bump(dom, res, np.array([13.5]), 1.0)
    l2_1 = transport.l2_density_distance(rho1, star)
    l2_2 = transport.l2_density_distance(rho2, star)
    w2_1 = transport.w2_grid(rho1, star)
    w2_2 = transport.w2_grid(rho2, star)

    xs = rho1.axis_centers(0)
    f = outdir / "discrimination_densities.csv"
    with open(f, "w") as fh:
        fh.write("x,rho_t1,rho_t2,rho_star\n")
        for row in zip(xs, rho1.values, rho2.values, star.values):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    files.append(f)

    # step densities supported inside the target's support
    wide = GridDensity.uniform(dom, res)
    step1 = GridDensity.from_function(
        dom, res, lambda x: ((x[:, 0] >= 1.0) & (x[:, 0] < 3.0)).astype(float)
    )
    step2 = GridDensity.from_function(
        dom, res, lambda x: ((x[:, 0] >= 6.5) & (x[:, 0] < 8.5)).astype(float)
    )
    l2_s1 = transport.l2_density_distance(step1, wide)
    l2_s2 = transport.l2_density_distance(step2, wide)
    w2_s1 = transport.w2_grid(step1, wide)
    w2_s2 = transport.w2_grid(step2, wide)

    metrics = {
        "bumps": {
            "l2": [l2_1, l2_2],
            "w2": [w2_1, w2_2],
            "equal_l2_gap": abs(l2_1 - l2_2),
            "w2_ordered": w2_2 < w2_1,
        },
        "steps": {
            "l2": [l2_s1, l2_s2],
            "w2": [w2_s1, w2_s2],
            "equal_l2_gap": abs(l2_s1 - l2_s2),
        },
    }

    # interpolation: displacement midpoint vs mixture midpoint
    idom = BoxDomain([-6.0], [6.0])
    rng = substream(20, "demo-interp")
    n = 4000
    a = ParticleEnsemble(idom, flows.reflect(-2.0 + rng.standard_normal((n, 1)), idom))
    b = ParticleEnsemble(idom, flows.reflect(2.0 + rng.standard_normal((n, 1)), idom))
    mid = transport.displacement_interpolate(a, b, 0.5)
    kspec = kde.KernelSpec("gaussian", 0.3, 1)
    grid_res = 256
    dens_a = kde.kde_evaluate(a, kspec, grid_res)
    dens_b = kde.kde_evaluate(b, kspec, grid_res)
    dens_mid = kde.kde_evaluate(mid, kspec, grid_res)
    linear_mid = GridDensity(idom, 0.5 * (dens_a.values + dens_b.values))

    f2 = outdir / "interpolation_curves.csv"
    xs2 = dens_a.axis_centers(0)
    with open(f2, "w") as fh:
        fh.write("x,rho0,rho1,displacement_mid,linear_mid\n")
        for row in zip(xs2, dens_a.values, dens_b.values, dens_mid.values, linear_mid.values):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    files.append(f2)

    end0 = transport.displacement_interpolate(a, b, 0.0)
    end1 = transport.displacement_interpolate(a, b, 1.0)
    metrics["interpolation"] = {
        "displacement_mid_modes": count_modes(dens_mid.values),
        "linear_mid_modes": count_modes(linear_mid.values),
        "endpoint0_exact": bool(np.allclose(end0.positions, a.positions)),
        "endpoint1_max_err": float(
            abs(np.sort(end1.positions[:, 0]) - np.sort(b.positions[:, 0])).max()
        ),
        "mid_mean": float(mid.positions.mean()),
        "mid_std": float(mid.positions.std()),
    }

    f3 = outdir / "demo_metrics.json"
    f3.write_text(json.dumps(metrics, indent=2, sort_keys=True))
    files.append(f3)
    _write_manifest(outdir, {"demo": "figures"}, files)
    return metrics
