"""Command-line entry point.

Subcommands: ``simulate``, ``sweep``, ``check``, ``demo-figures``, ``sdot``,
``version``.  Exit codes: 0 success/pass, 1 invalid configuration, 2
numerical failure, 3 certification FAIL.
"""
from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

from . import __version__, experiments, monitor
from .errors import ConfigError, NumericsError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICS = 2
EXIT_CERTIFICATION = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wgflow",
        description="Perturbed Wasserstein gradient flows with stability certification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one experiment from a config file")
    sim.add_argument("config")
    sim.add_argument("--outdir", default=None, help="override the config's output directory")

    sw = sub.add_parser("sweep", help="expand the config's sweep axis into child runs")
    sw.add_argument("config")
    sw.add_argument("--outdir", default=None)

    chk = sub.add_parser("check", help="certify a trajectory CSV against a monitor config")
    chk.add_argument("trajectory")
    chk.add_argument("monitor_config")
    chk.add_argument("--report", default=None, help="write the report CSV here")

    demo = sub.add_parser("demo-figures", help="emit the discrimination/interpolation tables")
    demo.add_argument("outdir")

    sd = sub.add_parser("sdot", help="run the semi-discrete transport scenario")
    sd.add_argument("config")
    sd.add_argument("--outdir", default=None)

    sub.add_parser("version", help="print the package version")
    return parser


def _outdir(cfg, override) -> str:
    if override:
        return override
    return cfg.raw.get("experiment", {}).get("outdir", "wgflow-out")


def _cmd_simulate(args) -> int:
    cfg = experiments.load_config(args.config)
    result = experiments.run(cfg, _outdir(cfg, args.outdir))
    print(json.dumps(result, indent=2, sort_keys=True))
    if result.get("decay_pass") is False:
        return EXIT_CERTIFICATION
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = experiments.load_config(args.config)
    result = experiments.run_sweep(cfg, _outdir(cfg, args.outdir))
    print(json.dumps({"fit": result["fit"], "mean_final_w2": result["mean_final_w2"]},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_check(args) -> int:
    log = monitor.load_log(args.trajectory)
    parser = configparser.ConfigParser()
    if not parser.read(args.monitor_config):
        raise ConfigError(f"cannot read monitor config {args.monitor_config}")
    mon = parser["monitor"] if parser.has_section("monitor") else parser["DEFAULT"]

    verdicts = []
    report = monitor.check_decay_condition(
        log,
        lam=mon.getfloat("lambda", 1.0),
        gamma_gain=mon.getfloat("gamma_gain", 0.5),
        threshold=mon.getfloat("decay_threshold", 0.99),
    )
    verdicts.append(("decay", report.passed, report.summary()))

    if mon.get("psi1", None) and mon.get("psi2", None):
        a1, p1 = (float(v) for v in mon.get("psi1").split())
        a2, p2 = (float(v) for v in mon.get("psi2").split())
        pos = monitor.check_positivity_bounds(log, (a1, p1), (a2, p2))
        verdicts.append(("positivity", pos.feasible, pos.summary()))

    if args.report:
        with open(args.report, "w") as fh:
            fh.write("check,passed,detail\n")
            for name, ok, summary in verdicts:
                fh.write(f"{name},{int(ok)},\"{summary}\"\n")
    all_ok = all(ok for _, ok, _ in verdicts)
    metrics = "; ".join(s for _, _, s in verdicts)
    print(f"{'PASS' if all_ok else 'FAIL'} {metrics}")
    return EXIT_OK if all_ok else EXIT_CERTIFICATION


def _cmd_demo(args) -> int:
    metrics = experiments.demo_figures(args.outdir)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_sdot(args) -> int:
    cfg = experiments.load_config(args.config)
    if cfg.scenario != "sdot":
        raise ConfigError("the sdot subcommand needs a config with scenario = sdot")
    out = _outdir(cfg, args.outdir)
    if cfg.sweep_axis is not None:
        result = experiments.run_sweep(cfg, out)
        print(json.dumps({"mean_final_w2": result["mean_final_w2"]}, indent=2, sort_keys=True))
    else:
        result = experiments.run(cfg, out)
        print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "check": _cmd_check,
        "demo-figures": _cmd_demo,
        "sdot": _cmd_sdot,
    }
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericsError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


if __name__ == "__main__":
    sys.exit(main())
