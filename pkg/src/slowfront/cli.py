"""Command line: ``slowfront <subcommand> --config <path> [--out <dir>] [--workers N]``.

Subcommand-specific flags override the matching config fields, and for
``dde``, ``speed`` and ``simulate`` they may replace the config file
entirely. The exit code is 0 only if every manifest assertion passes.
"""

from __future__ import annotations

import argparse
import sys

from .harness import ConfigError, ExperimentConfig, load_sweep, run_experiment, sweep

SUBCOMMAND_KIND = {"validate": "validate", "dde": "dde-study", "speed": "speed-study",
                   "simulate": "simulate", "barriers": "barriers", "theorem1": "theorem1",
                   "generation": "generation"}


def parse_nonlinearity(text: str) -> dict:
    """``ricker:2.0`` or ``linear:1.5``."""
    kind, _, arg = text.partition(":")
    if kind == "ricker":
        return {"kind": "ricker", "p": float(arg)}
    if kind == "linear":
        return {"kind": "linear", "slope": float(arg)}
    raise argparse.ArgumentTypeError(f"unsupported nonlinearity {text!r} (use ricker:P or linear:S)")


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slowfront", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--workers", type=int, default=1, help="concurrent runs (sweep only)")

    for name in ("validate", "barriers", "theorem1", "generation"):
        sp = sub.add_parser(name)
        common(sp, True)
        sp.add_argument("--eps", type=_floats, help="comma separated eps list")
    sp = sub.add_parser("sweep", help="run a list of configs")
    common(sp, True)

    sp = sub.add_parser("dde", help="delay-ODE stability, derivative bounds and generation")
    common(sp, False)
    sp.add_argument("--nonlinearity", type=parse_nonlinearity)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--eps", type=_floats)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--horizon", type=float, help="integration horizon of the decay fit")

    sp = sub.add_parser("speed", help="dispersion and measured front speeds")
    common(sp, False)
    sp.add_argument("--nonlinearity", type=parse_nonlinearity)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--etas", type=_floats)
    sp.add_argument("--length", type=float, help="half-width L of the speed domain")
    sp.add_argument("--nx", type=int)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--method", choices=("dispersion", "measure", "both", "sweep"))

    sp = sub.add_parser("simulate", help="one scaled run written as snapshot CSVs")
    common(sp, False)
    sp.add_argument("--nonlinearity", type=parse_nonlinearity)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--eps", type=_floats)
    sp.add_argument("--geometry", choices=("line", "ball"))
    sp.add_argument("--extent", type=float, help="L for a line, R_max for a ball")
    sp.add_argument("--dim", type=int)
    sp.add_argument("--cells-per-eps", type=int)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--snapshots", type=int, help="number of equally spaced snapshot times")
    return p


def config_from_args(args) -> ExperimentConfig:
    kind = SUBCOMMAND_KIND[args.command]
    data = {"kind": kind}
    if args.config:
        data = ExperimentConfig.load(args.config).to_dict()
        if data["kind"] != kind:
            raise ConfigError(f"config kind {data['kind']!r} does not match subcommand {args.command!r}")
    g = dict(data.get("geometry", {}))
    grid = dict(data.get("grid", {}))
    dde_opts = dict(data.get("dde", {}))
    gen = dict(data.get("generation", {}))
    v = vars(args)
    for key in ("nonlinearity", "tau", "eps", "etas", "method", "snapshots"):
        if v.get(key) is not None:
            data[key] = v[key]
    if args.command == "speed":
        for flag, key in (("length", "L"), ("nx", "nx"), ("horizon", "T")):
            if v.get(flag) is not None:
                grid[key] = v[flag]
    elif args.command == "dde":
        if v.get("rho") is not None:
            dde_opts["rho"] = v["rho"]
        if v.get("horizon") is not None:
            dde_opts["T"] = v["horizon"]
    elif args.command == "simulate":
        for flag, key in (("geometry", "shape"), ("extent", "extent"), ("dim", "dim")):
            if v.get(flag) is not None:
                g[key] = v[flag]
        if v.get("cells_per_eps") is not None:
            grid["cells_per_eps"] = v["cells_per_eps"]
        if v.get("horizon") is not None:
            data["horizon"] = v["horizon"]
    data.update(geometry=g, grid=grid, dde=dde_opts, generation=gen)
    if args.out:
        data["output"] = args.out
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            configs = load_sweep(args.config)
            if args.out:
                configs = [c.replace(output=f"{args.out}/{i:03d}-{c.kind}") for i, c in enumerate(configs)]
            manifests = sweep(configs, args.workers)
        else:
            manifests = [run_experiment(config_from_args(args))]
    except (ConfigError, ValueError, OSError) as exc:
        print(f"slowfront: {exc}", file=sys.stderr)
        return 2
    for m in manifests:
        print(f"[{m.kind}] {'PASS' if m.passed else 'FAIL'}")
        for line in m.summary_lines():
            print("  " + line)
    return 0 if all(m.passed for m in manifests) else 1


if __name__ == "__main__":
    sys.exit(main())
