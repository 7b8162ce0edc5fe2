"""Command-line entry points: run, se, sweep, conformance, table."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .denoisers import ExternalDenoiserClient
from .harness import (
    ENV_EXTERNAL_ADDRESS,
    ConfigError,
    ExperimentConfig,
    conformance_check,
    run_experiment,
    run_se,
    write_outputs,
)
from .priors import prior_from_dict
from .state_evolution import MseTable, build_mse_table, table_cache_key


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--output", default="out", help="output directory")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "seed_override", None):
        seeds = [int(s) for s in args.seed_override.split(",")]
        d = cfg.to_dict()
        d["seeds"] = seeds
        cfg = ExperimentConfig(**d)
    return cfg


def _say(args, msg: str):
    if not args.quiet:
        print(msg)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg, workers=args.workers)
    paths = write_outputs(args.output, result)
    ok = True
    for g in result["groups"]:
        agg = g["aggregate"]
        label = f"sweep={g['sweep_value']} " if g["sweep_value"] is not None else ""
        _say(
            args,
            f"{label}mean NMSE {agg['mean_nmse']:.4e}"
            + (f" ({agg['mean_nmse_db']:.2f} dB)" if agg["mean_nmse_db"] is not None else "")
            + f", converged={agg['all_converged']}",
        )
        ok = ok and agg["all_converged"]
    _say(args, f"wrote {paths['results']}, {paths['trace']}, {paths['se']}")
    return 0 if ok else 1


def cmd_se(args) -> int:
    cfg = _load_config(args)
    traces = run_se(cfg)
    os.makedirs(args.output, exist_ok=True)
    path = os.path.join(args.output, "se.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(traces, fh, indent=2, sort_keys=True)
        fh.write("\n")
    ok = all(t["se"]["converged"] for t in traces)
    for t in traces:
        label = f"sweep={t['sweep_value']} " if t["sweep_value"] is not None else ""
        fp = t["se"]["fixed_point"]
        if fp is None:
            _say(args, f"{label}did not converge")
        else:
            _say(args, f"{label}fixed point mse={fp['mse']:.4e} (v_A={fp['v_A_pri']:.4e})")
    _say(args, f"wrote {path}")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if args.param is not None:
        values = json.loads(args.values)
        d = cfg.to_dict()
        d["sweep"] = {"param": args.param, "values": values}
        cfg = ExperimentConfig(**d)
    if cfg.sweep is None:
        raise ConfigError("sweep: provide a sweep block in the config or --param/--values")
    result = run_experiment(cfg, workers=args.workers)
    paths = write_outputs(args.output, result)
    for g in result["groups"]:
        agg = g["aggregate"]
        _say(args, f"sweep={g['sweep_value']}: mean NMSE {agg['mean_nmse']:.4e}")
    _say(args, f"wrote {paths['results']}, {paths['trace']}, {paths['se']}")
    return 0 if all(g["aggregate"]["all_converged"] for g in result["groups"]) else 1


def cmd_conformance(args) -> int:
    prior = prior_from_dict(json.loads(args.prior))
    address = args.address or os.environ.get(ENV_EXTERNAL_ADDRESS)
    if address is None:
        print("no server address given (flag --address or env override)", file=sys.stderr)
        return 2
    if ":" in address and not address.startswith("["):
        host, port = address.rsplit(":", 1)
        client = ExternalDenoiserClient.connect(host, int(port), args.n)
    else:
        client = ExternalDenoiserClient.spawn(json.loads(address), args.n)
    try:
        report = conformance_check(prior, client, args.n, args.requests, seed=args.seed)
    finally:
        client.close()
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


def cmd_table(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    prior = prior_from_dict(cfg.prior)
    os.makedirs(args.output, exist_ok=True)
    path = os.path.join(args.output, f"mse_table_{table_cache_key(prior)}.json")
    if os.path.exists(path) and not args.rebuild:
        table = MseTable.from_dict(json.load(open(path, encoding="utf-8")))
        _say(args, f"cache hit: {path} ({len(table.grid)} points)")
        return 0
    table = build_mse_table(prior, v_min=args.v_min, v_max=args.v_max)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table.to_dict(), fh)
        fh.write("\n")
    _say(args, f"wrote {path} ({len(table.grid)} points)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stmp",
        description="Turbo message passing experiments: run, predict, sweep, check.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment over all seeds")
    _add_common(p_run)
    p_run.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    p_run.add_argument("--seed-override", help="comma-separated seed list replacing the config's")
    p_run.set_defaults(func=cmd_run)

    p_se = sub.add_parser("se", help="state-evolution prediction only, no sampling")
    _add_common(p_se)
    p_se.add_argument("--seed-override", help=argparse.SUPPRESS)
    p_se.set_defaults(func=cmd_se)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--seed-override")
    p_sweep.add_argument("--param", help="sweep parameter (overrides config sweep block)")
    p_sweep.add_argument("--values", help="JSON list of sweep values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_conf = sub.add_parser("conformance", help="test an external denoiser server")
    p_conf.add_argument("--prior", required=True, help="prior descriptor JSON")
    p_conf.add_argument("--address", help="host:port, or JSON argv list to spawn")
    p_conf.add_argument("--n", type=int, default=64)
    p_conf.add_argument("--requests", type=int, default=1000)
    p_conf.add_argument("--seed", type=int, default=0)
    p_conf.add_argument("--quiet", action="store_true")
    p_conf.set_defaults(func=cmd_conformance)

    p_table = sub.add_parser("table", help="build or refresh the cached MSE lookup table")
    _add_common(p_table)
    p_table.add_argument("--v-min", type=float, default=1e-6)
    p_table.add_argument("--v-max", type=float, default=1e2)
    p_table.add_argument("--rebuild", action="store_true")
    p_table.set_defaults(func=cmd_table)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
