"""Command-line entry point: ``cidlab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .models import ModelSpec, sample_trajectory, weight_sequence


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {text}")
    return value


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    return cfg


def _out(args, cfg=None) -> Path:
    return Path(args.out or (cfg.output_dir if cfg else "out"))


def cmd_simulate(args) -> int:
    if args.config:
        cfg = _config(args)
        spec, n, seeds, exp_id = cfg.model, cfg.horizon, cfg.replicate_seeds(), cfg.experiment_id
    else:
        spec = ModelSpec(args.model)
        n, seeds, exp_id = args.n, [args.seed or 0], args.model
    root = _out(args, cfg if args.config else None) / exp_id
    root.mkdir(parents=True, exist_ok=True)
    for i, seed in enumerate(seeds):
        traj = sample_trajectory(spec.with_seed(seed), n)
        (root / f"trajectory.r{i:03d}.csv").write_text(traj.to_csv(), newline="")
        (root / f"trajectory.r{i:03d}.json").write_text(traj.to_json() + "\n")
    print(f"wrote {len(seeds)} trajectories of length {n} to {root}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    manifest = harness.run(cfg, _out(args, cfg), args.jobs)
    print(harness.report_text(harness.report([manifest.path])), end="")
    for err in manifest.errors:
        print(f"error: replicate {err['replicate']} {err['diagnostic']}: {err['error']}",
              file=sys.stderr)
    return 0 if manifest.all_expected and not manifest.errors else 1


def cmd_fractal(args) -> int:
    from .fractal import cover_series, covers_to_csv

    if args.config:
        cfg = _config(args)
        spec, seeds, exp_id = cfg.model, cfg.replicate_seeds(), cfg.experiment_id
    else:
        spec = ModelSpec("singular", {"depth": args.depth})
        seeds, exp_id = [args.seed or 0], "fractal"
    if spec.tag != "singular":
        print("fractal needs a singular model config", file=sys.stderr)
        return 2
    depths = [int(d) for d in args.depths.split(",")]
    root = _out(args) / exp_id
    root.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        v = weight_sequence(sample_trajectory(spec.with_seed(seed), 1))
        covers = cover_series(v, depths)
        (root / f"cover.s{seed}.csv").write_text(covers_to_csv(covers), newline="")
        summary = {
            "seed": seed,
            "depth": v.depth,
            "depths": depths,
            "dim_estimates": [c.dim_estimate for c in covers],
            "final_dim_estimate": covers[-1].dim_estimate,
        }
        (root / f"cover.s{seed}.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"seed {seed}: dim estimate at depth {depths[-1]} = {covers[-1].dim_estimate:.4f}")
    return 0


def cmd_report(args) -> int:
    rows = harness.report(args.manifests)
    print(harness.report_text(rows), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(harness.report_csv(rows), newline="")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_suite(args) -> int:
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    _, rows, ok = harness.run_suite(out, args.seed, args.jobs)
    print(harness.report_text(rows), end="")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cidlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="experiment INI file")
        p.add_argument("--seed", type=_u64, help="override the master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("simulate", help="sample and save trajectories")
    common(p)
    p.add_argument("--model", default="gauss-conj", help="model tag when no config is given")
    p.add_argument("--n", type=int, default=100, help="trajectory length when no config is given")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diagnose", help="run an experiment config")
    common(p, config_required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("fractal", help="cover dimension estimates for the singular model")
    common(p)
    p.add_argument("--depth", type=int, default=40, help="weight truncation depth")
    p.add_argument("--depths", default="5,10,15,20", help="cover depths, comma separated")
    p.set_defaults(func=cmd_fractal)

    p = sub.add_parser("report", help="summarise run manifests")
    p.add_argument("manifests", nargs="*", help="manifest.json paths")
    p.add_argument("--out", help="also write report.csv here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("suite", help="run the shipped default configs")
    common(p)
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
