"""Command line entry point: ``doreg <subcommand> ...``.

Every flag overrides the matching key of the JSON config given by ``--config``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, perturb
from .cloud import CloudError, save
from .descriptor import write_histogram_csv
from .regressor import MapFileError, MapSequence, TrainingError


def _common(p, seed_required=False):
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--output-dir", dest="output_dir", help="config: output_dir")
    p.add_argument("--seed", type=int, required=seed_required, help="config: seed")
    p.add_argument("--model", dest="model_path", help="model PLY/CSV (config: model.path)")
    p.add_argument("--n-points", dest="n_points", type=int, help="config: model.n_points")


def _config(args, **extra) -> dict:
    overrides = {
        "output_dir": getattr(args, "output_dir", None),
        "seed": getattr(args, "seed", None),
        "model.path": getattr(args, "model_path", None),
        "model.n_points": getattr(args, "n_points", None),
        **extra,
    }
    return bench.load_config(args.config, overrides)


def _algorithms(value):
    return None if value is None else [a.strip() for a in value.split(",") if a.strip()]


def cmd_gen_model(args) -> int:
    cfg = _config(args, **{"model.shape": args.shape, "model.path": args.input})
    model, record = bench.load_model(cfg["model"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(model, out)
    if record is not None:
        out.with_suffix(".scale.json").write_text(json.dumps(
            {"centroid": [float(v) for v in record.centroid], "scale": float(record.scale)},
            indent=2) + "\n")
    print(f"wrote {len(model)}-point unit-normalized model to {out}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _config(args, **{"training.n": args.n, "sweeps.per_level": args.per_level})
    root = bench.generate_data(cfg, args.what)
    print(f"wrote pair directories under {root}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, **{
        "training.n": args.n, "training.K": args.K, "training.lambda": args.lam,
        "training.solver": args.solver, "training.data_dir": args.data_dir,
        "algorithms": _algorithms(args.algorithms),
    })

    def progress(k, err):
        print(f"  stage {k}: mean error {err:.6f}", file=sys.stderr)

    for alg, (path, trace) in bench.train_maps(cfg, progress=progress).items():
        print(f"{alg}: {len(trace.mean) - 1} maps, final mean error {trace.mean[-1]:.6f} -> {path}")
    return 0


def cmd_register(args) -> int:
    cfg = _config(args, **{"sweeps.metric_points": args.metric_points})
    pair = perturb.load_pair(args.pair)
    model, contexts = bench.build_contexts(cfg, [args.algorithm])
    ctx = contexts.get(args.algorithm)
    maps = None
    if ctx is not None:
        path = Path(args.maps) if args.maps else bench.maps_path(cfg, args.algorithm)
        maps = MapSequence.load(path, ctx.fingerprint(), force=args.force)
    sc = cfg["sweeps"]
    result = bench.register(args.algorithm, pair, model, ctx, maps,
                            args.max_iter or sc["max_iter"], args.epsilon or sc["epsilon"],
                            record_histograms=bool(args.histograms))
    if args.trace:
        result.write_trace_csv(args.trace)
    if args.histograms and ctx is not None:
        write_histogram_csv(args.histograms, result.histograms())
    reg, star = bench.metric_clouds(pair, result.T_final, sc["metric_points"])
    print(json.dumps({
        "algorithm": args.algorithm,
        "iterations": result.iterations,
        "terminated_by": result.terminated_by,
        "x_final": [float(v) for v in result.x_final],
        "point_acc": bench.point_acc(reg, star, sc["t_pt"]),
        "point_rmse": bench.point_rmse(reg, star),
    }, indent=2))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args, **{
        "sweeps.per_level": args.per_level, "sweeps.metric_points": args.metric_points,
        "sweeps.data_dir": args.data_dir, "algorithms": _algorithms(args.algorithms),
        "sweeps.record_timing": False if args.no_timing else None,
    })
    reports = bench.run_campaign(cfg, force=args.force)
    if not reports:
        print("nothing to do: no sweeps or algorithms configured")
        return 0
    table = bench.summarize(reports)
    bench.write_summary(table, cfg["output_dir"])
    print(bench.format_summary(table))
    return 0


def cmd_summarize(args) -> int:
    cfg = _config(args)
    reports = bench.read_reports(cfg["output_dir"])
    if not reports:
        print(f"no per-case CSVs under {cfg['output_dir']}", file=sys.stderr)
        return 1
    table = bench.summarize(reports)
    bench.write_summary(table, cfg["output_dir"])
    print(bench.format_summary(table))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a unit-normalized model cloud")
    _common(p)
    p.add_argument("--shape", choices=["blob"], help="synthetic shape (config: model.shape)")
    p.add_argument("--input", help="PLY/CSV to downsample instead of a synthetic shape")
    p.add_argument("--out", required=True, help="output PLY path")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-data", help="write training and sweep pair directories")
    _common(p, seed_required=True)
    p.add_argument("--n", type=int, help="training pairs (config: training.n)")
    p.add_argument("--per-level", dest="per_level", type=int, help="config: sweeps.per_level")
    p.add_argument("--what", choices=["training", "sweeps", "both"], default="both")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train map sequences and write IDO1 files")
    _common(p, seed_required=True)
    p.add_argument("--n", type=int, help="config: training.n")
    p.add_argument("--K", type=int, help="config: training.K")
    p.add_argument("--lambda", dest="lam", type=float, help="config: training.lambda")
    p.add_argument("--solver", choices=["exact", "paper"], help="config: training.solver")
    p.add_argument("--data-dir", dest="data_dir", help="read pairs from DIR/train (config: training.data_dir)")
    p.add_argument("--algorithms", help="comma list (config: algorithms)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register one pair directory and emit a trace")
    _common(p)
    p.add_argument("--pair", required=True, help="pair directory (scene.ply, spec.json, gt.json)")
    p.add_argument("--algorithm", choices=bench.ALGORITHMS, default="improved-do")
    p.add_argument("--maps", help="IDO1 map file (default: from config)")
    p.add_argument("--force", action="store_true", help="accept a map file trained for another model")
    p.add_argument("--trace", help="trace CSV output")
    p.add_argument("--histograms", help="histogram CSV output (DO only)")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--metric-points", dest="metric_points", choices=["inliers", "all"])
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("bench", help="run the sweep campaign")
    _common(p)
    p.add_argument("--per-level", dest="per_level", type=int)
    p.add_argument("--metric-points", dest="metric_points", choices=["inliers", "all"])
    p.add_argument("--data-dir", dest="data_dir", help="read pairs from DIR/sweeps (config: sweeps.data_dir)")
    p.add_argument("--algorithms", help="comma list (config: algorithms)")
    p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-stable CSVs")
    p.add_argument("--force", action="store_true", help="accept map files trained for another model")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("summarize", help="average per-level results into summary tables")
    _common(p)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (bench.CampaignError, perturb.PerturbationError, MapFileError, TrainingError,
            CloudError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
