"""Metrics, experiment campaigns and summary tables.

A campaign registers every pair of every configured sweep with every
configured algorithm, writes one per-case CSV and one per-level aggregate CSV
per (algorithm, sweep), and returns the in-memory reports.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lie, perturb, registrar
from .cloud import PointCloud, ScaleRecord, downsample_average, load, normalize_to_unit
from .descriptor import build_context, histogram
from .regressor import MapSequence, TrainingSet, train
from .shapes import blob

log = logging.getLogger(__name__)

ALGORITHMS = ("improved-do", "original-do", "icp")
DO_MODES = {"improved-do": "improved", "original-do": "original"}
CASE_COLUMNS = ["case_id", "level", "algorithm", "point_acc", "point_rmse", "iterations", "wall_ms"]
T_PT = 0.1

# published average PointAcc on the noise sweep (full-scale run); an ordering target only
REFERENCE_NOISE_ACC = {"icp": 0.000, "original-do": 0.863, "improved-do": 0.990}

# desk-scale sweep levels: 4 per perturbation, spanning each published sweep extent
DESK_LEVELS = {
    "noise": [0.0, 0.03, 0.06, 0.1],
    "scene_count": [100, 800, 2000, 4000],
    "outliers": [0, 200, 400, 600],
    "incomplete": [0.0, 0.2, 0.45, 0.7],
    "rotation": [0, 60, 120, 180],
    "translation": [0.0, 0.3, 0.6, 1.0],
}

DEFAULT_CONFIG = {
    "model": {"shape": "blob", "n_points": 128, "path": None, "sigma2": 0.03, "k": 6},
    "training": {"n": 500, "K": 10, "lambda": 0.0002, "solver": "exact", "ranges": {},
                 "maps": {}},
    "sweeps": {"levels": DESK_LEVELS, "per_level": 20, "max_iter": registrar.MAX_ITER,
               "epsilon": registrar.EPSILON, "t_pt": T_PT, "metric_points": "inliers",
               "record_timing": True, "data_dir": None},
    "algorithms": list(ALGORITHMS),
    "output_dir": "out",
    "seed": 0,
}


class CampaignError(RuntimeError):
    pass


# -- metrics -----------------------------------------------------------------


def _pair_arrays(a, b):
    A = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)
    B = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(A) != len(B):
        raise ValueError(f"point count mismatch: {len(A)} registered vs {len(B)} ground truth")
    if len(A) == 0:
        raise ValueError("metrics need at least one point")
    return A, B


def point_acc(registered, star, t_pt: float = T_PT) -> float:
    """Fraction of index-aligned points closer than ``t_pt`` to their target."""
    A, B = _pair_arrays(registered, star)
    return float(np.mean(np.linalg.norm(A - B, axis=1) < t_pt))


def point_rmse(registered, star) -> float:
    A, B = _pair_arrays(registered, star)
    return float(np.sqrt(np.mean(np.sum((A - B) ** 2, axis=1))))


# -- configuration -----------------------------------------------------------


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "levels":
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the JSON file, then dotted-key overrides (``None`` values skipped)."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        cfg = _merge(cfg, json.loads(Path(path).read_text()))
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = val
    return cfg


def load_model(model_cfg: dict) -> tuple[PointCloud, Optional[ScaleRecord]]:
    """The unit-normalized model named by a config ``model`` section."""
    if model_cfg.get("path"):
        cloud = load(model_cfg["path"])
        n = model_cfg.get("n_points")
        if n and len(cloud) > n:
            cloud = downsample_average(cloud, int(n))
        cloud, record = normalize_to_unit(PointCloud(cloud.points))
        return cloud, record
    if model_cfg.get("shape", "blob") != "blob":
        raise CampaignError(f"unknown synthetic shape {model_cfg.get('shape')!r}")
    return blob(int(model_cfg.get("n_points", 128))), None


def build_contexts(cfg: dict, algorithms=None):
    model, record = load_model(cfg["model"])
    out = {}
    for alg in algorithms or cfg["algorithms"]:
        if alg in DO_MODES:
            out[alg] = build_context(model, cfg["model"].get("sigma2", 0.03), DO_MODES[alg],
                                     k=cfg["model"].get("k", 6), scale_record=record)
    return model, out


def maps_path(cfg: dict, algorithm: str) -> Path:
    given = cfg["training"].get("maps", {}).get(algorithm)
    return Path(given) if given else Path(cfg["output_dir"]) / f"maps_{DO_MODES[algorithm]}.ido"


def training_seed(seed: int) -> int:
    return perturb.derive_seed(seed, 1)


def sweep_seed(seed: int) -> int:
    return perturb.derive_seed(seed, 2)


# -- data and training -------------------------------------------------------


def _load_pair_dirs(root: Path) -> list[perturb.LabeledPair]:
    if not root.is_dir():
        raise CampaignError(f"no pair directories under {root}")
    try:
        return [perturb.load_pair(d) for d in sorted(p for p in root.iterdir() if p.is_dir())]
    except perturb.PerturbationError as e:
        raise CampaignError(str(e)) from e


def training_pairs(cfg: dict, model: PointCloud) -> list[perturb.LabeledPair]:
    tc = cfg["training"]
    if tc.get("data_dir"):
        return _load_pair_dirs(Path(tc["data_dir"]) / "train")
    ranges = {k: tuple(v) for k, v in (tc.get("ranges") or {}).items()}
    return perturb.generate_training_pairs(model, int(tc["n"]), ranges,
                                           training_seed(int(cfg["seed"])),
                                           tc.get("outlier_kind", "sparse"))


def write_training_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "mean", "std", "sse"])
        for k, row in enumerate(zip(trace.mean, trace.std, trace.sse)):
            w.writerow([k] + [repr(v) for v in row])


def train_maps(cfg: dict, algorithms=None, progress=None) -> dict:
    """Train one map sequence per DO algorithm; returns ``{algorithm: (path, trace)}``.

    Maps go to :func:`maps_path`, traces to ``training_<mode>.csv`` next to them.
    """
    algorithms = [a for a in (algorithms or cfg["algorithms"]) if a in DO_MODES]
    model, contexts = build_contexts(cfg, algorithms)
    ts = TrainingSet.from_pairs(training_pairs(cfg, model))
    tc = cfg["training"]
    out = {}
    for alg in algorithms:
        seq, trace = train(ts, contexts[alg], K=int(tc["K"]), lam=float(tc["lambda"]),
                           solver=tc.get("solver", "exact"), progress=progress)
        path = maps_path(cfg, alg)
        path.parent.mkdir(parents=True, exist_ok=True)
        seq.save(path)
        write_training_trace(path.with_name(f"training_{DO_MODES[alg]}.csv"), trace)
        out[alg] = (path, trace)
    return out


def generate_data(cfg: dict, what: str = "both") -> Path:
    """Write training and/or sweep pair directories under ``output_dir/data``."""
    model, _ = load_model(cfg["model"])
    root = Path(cfg["output_dir"]) / "data"
    if what in ("training", "both"):
        for i, pair in enumerate(training_pairs({**cfg, "training": {**cfg["training"], "data_dir": None}}, model)):
            perturb.save_pair(pair, root / "train" / f"{i:06d}")
    if what in ("sweeps", "both"):
        sweeps_cfg = {**cfg, "sweeps": {**cfg["sweeps"], "data_dir": None}}
        for sweep in cfg["sweeps"].get("levels") or {}:
            for i, (_, pair) in enumerate(sweep_pairs(sweeps_cfg, model, sweep)):
                perturb.save_pair(pair, root / "sweeps" / sweep / f"{i:06d}")
    return root


# -- campaign ----------------------------------------------------------------


@dataclass
class CaseResult:
    case_id: int
    level: float
    algorithm: str
    point_acc: float
    point_rmse: float
    iterations: int
    wall_ms: float

    def row(self):
        return [self.case_id, self.level, self.algorithm, repr(self.point_acc),
                repr(self.point_rmse), self.iterations, repr(self.wall_ms)]


@dataclass
class MetricReport:
    sweep: str
    algorithm: str
    cases: list = field(default_factory=list)
    results: list = field(default_factory=list, repr=False)  # RegistrationResult per case

    def levels(self) -> list:
        seen = []
        for c in self.cases:
            if c.level not in seen:
                seen.append(c.level)
        return seen

    def aggregates(self) -> list[dict]:
        """Mean and population std per level, in level order."""
        rows = []
        for lv in self.levels():
            sel = [c for c in self.cases if c.level == lv]
            row = {"level": lv, "n": len(sel)}
            for name in ("point_acc", "point_rmse", "iterations", "wall_ms"):
                v = np.array([getattr(c, name) for c in sel], dtype=np.float64)
                row[f"{name}_mean"] = float(v.mean())
                row[f"{name}_std"] = float(v.std())
            rows.append(row)
        return rows

    def average(self, metric: str) -> float:
        """Average of the per-level means, as in the summary tables."""
        agg = self.aggregates()
        return float(np.mean([r[f"{metric}_mean"] for r in agg])) if agg else float("nan")


def metric_clouds(pair: perturb.LabeledPair, T_hat, metric_points: str = "inliers"):
    """(registered, ground truth) point sets used for PointAcc/PointRMSE."""
    if metric_points not in ("inliers", "all"):
        raise ValueError("metric_points must be 'inliers' or 'all'")
    pts = pair.scene.points
    if metric_points == "inliers":
        pts = pts[pair.inlier_mask]
    return lie.apply(T_hat, pts), lie.apply(pair.T_gt, pts)


def register(algorithm: str, pair, model: PointCloud, ctx=None, maps=None,
             max_iter: int = registrar.MAX_ITER, epsilon: float = registrar.EPSILON,
             record_histograms: bool = False):
    if algorithm == "icp":
        return registrar.register_icp(model, pair.scene, max_iter=max_iter)
    if algorithm not in DO_MODES:
        raise CampaignError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    return registrar.register_do(ctx, maps, pair.scene, max_iter=max_iter, epsilon=epsilon,
                                 record_histograms=record_histograms)


def evaluate_case(case_id: int, level, algorithm: str, pair, model, ctx=None, maps=None,
                  sweeps_cfg: Optional[dict] = None):
    sc = {**DEFAULT_CONFIG["sweeps"], **(sweeps_cfg or {})}
    t0 = time.perf_counter()
    result = register(algorithm, pair, model, ctx, maps, sc["max_iter"], sc["epsilon"])
    wall = (time.perf_counter() - t0) * 1000.0 if sc["record_timing"] else 0.0
    reg, star = metric_clouds(pair, result.T_final, sc["metric_points"])
    case = CaseResult(case_id, level, algorithm, point_acc(reg, star, sc["t_pt"]),
                      point_rmse(reg, star), result.iterations, wall)
    return case, result


def load_sweep_pairs(data_dir, sweep: str) -> list[tuple[float, perturb.LabeledPair]]:
    """(level, pair) for every pair directory under ``data_dir/sweeps/<sweep>``."""
    field_name = perturb.SWEEPS[sweep]
    return [(getattr(p.spec, field_name), p)
            for p in _load_pair_dirs(Path(data_dir) / "sweeps" / sweep)]


def sweep_pairs(cfg: dict, model: PointCloud, sweep: str):
    sc = cfg["sweeps"]
    if sc.get("data_dir"):
        return load_sweep_pairs(sc["data_dir"], sweep)
    levels = sc["levels"][sweep]
    pairs = perturb.generate_sweep(model, sweep, levels, int(sc["per_level"]),
                                   sweep_seed(int(cfg["seed"])))
    field_name = perturb.SWEEPS[sweep]
    return [(getattr(p.spec, field_name), p) for p in pairs]


def _write_case_csv(path: Path, cases) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CASE_COLUMNS)
        for c in cases:
            w.writerow(c.row())


AGG_COLUMNS = ["level", "n", "point_acc_mean", "point_acc_std", "point_rmse_mean",
               "point_rmse_std", "iterations_mean", "iterations_std", "wall_ms_mean", "wall_ms_std"]


def _write_aggregate_csv(path: Path, report: MetricReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_COLUMNS)
        for row in report.aggregates():
            w.writerow([row["level"], row["n"]] + [repr(row[c]) for c in AGG_COLUMNS[2:]])


def _estimate_seconds(cfg, model, contexts, n_cases) -> float:
    """Crude runtime estimate: one timed feature evaluation times a typical iteration count."""
    per_case = 0.0
    probe = model.points
    for alg in cfg["algorithms"]:
        if alg in contexts:
            t0 = time.perf_counter()
            histogram(contexts[alg], probe, np.zeros(6))
            per_case += (time.perf_counter() - t0) * 150
        else:
            per_case += 0.05
    return per_case * n_cases


def run_campaign(cfg: dict, out=sys.stderr, force: bool = False) -> list[MetricReport]:
    """Register every sweep pair with every algorithm and write the CSVs."""
    levels = cfg["sweeps"].get("levels") or {}
    sweeps = [s for s in levels if s in perturb.SWEEPS]
    unknown = [s for s in levels if s not in perturb.SWEEPS]
    if unknown:
        raise CampaignError(f"unknown sweeps {unknown}; expected names from {sorted(perturb.SWEEPS)}")
    algorithms = list(cfg["algorithms"])
    if not sweeps or not algorithms:
        return []
    for alg in algorithms:
        if alg not in ALGORITHMS:
            raise CampaignError(f"unknown algorithm {alg!r}; expected one of {ALGORITHMS}")

    model, contexts = build_contexts(cfg, algorithms)
    maps = {}
    for alg, ctx in contexts.items():
        path = maps_path(cfg, alg)
        if not path.exists():
            raise CampaignError(f"missing trained maps for {alg}: {path} (run `train` first)")
        maps[alg] = MapSequence.load(path, ctx.fingerprint(), force=force)
        maps[alg].check_context(ctx)

    n_pairs = sum(len(levels[s]) for s in sweeps) * int(cfg["sweeps"]["per_level"])
    est = _estimate_seconds(cfg, model, contexts, n_pairs)
    print(f"campaign: {len(sweeps)} sweeps x {len(algorithms)} algorithms, "
          f"{n_pairs * len(algorithms)} registrations, estimated runtime {est:.0f} s", file=out)

    out_dir = Path(cfg["output_dir"])
    reports = []
    for sweep in sweeps:
        pairs = sweep_pairs(cfg, model, sweep)
        for alg in algorithms:
            report = MetricReport(sweep, alg)
            for case_id, (level, pair) in enumerate(pairs):
                case, result = evaluate_case(case_id, level, alg, pair, model, contexts.get(alg),
                                             maps.get(alg), cfg["sweeps"])
                report.cases.append(case)
                report.results.append(result)
            alg_dir = out_dir / alg
            alg_dir.mkdir(parents=True, exist_ok=True)
            _write_case_csv(alg_dir / f"{sweep}.csv", report.cases)
            _write_aggregate_csv(alg_dir / f"{sweep}_levels.csv", report)
            reports.append(report)
    return reports


# -- summaries ---------------------------------------------------------------


def read_reports(out_dir) -> list[MetricReport]:
    """Rebuild reports from the per-case CSVs of a finished campaign."""
    reports = []
    root = Path(out_dir)
    for alg in ALGORITHMS:
        d = root / alg
        if not d.is_dir():
            continue
        for sweep in perturb.SWEEPS:
            path = d / f"{sweep}.csv"
            if not path.exists():
                continue
            report = MetricReport(sweep, alg)
            with open(path, newline="") as fh:
                for row in csv.DictReader(fh):
                    report.cases.append(CaseResult(
                        int(row["case_id"]), float(row["level"]), row["algorithm"],
                        float(row["point_acc"]), float(row["point_rmse"]),
                        int(row["iterations"]), float(row["wall_ms"])))
            reports.append(report)
    return reports


def summarize(reports: Sequence[MetricReport]) -> dict:
    """``{metric: {sweep: {algorithm: average over levels}}}`` for PointAcc and PointRMSE."""
    table = {"point_acc": {}, "point_rmse": {}}
    for rep in reports:
        for metric in table:
            table[metric].setdefault(rep.sweep, {})[rep.algorithm] = rep.average(metric)
    return table


def _columns(table: dict) -> list[str]:
    algs = {a for rows in table.values() for cols in rows.values() for a in cols}
    return [a for a in ALGORITHMS if a in algs]


def format_summary(table: dict) -> str:
    lines = []
    for metric, title in (("point_acc", "Average PointAcc"), ("point_rmse", "Average PointRMSE")):
        rows = table.get(metric, {})
        if not rows:
            continue
        cols = _columns(table)
        width = max(len("perturbation"), *(len(s) for s in rows))
        lines.append(title)
        lines.append("  ".join(["perturbation".ljust(width)] + [c.rjust(12) for c in cols]))
        for sweep, vals in rows.items():
            cells = [f"{vals[c]:.4f}".rjust(12) if c in vals else "-".rjust(12) for c in cols]
            lines.append("  ".join([sweep.ljust(width)] + cells))
        lines.append("")
    return "\n".join(lines)


def write_summary(table: dict, out_dir) -> None:
    """``summary.csv`` (metric, perturbation, one column per algorithm) plus ``summary.txt``."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    cols = _columns(table)
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "perturbation"] + cols)
        for metric, rows in table.items():
            for sweep, vals in rows.items():
                w.writerow([metric, sweep] + [repr(vals[c]) if c in vals else "" for c in cols])
    (root / "summary.txt").write_text(format_summary(table))
