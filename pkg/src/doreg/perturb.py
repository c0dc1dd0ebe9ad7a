"""Synthetic scene generation: corrupt and move a model, keep the ground truth.

The corruption pipeline is fixed: resample -> crop a contiguous region ->
Gaussian noise -> outliers -> rigid motion. Noise and outliers are therefore
in model units and move together with the inliers. All randomness comes from
a Philox generator keyed by each pair's seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import lie
from .cloud import PointCloud, load, save
from .lie import RigidTransform
from .regressor import TrainingSet


class PerturbationError(ValueError):
    pass


LIMITS = {
    "noise_std": (0.0, 0.1),
    "scene_count": (100, 4000),
    "outliers": (0, 600),
    "incomplete_ratio": (0.0, 0.7),
    "rotation_deg": (0.0, 180.0),
    "translation": (0.0, 1.0),
}

TRAINING_RANGES = {
    "noise_std": (0.0, 0.05),
    "scene_count": (400, 800),
    "outliers": (0, 300),
    "incomplete_ratio": (0.0, 0.3),
    "rotation_deg": (0.0, 90.0),
    "translation": (0.0, 0.3),
}

# sweep names as used in configs and CSVs -> spec field
SWEEPS = {
    "noise": "noise_std",
    "scene_count": "scene_count",
    "outliers": "outliers",
    "incomplete": "incomplete_ratio",
    "rotation": "rotation_deg",
    "translation": "translation",
}

FULL_SCALE_LEVELS = {
    "noise": [round(0.01 * i, 2) for i in range(11)],
    "scene_count": [100, 500, 1000, 1500, 2000, 2500, 3000, 3500, 4000],
    "outliers": list(range(0, 601, 100)),
    "incomplete": [round(0.1 * i, 1) for i in range(8)],
    "rotation": list(range(0, 181, 20)),
    "translation": [round(0.1 * i, 1) for i in range(11)],
}


@dataclass(frozen=True)
class PerturbationSpec:
    noise_std: float = 0.05
    scene_count: int = 400
    outliers: int = 300
    incomplete_ratio: float = 0.3
    rotation_deg: float = 60.0
    translation: float = 0.3
    outlier_kind: str = "sparse"
    seed: int = 0

    def validate(self) -> "PerturbationSpec":
        for name, (lo, hi) in LIMITS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise PerturbationError(f"{name}={v} outside [{lo}, {hi}]")
        if self.outlier_kind not in ("sparse", "structured"):
            raise PerturbationError(f"unknown outlier kind {self.outlier_kind!r}")
        if not 0 <= self.seed < 2**64:
            raise PerturbationError("seed must be a 64-bit unsigned integer")
        return self


@dataclass(frozen=True, eq=False)
class LabeledPair:
    """A scene plus the twist that maps it back onto the model frame.

    Scene rows are ordered inliers first, then outliers.
    """

    scene: PointCloud
    x_star: np.ndarray
    T_gt: RigidTransform
    spec: PerturbationSpec
    n_inliers: int

    @property
    def inlier_mask(self) -> np.ndarray:
        m = np.zeros(len(self.scene), dtype=bool)
        m[: self.n_inliers] = True
        return m


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for position ``path`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    """Marsaglia's method: uniform on the unit sphere."""
    while True:
        u1, u2 = rng.uniform(-1.0, 1.0, size=2)
        s = u1 * u1 + u2 * u2
        if 0.0 < s < 1.0:
            r = 2.0 * math.sqrt(1.0 - s)
            return np.array([u1 * r, u2 * r, 1.0 - 2.0 * s])


def _sparse_outliers(rng, lo, hi, n):
    c, half = (lo + hi) / 2, (hi - lo) / 2 * 1.5
    return rng.uniform(c - half, c + half, size=(n, 3))


def _structured_outliers(rng, lo, hi, n, patch_size=0.8, blob_std=0.05):
    """Half on a random square plane patch, the rest in one Gaussian blob."""
    n_plane = n // 2
    c, half = (lo + hi) / 2, (hi - lo) / 2 * 1.5
    normal = random_unit_vector(rng)
    u = np.cross(normal, [1.0, 0.0, 0.0])
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(normal, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    center = rng.uniform(c - half, c + half)
    ab = rng.uniform(-patch_size / 2, patch_size / 2, size=(n_plane, 2))
    plane = center + ab[:, :1] * u + ab[:, 1:] * v
    blob_c = rng.uniform(c - half, c + half)
    blob = blob_c + rng.normal(0.0, blob_std, size=(n - n_plane, 3))
    return np.vstack([plane, blob])


def generate_pair(model: PointCloud, spec: PerturbationSpec) -> LabeledPair:
    spec.validate()
    rng = _rng(spec.seed)
    M = model.points

    pts = M[rng.integers(0, len(M), size=spec.scene_count)]

    n_drop = math.ceil(spec.incomplete_ratio * spec.scene_count - 1e-9)
    n_drop = min(n_drop, spec.scene_count - 1)
    center = pts[rng.integers(0, len(pts))]
    if n_drop > 0:
        d = np.linalg.norm(pts - center, axis=1)
        drop = np.lexsort((np.arange(len(pts)), d))[:n_drop]
        keep = np.ones(len(pts), dtype=bool)
        keep[drop] = False
        pts = pts[keep]

    pts = pts + rng.normal(0.0, 1.0, size=pts.shape) * spec.noise_std

    lo, hi = M.min(axis=0), M.max(axis=0)
    if spec.outlier_kind == "sparse":
        out = _sparse_outliers(rng, lo, hi, spec.outliers)
    else:
        out = _structured_outliers(rng, lo, hi, spec.outliers)
    n_inliers = len(pts)
    pts = np.vstack([pts, out])

    axis = random_unit_vector(rng)
    direction = random_unit_vector(rng)
    motion = RigidTransform(lie.exp_so3(np.radians(spec.rotation_deg) * axis),
                            spec.translation * direction)
    scene = lie.apply(motion, pts)
    x_star = lie.log_se3(motion.inverse())
    return LabeledPair(PointCloud(scene), x_star, lie.exp_se3(x_star), spec, n_inliers)


def draw_spec(rng: np.random.Generator, ranges=TRAINING_RANGES, **fixed) -> PerturbationSpec:
    vals = {}
    for name in LIMITS:
        lo, hi = ranges[name]
        if name in ("scene_count", "outliers"):
            vals[name] = int(rng.integers(int(lo), int(hi) + 1))
        else:
            vals[name] = float(rng.uniform(lo, hi))
    vals["seed"] = int(rng.integers(0, 2**63))
    vals.update(fixed)
    return PerturbationSpec(**vals)


def generate_training_pairs(model: PointCloud, n: int, ranges=None, seed: int = 0,
                            outlier_kind: str = "sparse") -> list[LabeledPair]:
    """``n`` pairs with every perturbation drawn uniformly from ``ranges``."""
    ranges = {**TRAINING_RANGES, **(ranges or {})}
    for name, (lo, hi) in ranges.items():
        tlo, thi = TRAINING_RANGES[name]
        if lo < tlo or hi > thi:
            warnings.warn(f"training range {name}=({lo}, {hi}) exceeds ({tlo}, {thi})",
                          stacklevel=3)
    rng = _rng(seed)
    return [generate_pair(model, draw_spec(rng, ranges, outlier_kind=outlier_kind))
            for _ in range(n)]


def generate_training_set(model: PointCloud, n: int, ranges=None, seed: int = 0,
                          outlier_kind: str = "sparse") -> TrainingSet:
    """Training tuples with x0 = 0; see :func:`generate_training_pairs`."""
    return TrainingSet.from_pairs(generate_training_pairs(model, n, ranges, seed, outlier_kind))


def generate_sweep(model: PointCloud, perturbation: str, levels: Sequence, per_level: int,
                   seed: int, base: Optional[PerturbationSpec] = None) -> list[LabeledPair]:
    """``per_level`` pairs at each level of one perturbation, others at defaults."""
    if perturbation not in SWEEPS:
        raise PerturbationError(f"unknown perturbation {perturbation!r}; expected one of {sorted(SWEEPS)}")
    field = SWEEPS[perturbation]
    base = base or PerturbationSpec()
    sweep_id = list(SWEEPS).index(perturbation)
    pairs = []
    for li, level in enumerate(levels):
        level = int(level) if field in ("scene_count", "outliers") else float(level)
        for ci in range(per_level):
            spec = replace(base, **{field: level}, seed=derive_seed(seed, sweep_id, li, ci))
            pairs.append(generate_pair(model, spec))
    return pairs


# -- serialization -----------------------------------------------------------


def save_pair(pair: LabeledPair, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save(pair.scene, d / "scene.ply")
    (d / "spec.json").write_text(json.dumps(asdict(pair.spec), indent=2) + "\n")
    gt = {
        "x_star": [float(v) for v in pair.x_star],
        "T_gt": [float(v) for v in pair.T_gt.matrix[:3].ravel()],
        "n_inliers": pair.n_inliers,
    }
    (d / "gt.json").write_text(json.dumps(gt, indent=2) + "\n")


def load_pair(directory) -> LabeledPair:
    d = Path(directory)
    try:
        scene = load(d / "scene.ply")
        spec = PerturbationSpec(**json.loads((d / "spec.json").read_text()))
        gt = json.loads((d / "gt.json").read_text())
    except (OSError, ValueError, TypeError) as e:
        raise PerturbationError(f"unreadable pair directory {d}: {e}") from e
    T = np.asarray(gt["T_gt"], dtype=np.float64).reshape(3, 4)
    return LabeledPair(scene, np.asarray(gt["x_star"], dtype=np.float64),
                       RigidTransform(T[:, :3], T[:, 3]), spec,
                       int(gt.get("n_inliers", len(scene))))
