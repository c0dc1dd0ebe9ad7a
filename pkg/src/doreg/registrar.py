"""Test-time registration: learned-map iteration and an ICP baseline."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lie
from .cloud import PointCloud, SpatialIndex
from .descriptor import ModelContext, histogram
from .lie import RigidTransform
from .regressor import MapSequence

log = logging.getLogger(__name__)

MAX_ITER = 1000
EPSILON = 0.005


class DegenerateError(ValueError):
    pass


@dataclass
class TraceStep:
    iteration: int
    x: np.ndarray
    update: np.ndarray
    update_norm: float
    histogram: Optional[np.ndarray] = None


@dataclass
class RegistrationResult:
    x_final: np.ndarray
    T_final: RigidTransform
    iterations: int
    terminated_by: str  # "epsilon" | "maxIter" ("degenerate" for a stalled ICP)
    trace: list = field(default_factory=list)
    final_update_norm: float = 0.0
    x0: Optional[np.ndarray] = None
    degenerate: bool = False
    mse: list = field(default_factory=list)  # ICP correspondence MSE per iteration

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "x1", "x2", "x3", "x4", "x5", "x6", "update_norm"])
            for st in self.trace:
                w.writerow([st.iteration] + [repr(float(v)) for v in st.x] + [repr(st.update_norm)])

    def histograms(self):
        return [(st.iteration, st.histogram) for st in self.trace if st.histogram is not None]


def _points(S) -> np.ndarray:
    return S.points if isinstance(S, PointCloud) else np.asarray(S, dtype=np.float64).reshape(-1, 3)


def register_do(ctx: ModelContext, maps: MapSequence, S, x0=None, max_iter: int = MAX_ITER,
                epsilon: float = EPSILON, record_histograms: bool = False) -> RegistrationResult:
    """Apply D_1..D_K once each, then keep applying D_K until its update is below epsilon.

    The first K updates never stop early. ``iterations`` counts applied updates.
    """
    maps.check_context(ctx)
    if max_iter < maps.K:
        raise ValueError(f"max_iter ({max_iter}) must be >= K ({maps.K})")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    pts = _points(S)
    x = np.zeros(6) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    start = x.copy()
    trace = []

    def step(D, h, it):
        nonlocal x
        dx = D @ h
        x = x - dx
        trace.append(TraceStep(it, x.copy(), dx, float(np.linalg.norm(dx)),
                               h if record_histograms else None))

    for k in range(maps.K):
        step(maps.maps[k], histogram(ctx, pts, x), k + 1)

    D_last = maps.maps[-1]
    it = maps.K + 1
    while True:
        h = histogram(ctx, pts, x)
        norm = float(np.linalg.norm(D_last @ h))
        if norm < epsilon or it > max_iter:
            break
        step(D_last, h, it)
        it += 1
    return RegistrationResult(x, lie.exp_se3(x), len(trace),
                              "epsilon" if norm < epsilon else "maxIter", trace,
                              final_update_norm=norm, x0=start)


def replay(result: RegistrationResult) -> np.ndarray:
    """Re-apply the recorded updates from x0."""
    x = result.x0.copy()
    for st in result.trace:
        x = x - st.update
    return x


def procrustes_fit(scene, model) -> RigidTransform:
    """Least-squares rigid motion taking ``scene`` rows onto ``model`` rows (no reflection)."""
    src = np.asarray(scene, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(model, dtype=np.float64).reshape(-1, 3)
    if len(src) != len(dst) or len(src) < 3:
        raise DegenerateError("need at least 3 matched pairs")
    cs, cm = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - cs, dst - cm
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateError("scene points are collinear or coincident")
    U, _, Vt = np.linalg.svd(A.T @ B)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cm - R @ cs)


def register_icp(M, S, x0=None, max_iter: int = MAX_ITER, tol: float = 1e-10) -> RegistrationResult:
    """Point-to-point ICP, scene -> model correspondences by nearest neighbour."""
    model = _points(M)
    pts = _points(S)
    index = SpatialIndex(model)
    T = lie.exp_se3(np.zeros(6) if x0 is None else x0)
    start = lie.log_se3(T)

    def correspond(T):
        moved = lie.apply(T, pts)
        idx, d = index.nearest(moved)
        return moved, idx, float(np.mean(d * d))

    moved, idx, mse = correspond(T)
    history = [mse]
    trace = []
    degenerate = False
    reason = "maxIter"
    it = 0
    for it in range(1, max_iter + 1):
        if len(np.unique(idx)) == 1:
            degenerate = True
            log.warning("ICP: all scene points matched one model point; stopping")
            it -= 1
            reason = "degenerate"
            break
        try:
            dT = procrustes_fit(moved, model[idx])
        except DegenerateError:
            degenerate = True
            it -= 1
            reason = "degenerate"
            break
        T = lie.compose(dT, T)
        moved, idx, new_mse = correspond(T)
        x = lie.log_se3(T)
        trace.append(TraceStep(it, x, lie.log_se3(dT), float(np.linalg.norm(lie.log_se3(dT)))))
        history.append(new_mse)
        improved = mse - new_mse
        mse = new_mse
        if improved < tol:
            reason = "epsilon"
            break
    x = lie.log_se3(T)
    return RegistrationResult(x, T, it, reason, trace,
                              final_update_norm=trace[-1].update_norm if trace else 0.0,
                              x0=start, degenerate=degenerate, mse=history)
