"""Learning the sequence of linear update maps.

Each map D is fit so that ``D h(x_k) ~ x_k - x_*``; the update
``x_{k+1} = x_k - D h(x_k)`` then moves every training sample toward its
ground truth. With the exact ridge minimizer the summed squared training
error strictly decreases at every stage unless the fitted map is zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .descriptor import MODES, ModelContext, histogram

P_DIM = 6
MAGIC = b"IDO1"
VERSION = 1
# version, mode, K, p, f, N_M, lambda, sigma2, fingerprint
_HEADER = struct.Struct("<IBIIIIdd32s")


class TrainingError(RuntimeError):
    pass


class MapFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingSet:
    x0: np.ndarray       # (N, 6)
    x_star: np.ndarray   # (N, 6)
    scenes: tuple        # N arrays of shape (n_i, 3)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64).reshape(-1, P_DIM)
        xs = np.asarray(self.x_star, dtype=np.float64).reshape(-1, P_DIM)
        if len(x0) < 1 or len(x0) != len(xs) or len(xs) != len(self.scenes):
            raise ValueError("training set needs N >= 1 matching x0, x_star and scenes")
        if not (np.isfinite(x0).all() and np.isfinite(xs).all()):
            raise ValueError("training twists must be finite")
        if any(len(s) == 0 for s in self.scenes):
            raise ValueError("training scenes must be nonempty")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x_star", xs)
        object.__setattr__(self, "scenes", tuple(np.asarray(s, dtype=np.float64) for s in self.scenes))

    def __len__(self) -> int:
        return len(self.x0)

    @classmethod
    def from_pairs(cls, pairs, x0=None) -> "TrainingSet":
        xs = np.array([p.x_star for p in pairs])
        x0 = np.zeros_like(xs) if x0 is None else x0
        return cls(x0, xs, tuple(p.scene.points for p in pairs))


@dataclass(frozen=True, eq=False)
class MapSequence:
    maps: np.ndarray  # (K, p, f)
    lam: float
    mode: str
    n_model: int
    sigma2: float
    fingerprint: bytes

    @property
    def K(self) -> int:
        return len(self.maps)

    @property
    def n_features(self) -> int:
        return self.maps.shape[2]

    def save(self, path) -> None:
        K, p, f = self.maps.shape
        header = _HEADER.pack(VERSION, MODES.index(self.mode), K, p, f, self.n_model,
                              self.lam, self.sigma2, self.fingerprint)
        body = np.ascontiguousarray(self.maps, dtype="<f8").tobytes()
        Path(path).write_bytes(MAGIC + header + body)

    @classmethod
    def load(cls, path, expected_fingerprint: Optional[bytes] = None, force: bool = False):
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise MapFileError(f"{path}: not a map file (bad magic)")
        if len(raw) < 4 + _HEADER.size:
            raise MapFileError(f"{path}: truncated header")
        version, mode, K, p, f, n_model, lam, sigma2, fp = _HEADER.unpack_from(raw, 4)
        if version != VERSION:
            raise MapFileError(f"{path}: unsupported version {version}")
        if mode >= len(MODES):
            raise MapFileError(f"{path}: unknown mode byte {mode}")
        body = raw[4 + _HEADER.size:]
        if len(body) != 8 * K * p * f:
            raise MapFileError(f"{path}: expected {K}x{p}x{f} doubles, found {len(body)} bytes")
        if expected_fingerprint is not None and fp != expected_fingerprint and not force:
            raise MapFileError(f"{path}: maps were trained for a different model context")
        maps = np.frombuffer(body, dtype="<f8").reshape(K, p, f).astype(np.float64)
        return cls(maps, lam, MODES[mode], n_model, sigma2, fp)

    def check_context(self, ctx: ModelContext) -> None:
        if self.mode != ctx.mode or self.n_features != ctx.n_features:
            raise ValueError(
                f"maps ({self.mode}, f={self.n_features}) do not fit context "
                f"({ctx.mode}, f={ctx.n_features})")


@dataclass
class TrainingTrace:
    """Per-stage error of ||x_* - x_k||: index 0 is before any map."""

    mean: list
    std: list
    sse: list


def _check_lambda(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")


def ridge_solve_exact(residuals, features, lam: float) -> np.ndarray:
    """Minimizer of (1/N) sum ||r_i - D h_i||^2 + lam ||D||_F^2.

    Solves ``D (H^T H + N lam I) = R^T H`` by Cholesky.
    """
    _check_lambda(lam)
    R = np.asarray(residuals, dtype=np.float64)
    H = np.asarray(features, dtype=np.float64)
    n, f = H.shape
    A = H.T @ H
    A[np.diag_indices(f)] += n * lam
    B = H.T @ R  # (f, p) = (R^T H)^T
    return cho_solve(cho_factor(A, lower=True), B).T


def ridge_solve_paper(residuals, features, lam: float) -> np.ndarray:
    """Average of per-sample rank-one solutions r_i h_i^T / (lam + h_i^T h_i)."""
    _check_lambda(lam)
    R = np.asarray(residuals, dtype=np.float64)
    H = np.asarray(features, dtype=np.float64)
    denom = lam + np.einsum("ij,ij->i", H, H)
    return (R / denom[:, None]).T @ H / len(H)


SOLVERS = {"exact": ridge_solve_exact, "paper": ridge_solve_paper}


def feature_matrix(ctx: ModelContext, scenes: Sequence, x: np.ndarray, iteration: int = 0):
    H = np.empty((len(scenes), ctx.n_features))
    for i, (scene, xi) in enumerate(zip(scenes, x)):
        H[i] = histogram(ctx, scene, xi)
        if not np.isfinite(H[i]).all():
            raise TrainingError(f"non-finite feature for sample {i} at iteration {iteration}")
    return H


def _errors(x_star, x):
    e = np.linalg.norm(x_star - x, axis=1)
    return float(e.mean()), float(e.std()), float(np.sum((x_star - x) ** 2))


def train(ts: TrainingSet, ctx: ModelContext, K: int = 30, lam: float = 0.0002,
          solver: str = "exact", progress: Optional[Callable[[int, float], None]] = None):
    """Fit K maps stage by stage; returns ``(MapSequence, TrainingTrace)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    _check_lambda(lam)
    solve = SOLVERS[solver]
    x = ts.x0.copy()
    trace = TrainingTrace([], [], [])
    for name, val in zip(("mean", "std", "sse"), _errors(ts.x_star, x)):
        getattr(trace, name).append(val)
    maps = []
    for k in range(K):
        H = feature_matrix(ctx, ts.scenes, x, k)
        targets = x - ts.x_star
        if not np.isfinite(targets).all():
            bad = int(np.argwhere(~np.isfinite(targets))[0, 0])
            raise TrainingError(f"non-finite residual for sample {bad} at iteration {k}")
        D = solve(targets, H, lam)
        maps.append(D)
        x = x - H @ D.T
        for name, val in zip(("mean", "std", "sse"), _errors(ts.x_star, x)):
            getattr(trace, name).append(val)
        if progress is not None:
            progress(k + 1, trace.mean[-1])
    seq = MapSequence(np.stack(maps), float(lam), ctx.mode, ctx.n_model, ctx.sigma2,
                      ctx.fingerprint())
    return seq, trace
