"""Model context and the side-voting histogram features.

``original`` mode yields front/back Gaussian votes per model point (length
``2 * N_M``). ``improved`` mode reweights those by the model's own front
fraction and appends up/down (elevation) and clockwise/anticlockwise
(azimuth) counts, each reweighted the same way (length ``6 * N_M``).

Every block is divided by the scene size, so entries stay in [0, 1]
whatever the number of scene points.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numba
import numpy as np

from . import lie
from .cloud import CloudError, PointCloud, ScaleRecord, estimate_normals, spherical_angles

MODES = ("original", "improved")
SIGMA2 = 0.03
# Gaussian votes with squared distance beyond this many sigma^2 are dropped (< e^-36)
TRUNCATE_SIGMA2 = 36.0


def feature_length(mode: str, n_model: int) -> int:
    return (2 if mode == "original" else 6) * n_model


def model_weights(points, normals, angles):
    """Fractions of the model in front of / above / clockwise of each point."""
    P = np.asarray(points, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    n = len(P)
    d = P[None, :, :] - P[:, None, :]  # d[a, b] = m_b - m_a
    side = (N[:, 0, None] * d[:, :, 0] + N[:, 1, None] * d[:, :, 1]) + N[:, 2, None] * d[:, :, 2]
    alpha = (side > 0).sum(axis=1) / n
    el, az = angles[:, 0], angles[:, 1]
    beta = n - np.searchsorted(np.sort(el), el, side="right")
    gamma = n - np.searchsorted(np.sort(az), az, side="right")
    return alpha, beta / n, gamma / n


@dataclass(frozen=True, eq=False)
class ModelContext:
    """Everything about the model that stays fixed across training and inference."""

    points: np.ndarray
    normals: np.ndarray
    angles: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma2: float
    mode: str
    scale_record: Optional[ScaleRecord] = None
    degenerate: int = 0
    reference: np.ndarray = field(default=None, repr=False)

    @property
    def n_model(self) -> int:
        return len(self.points)

    @property
    def n_features(self) -> int:
        return feature_length(self.mode, self.n_model)

    @property
    def model(self) -> PointCloud:
        return PointCloud(self.points, self.normals)

    @classmethod
    def from_arrays(cls, points, normals, sigma2: float = SIGMA2, mode: str = "improved",
                    scale_record=None, degenerate: int = 0, alpha=None, beta=None, gamma=None):
        """Assemble a context from given normals; weights are derived unless overridden."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        P = np.array(points, dtype=np.float64).reshape(-1, 3)
        N = np.array(normals, dtype=np.float64).reshape(-1, 3)
        angles, _ = spherical_angles(P)
        a, b, g = model_weights(P, N, angles)
        arrays = {
            "points": P, "normals": N, "angles": angles,
            "alpha": a if alpha is None else np.broadcast_to(np.asarray(alpha, float), a.shape).copy(),
            "beta": b if beta is None else np.broadcast_to(np.asarray(beta, float), b.shape).copy(),
            "gamma": g if gamma is None else np.broadcast_to(np.asarray(gamma, float), g.shape).copy(),
        }
        for v in arrays.values():
            v.setflags(write=False)
        ctx = cls(**arrays, sigma2=float(sigma2), mode=mode, scale_record=scale_record,
                  degenerate=degenerate)
        ref = histogram(ctx, P, np.zeros(6))
        ref.setflags(write=False)
        object.__setattr__(ctx, "reference", ref)
        return ctx

    def fingerprint(self) -> bytes:
        """SHA-256 over everything a trained map sequence depends on."""
        h = hashlib.sha256()
        h.update(self.mode.encode())
        h.update(np.float64(self.sigma2).tobytes())
        for arr in (self.points, self.normals, self.alpha, self.beta, self.gamma):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.digest()


def build_context(model: PointCloud, sigma2: float = SIGMA2, mode: str = "improved",
                  k: int = 6, scale_record: Optional[ScaleRecord] = None) -> ModelContext:
    """Estimate normals (k neighbours) and precompute angles and weights.

    The model must already be unit-normalized (centroid at the origin,
    farthest point at distance 1); angles are taken about the origin.
    """
    P = model.points
    if len(P) < k + 1:
        raise CloudError(f"model needs at least {k + 1} points, got {len(P)}")
    radius = np.linalg.norm(P, axis=1).max()
    if np.linalg.norm(P.mean(axis=0)) > 1e-6 or abs(radius - 1.0) > 1e-6:
        raise CloudError("model must be normalized to unit scale (see normalize_to_unit)")
    with_normals, bad = estimate_normals(model, k=k)
    return ModelContext.from_arrays(P, with_normals.normals, sigma2, mode,
                                    scale_record=scale_record, degenerate=int(bad.sum()))


def _points(S) -> np.ndarray:
    return S.points if isinstance(S, PointCloud) else np.asarray(S, dtype=np.float64).reshape(-1, 3)


def transform_scene(S, x) -> np.ndarray:
    return lie.apply(lie.exp_se3(x), _points(S))


@numba.njit(cache=True)
def _gaussian_sides_kernel(M, N, s, sigma2, cutoff):
    nm, ns = M.shape[0], s.shape[0]
    front = np.zeros(nm)
    back = np.zeros(nm)
    for a in range(nm):
        mx, my, mz = M[a, 0], M[a, 1], M[a, 2]
        nx, ny, nz = N[a, 0], N[a, 1], N[a, 2]
        f = 0.0
        k = 0.0
        for b in range(ns):  # ascending scene index: fixed accumulation order
            dx = s[b, 0] - mx
            dy = s[b, 1] - my
            dz = s[b, 2] - mz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 > cutoff:
                continue
            w = math.exp(-d2 / sigma2)
            if (nx * dx + ny * dy) + nz * dz > 0.0:
                f += w
            else:
                k += w
        front[a] = f
        back[a] = k
    return front, back


def _gaussian_sides(ctx: ModelContext, s: np.ndarray):
    """Unnormalized front and back Gaussian vote sums per model point."""
    return _gaussian_sides_kernel(np.ascontiguousarray(ctx.points), np.ascontiguousarray(ctx.normals),
                                  np.ascontiguousarray(s, dtype=np.float64), ctx.sigma2,
                                  TRUNCATE_SIGMA2 * ctx.sigma2)


def _angle_counts(model_angle: np.ndarray, scene_angle: np.ndarray):
    """Per model value: scene values strictly above and strictly below."""
    srt = np.sort(scene_angle)
    above = len(srt) - np.searchsorted(srt, model_angle, side="right")
    below = np.searchsorted(srt, model_angle, side="left")
    return above.astype(np.float64), below.astype(np.float64)


def histogram_original(ctx: ModelContext, S, x) -> np.ndarray:
    s = transform_scene(S, x)
    front, back = _gaussian_sides(ctx, s)
    z = float(len(s))
    return np.concatenate([front / z, back / z])


def histogram_improved(ctx: ModelContext, S, x) -> np.ndarray:
    s = transform_scene(S, x)
    z = float(len(s))
    front, back = _gaussian_sides(ctx, s)
    ang, _ = spherical_angles(s)
    up, down = _angle_counts(ctx.angles[:, 0], ang[:, 0])
    cw, ccw = _angle_counts(ctx.angles[:, 1], ang[:, 1])
    a, b, g = ctx.alpha, ctx.beta, ctx.gamma
    return np.concatenate([
        a * front / z, (1.0 - a) * back / z,
        b * up / z, (1.0 - b) * down / z,
        g * cw / z, (1.0 - g) * ccw / z,
    ])


def histogram(ctx: ModelContext, S, x) -> np.ndarray:
    if ctx.mode == "original":
        return histogram_original(ctx, S, x)
    return histogram_improved(ctx, S, x)


def reference_histogram(ctx: ModelContext) -> np.ndarray:
    """Feature of the model registered against itself at identity (cached)."""
    return ctx.reference


def write_histogram_csv(path, rows: Iterable) -> None:
    """One row per evaluation: iteration index followed by the feature values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for it, h in rows:
            w.writerow([int(it)] + [repr(float(v)) for v in h])
