"""Deterministic synthetic model shapes for experiments without external data."""

import numpy as np

from .cloud import PointCloud, normalize_to_unit

# (direction, amplitude, width) of the bumps that break every symmetry
_BUMPS = (
    ((0.9, 0.2, 0.4), 0.55, 0.18),   # head
    ((0.5, 0.35, 0.95), 0.45, 0.05),  # ear
    ((0.7, -0.25, 0.9), 0.30, 0.04),  # second, shorter ear
    ((-0.8, -0.3, -0.2), 0.25, 0.10),  # tail
)
_AXES = np.array([1.25, 0.8, 0.7])


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def blob(n: int = 128) -> PointCloud:
    """An asymmetric, bunny-like closed surface sampled at ``n`` points.

    The result is normalized to unit scale (centroid at the origin, farthest
    point at distance 1).
    """
    u = fibonacci_sphere(n)
    radius = np.ones(n)
    for d, amp, width in _BUMPS:
        d = np.asarray(d) / np.linalg.norm(d)
        radius += amp * np.exp(-np.sum((u - d) ** 2, axis=1) / width)
    pts = u * radius[:, None] * _AXES
    return normalize_to_unit(PointCloud(pts))[0]
