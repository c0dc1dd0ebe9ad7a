"""SO(3)/SE(3) conversions used to parameterize rigid motions as 6-vector twists.

Twist layout is ``xi = (rho, phi)``: translational part first, rotation vector
last. All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# below this angle the trig ratios switch to their Taylor series
SMALL_ANGLE = 1e-6
# cos(theta) below this routes log_so3 through the symmetric-part axis extraction
NEAR_PI_COS = -0.99


@dataclass(frozen=True)
class RigidTransform:
    """Rotation ``R`` followed by translation ``t``: ``p -> R p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T) -> "RigidTransform":
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)


def hat(phi) -> np.ndarray:
    p = np.asarray(phi, dtype=np.float64).reshape(3)
    return np.array(
        [
            [0.0, -p[2], p[1]],
            [p[2], 0.0, -p[0]],
            [-p[1], p[0], 0.0],
        ]
    )


def vee(Phi) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=np.float64)
    return np.array([Phi[2, 1], Phi[0, 2], Phi[1, 0]])


def _trig_ratios(theta: float):
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def exp_so3(phi) -> np.ndarray:
    """Rodrigues formula ``cos t I + (1 - cos t) n n^T + sin t n^``."""
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(phi))
    a, b, _ = _trig_ratios(theta)
    # (1 - cos t) n n^T == b * phi phi^T, sin t n^ == a * phi^
    return np.cos(theta) * np.eye(3) + b * np.outer(phi, phi) + a * hat(phi)


def _first_nonzero_positive(n: np.ndarray) -> np.ndarray:
    for v in n:
        if abs(v) > 1e-12:
            return n if v > 0 else -n
    return n


def log_so3(R) -> np.ndarray:
    """Rotation vector of ``R`` with angle in [0, pi].

    At exactly pi the axis sign is ambiguous; it is fixed so the first
    nonzero component is positive.
    """
    R = np.asarray(R, dtype=np.float64)
    w = 0.5 * vee(R - R.T)  # sin(theta) * n
    c = 0.5 * (np.trace(R) - 1.0)
    s = float(np.linalg.norm(w))
    theta = float(np.arctan2(s, np.clip(c, -1.0, 1.0)))
    if theta < SMALL_ANGLE:
        # R ~ I + phi^, so w ~ phi
        return w * (1.0 + theta * theta / 6.0)
    if c > NEAR_PI_COS:
        return theta * w / s

    # near pi: read the axis off the symmetric part, cos t I + (1 - cos t) n n^T
    B = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
    i = int(np.argmax(np.diag(B)))
    n = B[:, i] / np.sqrt(max(B[i, i], 1e-300))
    n /= np.linalg.norm(n)
    if s > 1e-12 and float(n @ w) < 0.0:
        n = -n
    elif s <= 1e-12:
        n = _first_nonzero_positive(n)
    return theta * n


def left_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(phi))
    a, b, c = _trig_ratios(theta)
    # sin t/t I + (1 - sin t/t) n n^T + (1 - cos t)/t n^
    return a * np.eye(3) + c * np.outer(phi, phi) + b * hat(phi)


def exp_se3(xi) -> RigidTransform:
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return RigidTransform(exp_so3(phi), left_jacobian(phi) @ rho)


def log_se3(T: RigidTransform) -> np.ndarray:
    phi = log_so3(T.R)
    rho = np.linalg.solve(left_jacobian(phi), T.t)
    return np.concatenate([rho, phi])


def apply(T: RigidTransform, points) -> np.ndarray:
    """Transform an (N, 3) array of points; order and count are preserved."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return P @ T.R.T + T.t


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``B`` first, then ``A``."""
    return RigidTransform(A.R @ B.R, A.R @ B.t + A.t)


def inverse(T: RigidTransform) -> RigidTransform:
    return T.inverse()
