"""Independent reference computations used only by the test suite."""

import numpy as np


def expm_series(A, terms=30):
    """Truncated matrix power series sum_k A^k / k!."""
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms + 1):
        term = term @ A / k
        out = out + term
    return out


def skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


def expm_series_batch(A, terms=30):
    """Power series for a stack of (n, 3, 3) matrices."""
    out = np.broadcast_to(np.eye(3), A.shape).copy()
    term = out.copy()
    for k in range(1, terms + 1):
        term = term @ A / k
        out += term
    return out


def jacobian_quadrature(phi, steps=10_000):
    """J = int_0^1 exp(s phi^) ds, composite Simpson over the series oracle."""
    steps += steps % 2
    s = np.linspace(0.0, 1.0, steps + 1)
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w /= 3.0 * steps
    E = expm_series_batch(s[:, None, None] * skew(phi)[None])
    return np.einsum("s,sij->ij", w, E)


def naive_histogram(model, normals, scene_t, sigma2, mode, alpha=None, beta=None,
                    gamma=None, model_angles=None):
    """Double loop over (model point, scene point) without truncation."""
    nm, ns = len(model), len(scene_t)
    front = np.zeros(nm)
    back = np.zeros(nm)
    up = np.zeros(nm)
    down = np.zeros(nm)
    cw = np.zeros(nm)
    ccw = np.zeros(nm)
    for a in range(nm):
        m = model[a]
        n = normals[a]
        for b in range(ns):
            d = scene_t[b] - m
            g = np.exp(-(d @ d) / sigma2)
            side = n[0] * d[0] + n[1] * d[1] + n[2] * d[2]
            if side > 0:
                front[a] += g
            else:
                back[a] += g
            if mode == "improved":
                p = scene_t[b]
                r = np.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
                el = np.arcsin(np.clip(p[2] / r, -1.0, 1.0)) if r > 0 else 0.0
                az = np.arctan2(p[1], p[0]) if r > 0 else 0.0
                if az == -np.pi:
                    az = np.pi
                if el > model_angles[a, 0]:
                    up[a] += 1
                if el < model_angles[a, 0]:
                    down[a] += 1
                if az > model_angles[a, 1]:
                    cw[a] += 1
                if az < model_angles[a, 1]:
                    ccw[a] += 1
    if mode == "original":
        return np.concatenate([front, back]) / ns
    return np.concatenate([
        alpha * front / ns, (1 - alpha) * back / ns,
        beta * up / ns, (1 - beta) * down / ns,
        gamma * cw / ns, (1 - gamma) * ccw / ns,
    ])


def ridge_gradient_descent(R, H, lam, steps=100_000, step=1e-3):
    """Plain gradient descent on (1/N) sum ||r_i - D h_i||^2 + lam ||D||_F^2 from D = 0."""
    n = len(H)
    G = H.T @ H / n
    C = R.T @ H / n
    D = np.zeros((R.shape[1], H.shape[1]))
    for _ in range(steps):
        D -= step * 2.0 * (D @ G - C + lam * D)
    return D


def rigid_fit_descent(src, dst, restarts=8, seed=0):
    """Least-squares rigid fit by quasi-Newton descent over (rotation vector, t) from random starts."""
    from scipy.optimize import minimize

    def cost(p):
        R = expm_series(skew(p[:3]))
        return np.sum((src @ R.T + p[3:] - dst) ** 2)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        p0 = np.concatenate([rng.normal(size=3), rng.normal(size=3) * 0.5])
        res = minimize(cost, p0, method="BFGS", options={"gtol": 1e-12, "maxiter": 5000})
        if best is None or res.fun < best.fun:
            best = res
    return expm_series(skew(best.x[:3])), best.x[3:]
