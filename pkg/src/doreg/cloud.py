"""Point clouds: I/O, voxel-average downsampling, kNN, normals and angles."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


class CloudError(ValueError):
    pass


class CloudFormatError(CloudError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class EmptyCloudError(CloudError):
    pass


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            pts = pts.reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloudError("point cloud has no points")
        if not np.isfinite(pts).all():
            raise CloudError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen(self.normals).reshape(-1, 3)
            if nrm.shape != pts.shape:
                raise CloudError("normals must match points in shape")
            if np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-9:
                raise CloudError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


# -- file I/O ----------------------------------------------------------------


def _parse_floats(tokens, path, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise CloudFormatError(path, lineno, f"non-numeric value in {' '.join(tokens)!r}") from None


def _load_csv(path: Path) -> PointCloud:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        if lineno == 1 and not rows:
            try:
                [float(t) for t in tokens]
            except ValueError:
                continue  # header line
        if len(tokens) not in (3, 6):
            raise CloudFormatError(path, lineno, f"expected 3 or 6 columns, got {len(tokens)}")
        rows.append(_parse_floats(tokens, path, lineno))
    if not rows:
        raise EmptyCloudError(f"{path}: no points")
    if len({len(r) for r in rows}) != 1:
        raise CloudFormatError(path, len(rows), "inconsistent column count")
    data = np.array(rows)
    if data.shape[1] == 6:
        return PointCloud(data[:, :3], data[:, 3:])
    return PointCloud(data)


def _load_ply(path: Path) -> PointCloud:
    lines = path.read_text().splitlines()
    if not lines:
        raise EmptyCloudError(f"{path}: empty file")
    if lines[0].strip() != "ply":
        raise CloudFormatError(path, 1, "missing 'ply' magic")
    n_vertex = None
    props: list[str] = []
    elements = []  # (name, count)
    current = None
    header_end = None
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise CloudFormatError(path, i, f"unsupported PLY format {tok[1]!r}")
        elif tok[0] == "element":
            current = tok[1]
            elements.append((tok[1], int(tok[2])))
            if current == "vertex":
                n_vertex = int(tok[2])
        elif tok[0] == "property" and current == "vertex":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None:
        raise CloudFormatError(path, len(lines), "missing end_header")
    if not n_vertex:
        raise EmptyCloudError(f"{path}: no vertices")
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise CloudFormatError(path, header_end, f"vertex has no {axis!r} property")
    # vertex element data follows any elements declared before it
    skip = 0
    for name, count in elements:
        if name == "vertex":
            break
        skip += count
    start = header_end + skip
    body = lines[start:start + n_vertex]
    if len(body) < n_vertex:
        raise CloudFormatError(path, len(lines), f"expected {n_vertex} vertices, found {len(body)}")
    data = []
    for j, line in enumerate(body):
        tok = line.split()
        if len(tok) < len(props):
            raise CloudFormatError(path, start + j + 1, "too few vertex properties")
        data.append(_parse_floats(tok[: len(props)], path, start + j + 1))
    data = np.array(data)
    col = {p: k for k, p in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    normals = None
    if all(p in col for p in ("nx", "ny", "nz")):
        normals = data[:, [col["nx"], col["ny"], col["nz"]]]
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)


def load(path, format: Optional[str] = None) -> PointCloud:
    """Read an ASCII PLY or CSV cloud; the format defaults to the file suffix."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt in ("ply", "ply-ascii"):
        return _load_ply(path)
    if fmt == "csv":
        return _load_csv(path)
    raise CloudError(f"unknown cloud format {fmt!r}")


def save(cloud: PointCloud, path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    has_n = cloud.normals is not None
    data = np.hstack([cloud.points, cloud.normals]) if has_n else cloud.points
    rows = "\n".join(" ".join(repr(float(v)) for v in row) for row in data)
    if fmt in ("ply", "ply-ascii"):
        header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
                  "property double x", "property double y", "property double z"]
        if has_n:
            header += ["property double nx", "property double ny", "property double nz"]
        header.append("end_header")
        path.write_text("\n".join(header) + "\n" + rows + "\n")
    elif fmt == "csv":
        path.write_text(rows.replace(" ", ",") + "\n")
    else:
        raise CloudError(f"unknown cloud format {fmt!r}")


# -- downsampling ------------------------------------------------------------


def _voxel_average(P: np.ndarray, origin: np.ndarray, cell: float) -> np.ndarray:
    keys = np.floor((P - origin) / cell).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, P)
    return sums / counts[:, None]


def _voxel_count(P, origin, cell) -> int:
    keys = np.floor((P - origin) / cell).astype(np.int64)
    return len(np.unique(keys, axis=0))


def downsample_average(cloud: PointCloud, target_count: int, iters: int = 60) -> PointCloud:
    """Voxel-grid average with the cell size bisected to hit ``target_count``."""
    P = cloud.points
    n = len(P)
    if not 1 <= target_count <= n:
        raise CloudError(f"target_count must be in [1, {n}], got {target_count}")
    if target_count == n:
        return cloud
    origin = P.min(axis=0)
    extent = float((P.max(axis=0) - origin).max())
    if extent == 0.0:
        return PointCloud(P[:1])
    hi = extent * (1.0 + 1e-9)  # one voxel
    lo = extent / (4.0 * n)     # at least as fine as the point spacing allows
    best_cell, best_gap = hi, abs(1 - target_count)
    # occupied-voxel count decreases (not strictly monotonically) with cell size
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        c = _voxel_count(P, origin, mid)
        gap = abs(c - target_count)
        if gap < best_gap:
            best_cell, best_gap = mid, gap
        if c == target_count:
            break
        if c > target_count:
            lo = mid
        else:
            hi = mid
    return PointCloud(_voxel_average(P, origin, best_cell))


# -- spatial index -----------------------------------------------------------


class SpatialIndex:
    """Balanced kd-tree with exact, index-tie-broken k-nearest queries."""

    def __init__(self, cloud_or_points):
        pts = cloud_or_points.points if isinstance(cloud_or_points, PointCloud) else cloud_or_points
        self.points = np.asarray(pts, dtype=np.float64)
        self.tree = cKDTree(self.points, balanced_tree=True)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, q, k: int):
        """Return (indices, distances) of the ``min(k, N)`` nearest points."""
        if k < 1:
            raise ValueError("k must be >= 1")
        q = np.asarray(q, dtype=np.float64).reshape(3)
        k = min(k, len(self.points))
        d, _ = self.tree.query(q, k=k)
        radius = float(np.atleast_1d(d)[-1])
        # gather everything tied with the k-th distance, then order by (dist, index)
        cand = np.asarray(self.tree.query_ball_point(q, radius * (1 + 1e-9) + 1e-300), dtype=np.int64)
        dist = np.linalg.norm(self.points[cand] - q, axis=1)
        order = np.lexsort((cand, dist))[:k]
        return cand[order], dist[order]

    def nearest(self, Q):
        """Vectorized single nearest neighbour for an (M, 3) query array."""
        d, i = self.tree.query(np.asarray(Q, dtype=np.float64), k=1)
        return i, d


def knn(index: SpatialIndex, q, k: int) -> list[tuple[int, float]]:
    idx, dist = index.query(q, k)
    return [(int(i), float(d)) for i, d in zip(idx, dist)]


# -- normals and angles ------------------------------------------------------


def _orient(n: np.ndarray) -> np.ndarray:
    for v in n:
        if abs(v) > 1e-12:
            return n if v > 0 else -n
    return n


def estimate_normals(cloud: PointCloud, k: int = 6):
    """Local-plane normals from each point plus its ``k`` nearest neighbours.

    Normals point away from the cloud centroid, seen from the neighbourhood
    centroid; when that is ambiguous the first nonzero component is made
    positive. Returns ``(cloud_with_normals, degenerate_mask)``; degenerate
    neighbourhoods (covariance rank < 2) get +z.
    """
    P = cloud.points
    if len(P) < k + 1:
        raise CloudError(f"need at least {k + 1} points for k={k}, got {len(P)}")
    tree = cKDTree(P)
    _, nbr = tree.query(P, k=k + 1)
    hood = P[nbr]  # (N, k+1, 3), includes the point itself
    local_c = hood.mean(axis=1)
    X = hood - local_c[:, None, :]
    cov = np.einsum("nki,nkj->nij", X, X) / (k + 1)
    w, V = np.linalg.eigh(cov)
    normals = V[:, :, 0].copy()
    scale = np.maximum(w[:, 2], 1e-300)
    degenerate = (w[:, 1] <= 1e-12 * scale) | (w[:, 2] <= 0.0)

    c = P.mean(axis=0)
    side = np.einsum("ni,ni->n", normals, local_c - c)
    span = np.linalg.norm(local_c - c, axis=1) + np.sqrt(scale)
    for i in range(len(P)):
        if degenerate[i]:
            normals[i] = (0.0, 0.0, 1.0)
        elif abs(side[i]) <= 1e-9 * span[i]:
            normals[i] = _orient(normals[i])
        elif side[i] < 0:
            normals[i] = -normals[i]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    if degenerate.any():
        log.warning("%d degenerate neighbourhoods; normals set to +z", int(degenerate.sum()))
    return PointCloud(P, normals), degenerate


def spherical_angles(points, center=(0.0, 0.0, 0.0)):
    """Elevation in [-pi/2, pi/2] and azimuth in (-pi, pi] about ``center``.

    Returns ``(angles, at_center)`` where ``angles`` is (N, 2). Points that
    coincide with the center get (0, 0) and are flagged.
    """
    P = points.points if isinstance(points, PointCloud) else points
    d = np.asarray(P, dtype=np.float64).reshape(-1, 3) - np.asarray(center, dtype=np.float64)
    r = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    at_center = r == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        el = np.arcsin(np.clip(d[:, 2] / r, -1.0, 1.0))
    az = np.arctan2(d[:, 1], d[:, 0])
    az[az == -np.pi] = np.pi
    el[at_center] = 0.0
    az[at_center] = 0.0
    return np.column_stack([el, az]), at_center


# -- normalization -----------------------------------------------------------


@dataclass(frozen=True)
class ScaleRecord:
    centroid: np.ndarray
    scale: float

    def undo(self, cloud: PointCloud) -> PointCloud:
        return PointCloud(cloud.points * self.scale + self.centroid, cloud.normals)


def normalize_to_unit(cloud: PointCloud):
    """Center on the centroid and scale so the farthest point is at distance 1."""
    if len(cloud) < 2:
        raise CloudError("need at least 2 points to normalize")
    c = cloud.centroid
    d = cloud.points - c
    scale = float(np.sqrt(np.einsum("ni,ni->n", d, d)).max())
    if scale == 0.0:
        raise CloudError("cloud has zero extent")
    return PointCloud(d / scale, cloud.normals), ScaleRecord(c, scale)
