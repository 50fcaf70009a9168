"""Point clouds, axis-parallel boxes and grid generators."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray


class GeometryError(ValueError):
    pass


def _pairwise_min_sq(points: NDArray[np.float64]) -> float:
    best = np.inf
    for i in range(points.shape[0] - 1):
        diff = points[i + 1 :] - points[i]
        d2 = np.min(np.sum(diff * diff, axis=1))
        if d2 < best:
            best = d2
    return float(best)


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of pairwise distinct points in R^d.

    ``points`` has shape (N, d). The separation distance (half the smallest
    pairwise distance) is computed once at construction; it is 0 for N = 1.
    """

    points: NDArray[np.float64]
    sep_distance: float = field(init=False)

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise GeometryError("point array must have shape (N, d) with N, d >= 1")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise GeometryError("points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        h = 0.5 * np.sqrt(_pairwise_min_sq(pts)) if pts.shape[0] > 1 else 0.0
        object.__setattr__(self, "sep_distance", float(h))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class AxisBox:
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise GeometryError("box corners must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise GeometryError("box requires lo <= hi componentwise")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls, d: int) -> AxisBox:
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def diameter(self) -> float:
        return box_diam(self)

    def contains(self, x: ArrayLike) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def separation_distance(cloud: PointCloud) -> float:
    if cloud.n < 2:
        raise GeometryError("need at least two points")
    return cloud.sep_distance


def _axis_coords(n_per_axis: int, grading: float) -> NDArray[np.float64]:
    t = np.arange(n_per_axis, dtype=np.float64) / (n_per_axis - 1)
    if grading != 1.0:
        t = t**grading
    return t


def _tensor_grid(d: int, n_per_axis: int, grading: float, domain: AxisBox | None) -> PointCloud:
    if n_per_axis < 2:
        raise GeometryError("n_per_axis must be at least 2")
    if domain is None:
        domain = AxisBox.unit(d)
    if domain.dim != d:
        raise GeometryError("domain dimension does not match d")
    t = _axis_coords(n_per_axis, grading)
    axes = [domain.lo[i] + t * (domain.hi[i] - domain.lo[i]) for i in range(d)]
    # indexing="ij" with C-order ravel: the last axis varies fastest
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return PointCloud(pts)


def generate_uniform_grid(d: int, n_per_axis: int, domain: AxisBox | None = None) -> PointCloud:
    """Tensor grid with ``n_per_axis**d`` points, row-wise ordering."""
    return _tensor_grid(d, n_per_axis, 1.0, domain)


def generate_graded_grid(
    d: int, n_per_axis: int, grading: float, domain: AxisBox | None = None
) -> PointCloud:
    """Tensor grid with per-axis coordinates ``(i/(n-1))**grading``.

    The grid is refined towards ``domain.lo``. ``grading == 1`` gives exactly
    the uniform grid.
    """
    if grading < 1.0:
        raise GeometryError("grading exponent must be >= 1")
    return _tensor_grid(d, n_per_axis, float(grading), domain)


def bounding_box(
    cloud: PointCloud, indices: Sequence[int] | NDArray[np.intp], inflate_by: float | None = None
) -> AxisBox:
    """Smallest box around ``cloud.points[indices]`` grown by ``inflate_by``.

    The default inflation is the separation distance, so the box contains the
    balls of that radius around every selected point.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size == 0:
        raise GeometryError("empty index set")
    if inflate_by is None:
        inflate_by = cloud.sep_distance
    if inflate_by < 0:
        raise GeometryError("inflation must be nonnegative")
    sub = cloud.points[idx]
    return AxisBox(sub.min(axis=0) - inflate_by, sub.max(axis=0) + inflate_by)


def box_diam(b: AxisBox) -> float:
    return float(np.linalg.norm(b.hi - b.lo))


def box_dist(a: AxisBox, b: AxisBox) -> float:
    gap = np.maximum(0.0, np.maximum(a.lo - b.hi, b.lo - a.hi))
    return float(np.linalg.norm(gap))


def write_points(path: str | Path, cloud: PointCloud) -> None:
    lines = [f"{cloud.dim} {cloud.n}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in cloud.points]
    Path(path).write_text("\n".join(lines) + "\n")


def read_points(path: str | Path) -> PointCloud:
    rows = Path(path).read_text().split("\n")
    header = rows[0].split()
    if len(header) != 2:
        raise GeometryError(f"{path}: header must be 'd N'")
    d, n = int(header[0]), int(header[1])
    data = np.loadtxt(rows[1 : n + 1], dtype=np.float64, ndmin=2)
    if data.shape != (n, d):
        raise GeometryError(f"{path}: expected {n} rows of {d} values, got {data.shape}")
    return PointCloud(data)
