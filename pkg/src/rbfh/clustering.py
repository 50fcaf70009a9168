"""Geometric cluster trees and sparse hierarchical block partitions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from numpy.typing import NDArray

from rbfh.geometry import AxisBox, PointCloud, bounding_box, box_diam, box_dist

DEFAULT_LEAF_SIZE = 32
DEFAULT_ETA = 2.0
EXACT_COVERAGE_MAX_N = 5000


@dataclass(frozen=True)
class Cluster:
    """Contiguous range ``perm[start:stop]`` of the tree ordering."""

    start: int
    stop: int
    box: AxisBox
    level: int
    sons: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.sons


@dataclass(frozen=True)
class ClusterTree:
    nodes: list[Cluster]
    perm: NDArray[np.intp]
    leaf_size: int
    depth: int
    h_min: float

    @property
    def n(self) -> int:
        return self.perm.size

    @property
    def root(self) -> int:
        return 0

    @property
    def iperm(self) -> NDArray[np.intp]:
        """Position of each original index in the tree ordering."""
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.perm.size)
        return inv

    def indices(self, node: int) -> NDArray[np.intp]:
        c = self.nodes[node]
        return self.perm[c.start : c.stop]

    def span(self, node: int) -> slice:
        c = self.nodes[node]
        return slice(c.start, c.stop)

    def to_dict(self) -> dict:
        return {
            "leaf_size": self.leaf_size,
            "depth": self.depth,
            "h_min": self.h_min,
            "permutation": self.perm.tolist(),
            "clusters": [
                {
                    "id": i,
                    "range": [c.start, c.stop],
                    "level": c.level,
                    "sons": list(c.sons),
                    "box": c.box.to_dict(),
                }
                for i, c in enumerate(self.nodes)
            ],
        }


def _split(points: NDArray[np.float64], idx: NDArray[np.intp], box: AxisBox):
    extent = box.hi - box.lo
    # longest edge first; ties resolved by the lower axis number
    for axis in np.argsort(-extent, kind="stable"):
        if extent[axis] <= 0:
            break
        mid = 0.5 * (box.lo[axis] + box.hi[axis])
        lower = points[idx, axis] <= mid
        if lower.any() and not lower.all():
            return idx[lower], idx[~lower]
    return None


def build_cluster_tree(cloud: PointCloud, leaf_size: int = DEFAULT_LEAF_SIZE) -> ClusterTree:
    """Recursive geometric bisection of bounding boxes.

    Every cluster box is the tight bounding box of its points grown by the
    separation distance, so it contains the balls of that radius around its
    points.
    """
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    h = cloud.sep_distance
    pts = cloud.points
    nodes: list[Cluster | None] = []
    order: list[NDArray[np.intp]] = []
    depth = 0

    def build(idx: NDArray[np.intp], level: int, start: int) -> int:
        nonlocal depth
        depth = max(depth, level + 1)
        me = len(nodes)
        nodes.append(None)
        box = bounding_box(cloud, idx, h)
        parts = _split(pts, idx, box) if idx.size > leaf_size else None
        if parts is None:
            order.append(idx)
            nodes[me] = Cluster(start, start + idx.size, box, level)
            return me
        lo, hi = parts
        s1 = build(lo, level + 1, start)
        s2 = build(hi, level + 1, start + lo.size)
        nodes[me] = Cluster(start, start + idx.size, box, level, (s1, s2))
        return me

    build(np.arange(cloud.n, dtype=np.intp), 0, 0)
    perm = np.concatenate(order).astype(np.intp)
    return ClusterTree(nodes, perm, leaf_size, depth, h)  # type: ignore[arg-type]


Block = tuple[int, int]


@dataclass(frozen=True)
class BlockPartition:
    """Admissible and small blocks, given as pairs of cluster ids."""

    admissible: list[Block]
    small: list[Block]
    eta: float
    tree: ClusterTree = field(repr=False)

    @property
    def blocks(self) -> list[Block]:
        return self.admissible + self.small

    def block_shape(self, b: Block) -> tuple[int, int]:
        return self.tree.nodes[b[0]].size, self.tree.nodes[b[1]].size

    def is_admissible_pair(self, b: Block) -> bool:
        bi, bj = self.tree.nodes[b[0]].box, self.tree.nodes[b[1]].box
        return admissible(bi, bj, self.eta)

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "tree": self.tree.to_dict(),
            "admissible": [list(b) for b in self.admissible],
            "small": [list(b) for b in self.small],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def admissible(bi: AxisBox, bj: AxisBox, eta: float) -> bool:
    # touching boxes never qualify, even when a box degenerates to a point
    dist = box_dist(bi, bj)
    return dist > 0 and box_diam(bi) <= eta * dist


def build_block_partition(tree: ClusterTree, eta: float = DEFAULT_ETA) -> BlockPartition:
    """Descend from (root, root); admissibility uses the row box only:
    ``diam(B_I) <= eta * dist(B_I, B_J)``.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    adm: list[Block] = []
    small: list[Block] = []
    nodes = tree.nodes

    stack = [(tree.root, tree.root)]
    while stack:
        i, j = stack.pop()
        ci, cj = nodes[i], nodes[j]
        if admissible(ci.box, cj.box, eta):
            adm.append((i, j))
        elif ci.is_leaf or cj.is_leaf:
            small.append((i, j))
        else:
            # reversed so that blocks pop in (I1,J1), (I1,J2), (I2,J1), (I2,J2) order
            for si in reversed(ci.sons):
                for sj in reversed(cj.sons):
                    stack.append((si, sj))
    return BlockPartition(adm, small, float(eta), tree)


def sparsity_constant(p: BlockPartition) -> int:
    n_nodes = len(p.tree.nodes)
    rows = np.zeros(n_nodes, dtype=np.int64)
    cols = np.zeros(n_nodes, dtype=np.int64)
    for i, j in p.blocks:
        rows[i] += 1
        cols[j] += 1
    return int(max(rows.max(initial=0), cols.max(initial=0)))


def validate_partition(p: BlockPartition, n: int, seed: int = 0, n_samples: int = 200_000) -> dict:
    """Coverage, admissibility and smallness checks plus block statistics."""
    tree = p.tree
    nodes = tree.nodes
    blocks = p.blocks
    area = sum(nodes[i].size * nodes[j].size for i, j in blocks)
    is_partition = area == n * n and tree.n == n
    if is_partition:
        if n <= EXACT_COVERAGE_MAX_N:
            count = np.zeros((n, n), dtype=np.int16)
            for i, j in blocks:
                count[tree.span(i), tree.span(j)] += 1
            is_partition = bool(np.all(count == 1))
        else:
            rng = np.random.default_rng(seed)
            cells = rng.integers(0, n, size=(n_samples, 2))
            hits = np.zeros(n_samples, dtype=np.int64)
            for i, j in blocks:
                ci, cj = nodes[i], nodes[j]
                hits += (
                    (cells[:, 0] >= ci.start) & (cells[:, 0] < ci.stop)
                    & (cells[:, 1] >= cj.start) & (cells[:, 1] < cj.stop)
                )
            is_partition = bool(np.all(hits == 1))
    adm_ok = all(p.is_admissible_pair(b) for b in p.admissible)
    small_ok = all(min(p.block_shape(b)) <= tree.leaf_size for b in p.small)
    return {
        "is_partition": bool(is_partition),
        "admissible_ok": adm_ok,
        "small_ok": small_ok,
        "sparsity_constant": sparsity_constant(p),
        "n_adm": len(p.admissible),
        "n_small": len(p.small),
        "depth": tree.depth,
    }


def norm_upper_bound(p: BlockPartition, blockwise_norms: Mapping[Block, float]) -> float:
    """``C_sp * depth * max ||M|_b||_2``, an upper bound for ``||M||_2``."""
    missing = [b for b in p.blocks if b not in blockwise_norms]
    if missing:
        raise KeyError(f"no norm given for block {missing[0]}")
    top = max((float(blockwise_norms[b]) for b in p.blocks), default=0.0)
    return sparsity_constant(p) * p.tree.depth * top


def tree_from_dict(cfg: dict) -> ClusterTree:
    nodes = [
        Cluster(
            c["range"][0],
            c["range"][1],
            AxisBox(np.array(c["box"]["lo"]), np.array(c["box"]["hi"])),
            c["level"],
            tuple(c["sons"]),
        )
        for c in cfg["clusters"]
    ]
    perm = np.array(cfg["permutation"], dtype=np.intp)
    return ClusterTree(nodes, perm, int(cfg["leaf_size"]), int(cfg["depth"]), float(cfg["h_min"]))


def partition_from_dict(cfg: dict) -> BlockPartition:
    tree = tree_from_dict(cfg["tree"])
    adm = [tuple(b) for b in cfg["admissible"]]
    small = [tuple(b) for b in cfg["small"]]
    return BlockPartition(adm, small, float(cfg["eta"]), tree)  # type: ignore[arg-type]


def load_partition(path: str | Path) -> BlockPartition:
    return partition_from_dict(json.loads(Path(path).read_text()))
