"""H-matrices over a block partition.

Blocks are stored in the cluster-tree ordering; every public function that
takes or returns vectors works in the original point ordering and applies the
tree permutation internally.

The arithmetic (H-Cholesky, triangular solves) addresses sub-blocks by pairs
of cluster ids ``(i, j)``. A pair is

* ``"lr"``   -- an admissible partition block stored as ``X @ Y.T``,
* ``"dense"`` -- a small partition block stored densely,
* ``"hier"`` -- an inner node of the block tree, split into the four son pairs,
* ``"zero"`` -- an omitted block above the diagonal of a triangular factor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from rbfh.assembly import MAGIC
from rbfh.clustering import Block, BlockPartition, ClusterTree, sparsity_constant

Array = NDArray[np.float64]

DEFAULT_TOL = 1e-12


class HMatrixError(ValueError):
    pass


class NotSPDError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Truncation:
    """Rank selection for low-rank blocks.

    ``rank`` caps the block rank; ``tol`` drops singular values
    ``sigma <= tol * sigma_1``. With both unset nothing is truncated.
    """

    rank: int | None = None
    tol: float | None = None

    def __post_init__(self) -> None:
        if self.rank is not None and self.rank < 0:
            raise HMatrixError("rank must be nonnegative")
        if self.tol is not None and self.tol < 0:
            raise HMatrixError("tolerance must be nonnegative")

    @classmethod
    def fixed_rank(cls, r: int) -> Truncation:
        return cls(rank=int(r))

    @classmethod
    def tolerance(cls, eps: float = DEFAULT_TOL) -> Truncation:
        return cls(tol=float(eps))

    def choose(self, s: Array) -> int:
        k = s.size
        if k == 0:
            return 0
        if self.tol is not None:
            k = int(np.count_nonzero(s > self.tol * s[0])) if s[0] > 0 else 0
        if self.rank is not None:
            k = min(k, self.rank)
        return k

    def describe(self) -> str:
        parts = []
        if self.rank is not None:
            parts.append(f"rank={self.rank}")
        if self.tol is not None:
            parts.append(f"tol={self.tol:g}")
        return ",".join(parts) or "exact"


EXACT = Truncation()


@dataclass(frozen=True)
class LowRankBlock:
    X: Array
    Y: Array

    @property
    def rank(self) -> int:
        return self.X.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape[0], self.Y.shape[0]

    def to_dense(self) -> Array:
        return self.X @ self.Y.T


def _lowrank_from_dense(D: Array, trunc: Truncation) -> LowRankBlock:
    if D.size == 0:
        return LowRankBlock(np.zeros((D.shape[0], 0)), np.zeros((D.shape[1], 0)))
    U, s, Vt = np.linalg.svd(D, full_matrices=False)
    k = trunc.choose(s)
    return LowRankBlock(U[:, :k] * s[:k], Vt[:k].T.copy())


def _recompress(X: Array, Y: Array, trunc: Truncation) -> LowRankBlock:
    if X.shape[1] == 0:
        return LowRankBlock(X, Y)
    Qx, Rx = np.linalg.qr(X)
    Qy, Ry = np.linalg.qr(Y)
    U, s, Vt = np.linalg.svd(Rx @ Ry.T)
    k = trunc.choose(s)
    return LowRankBlock(Qx @ (U[:, :k] * s[:k]), Qy @ Vt[:k].T)


@dataclass
class HMatrix:
    """Partition-aligned container of low-rank and dense blocks.

    With ``lower=True`` only blocks on or below the diagonal (in tree
    ordering) are stored and the rest are zero.
    """

    partition: BlockPartition
    adm_blocks: dict[Block, LowRankBlock]
    small_blocks: dict[Block, Array]
    rank_bound: int | None = None
    lower: bool = False
    truncation: Truncation = field(default=EXACT)

    @property
    def tree(self) -> ClusterTree:
        return self.partition.tree

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def max_rank(self) -> int:
        return max((b.rank for b in self.adm_blocks.values()), default=0)

    def kind(self, i: int, j: int) -> str:
        if (i, j) in self.adm_blocks:
            return "lr"
        if (i, j) in self.small_blocks:
            return "dense"
        nodes = self.tree.nodes
        if self.lower and nodes[i].stop <= nodes[j].start:
            return "zero"
        if nodes[i].sons and nodes[j].sons:
            return "hier"
        raise HMatrixError(f"({i}, {j}) is not a block of this H-matrix")

    def to_dense_tree(self) -> Array:
        """Dense matrix in tree ordering."""
        tree = self.tree
        out = np.zeros((self.n, self.n))
        for (i, j), b in self.adm_blocks.items():
            out[tree.span(i), tree.span(j)] = b.to_dense()
        for (i, j), D in self.small_blocks.items():
            out[tree.span(i), tree.span(j)] = D
        return out

    def to_dense(self) -> Array:
        """Dense matrix in the original ordering."""
        out = np.empty((self.n, self.n))
        perm = self.tree.perm
        out[np.ix_(perm, perm)] = self.to_dense_tree()
        return out

    def diagnostics(self) -> dict:
        store = storage_entries(self)
        return {
            "rank_bound": self.rank_bound,
            "max_rank": self.max_rank,
            "truncation": self.truncation.describe(),
            "n_adm": len(self.adm_blocks),
            "n_small": len(self.small_blocks),
            "storage_entries": store,
            "compression_ratio": store / float(self.n * self.n),
            "sparsity_constant": sparsity_constant(self.partition),
            "depth": self.tree.depth,
        }


def compress(dense: Array, p: BlockPartition, trunc: Truncation | int | float | None = None) -> HMatrix:
    """Blockwise truncated SVD of a dense matrix (original ordering).

    ``trunc`` may be a :class:`Truncation`, an ``int`` (fixed rank) or a
    ``float`` (relative tolerance). Small blocks are copied verbatim.
    """
    trunc = _as_trunc(trunc)
    tree = p.tree
    dense = np.asarray(dense, dtype=np.float64)
    if dense.shape != (tree.n, tree.n):
        raise HMatrixError(f"matrix shape {dense.shape} does not match partition size {tree.n}")
    adm: dict[Block, LowRankBlock] = {}
    small: dict[Block, Array] = {}
    for b in p.admissible:
        sub = dense[np.ix_(tree.indices(b[0]), tree.indices(b[1]))]
        try:
            adm[b] = _lowrank_from_dense(sub, trunc)
        except np.linalg.LinAlgError as exc:
            raise HMatrixError(f"SVD failed on admissible block {b}: {exc}") from exc
    for b in p.small:
        small[b] = dense[np.ix_(tree.indices(b[0]), tree.indices(b[1]))].copy()
    return HMatrix(p, adm, small, trunc.rank, False, trunc)


def _as_trunc(trunc: Truncation | int | float | None) -> Truncation:
    if trunc is None:
        return EXACT
    if isinstance(trunc, Truncation):
        return trunc
    if isinstance(trunc, (int, np.integer)):
        return Truncation.fixed_rank(int(trunc))
    return Truncation.tolerance(float(trunc))


def truncate(h: HMatrix, trunc: Truncation | int | float) -> HMatrix:
    """Re-truncate every low-rank block of ``h``."""
    trunc = _as_trunc(trunc)
    adm = {b: _recompress(lr.X, lr.Y, trunc) for b, lr in h.adm_blocks.items()}
    small = {b: D.copy() for b, D in h.small_blocks.items()}
    return HMatrix(h.partition, adm, small, trunc.rank, h.lower, trunc)


def _matvec_tree(h: HMatrix, v: Array, transpose: bool = False) -> Array:
    tree = h.tree
    y = np.zeros_like(v)
    for (i, j), b in h.adm_blocks.items():
        si, sj = tree.span(i), tree.span(j)
        if transpose:
            y[sj] += b.Y @ (b.X.T @ v[si])
        else:
            y[si] += b.X @ (b.Y.T @ v[sj])
    for (i, j), D in h.small_blocks.items():
        si, sj = tree.span(i), tree.span(j)
        if transpose:
            y[sj] += D.T @ v[si]
        else:
            y[si] += D @ v[sj]
    return y


def matvec(h: HMatrix, v: Array, transpose: bool = False) -> Array:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != h.n:
        raise HMatrixError(f"vector length {v.shape[0]} does not match H-matrix size {h.n}")
    perm = h.tree.perm
    out = np.empty_like(v)
    out[perm] = _matvec_tree(h, v[perm], transpose)
    return out


def storage_entries(h: HMatrix) -> int:
    tree = h.tree
    total = 0
    for (i, j), b in h.adm_blocks.items():
        total += b.rank * (tree.nodes[i].size + tree.nodes[j].size)
    for D in h.small_blocks.values():
        total += D.size
    return int(total)


# --- block arithmetic --------------------------------------------------------


class _Arith:
    """Mutable block store used while factorizing; addresses are cluster pairs."""

    def __init__(self, h: HMatrix, trunc: Truncation):
        self.tree = h.tree
        self.nodes = h.tree.nodes
        self.adm = dict(h.adm_blocks)
        self.small = {b: D.copy() for b, D in h.small_blocks.items()}
        self.lower = h.lower
        self.trunc = trunc
        self.h = h

    def kind(self, i: int, j: int) -> str:
        if (i, j) in self.adm:
            return "lr"
        if (i, j) in self.small:
            return "dense"
        if self.lower and self.nodes[i].stop <= self.nodes[j].start:
            return "zero"
        return "hier"

    def upper(self, i: int, j: int) -> bool:
        return self.nodes[i].stop <= self.nodes[j].start

    def sons(self, i: int) -> tuple[int, ...]:
        return self.nodes[i].sons

    def offset(self, parent: int, son: int) -> slice:
        base = self.nodes[parent].start
        c = self.nodes[son]
        return slice(c.start - base, c.stop - base)

    def split(self, i: int, V: Array) -> list[tuple[int, Array]]:
        base = self.nodes[i].start
        out = []
        for s in self.sons(i):
            c = self.nodes[s]
            out.append((s, V[c.start - base : c.stop - base]))
        return out

    def size(self, i: int) -> int:
        return self.nodes[i].size

    # y = W(i,j) @ V  (transpose=False) or W(i,j).T @ V
    def apply(self, i: int, j: int, V: Array, transpose: bool = False) -> Array:
        kind = self.kind(i, j)
        rows = self.size(j) if transpose else self.size(i)
        if kind == "lr":
            b = self.adm[(i, j)]
            return b.Y @ (b.X.T @ V) if transpose else b.X @ (b.Y.T @ V)
        if kind == "dense":
            D = self.small[(i, j)]
            return D.T @ V if transpose else D @ V
        if kind == "zero":
            return np.zeros((rows,) + V.shape[1:])
        out = np.zeros((rows,) + V.shape[1:])
        for a in self.sons(i):
            ra = self.offset(i, a)
            for b in self.sons(j):
                rb = self.offset(j, b)
                if transpose:
                    out[rb] += self.apply(a, b, V[ra], True)
                else:
                    out[ra] += self.apply(a, b, V[rb])
        return out

    def dense(self, i: int, j: int) -> Array:
        return self.apply(i, j, np.eye(self.size(j)))

    # W(i,j) -= P, P given as ("lr", X, Y) meaning X @ Y.T or ("dense", D)
    def subtract(self, i: int, j: int, prod: tuple) -> None:
        if self.upper(i, j) and self.lower:
            return
        kind = self.kind(i, j)
        if kind == "zero":
            return
        if kind == "dense":
            D = self.small[(i, j)]
            D -= prod[1] @ prod[2].T if prod[0] == "lr" else prod[1]
        elif kind == "lr":
            b = self.adm[(i, j)]
            if prod[0] == "lr":
                X = np.hstack([b.X, -prod[1]])
                Y = np.hstack([b.Y, prod[2]])
                self.adm[(i, j)] = _recompress(X, Y, self.trunc)
            else:
                self.adm[(i, j)] = _lowrank_from_dense(b.to_dense() - prod[1], self.trunc)
        else:
            if prod[0] == "lr":
                for a, Xa in self.split(i, prod[1]):
                    for c, Yc in self.split(j, prod[2]):
                        self.subtract(a, c, ("lr", Xa, Yc))
            else:
                D = prod[1]
                for a in self.sons(i):
                    for c in self.sons(j):
                        self.subtract(a, c, ("dense", D[self.offset(i, a), self.offset(j, c)]))

    # W(i,j) -= W(i,k) @ W(j,k).T
    def muladd(self, i: int, j: int, k: int) -> None:
        if self.lower and self.upper(i, j):
            return
        kc, ka, kb = self.kind(i, j), self.kind(i, k), self.kind(j, k)
        if "zero" in (ka, kb):
            return
        if kc == "hier" and ka == "hier" and kb == "hier":
            for a in self.sons(i):
                for b in self.sons(j):
                    if self.lower and self.upper(a, b):
                        continue
                    for c in self.sons(k):
                        self.muladd(a, b, c)
            return
        if ka == "lr":
            A = self.adm[(i, k)]
            prod = ("lr", A.X, self.apply(j, k, A.Y))
        elif kb == "lr":
            Bl = self.adm[(j, k)]
            prod = ("lr", self.apply(i, k, Bl.Y), Bl.X)
        elif ka == "dense" and self.size(i) <= self.size(k):
            # rank <= |i|: P = I @ (W(j,k) @ W(i,k).T).T
            prod = ("lr", np.eye(self.size(i)), self.apply(j, k, self.small[(i, k)].T))
        elif ka == "dense":
            prod = ("lr", self.small[(i, k)], self.dense(j, k))
        elif kb == "dense" and self.size(j) <= self.size(k):
            prod = ("lr", self.apply(i, k, self.small[(j, k)].T), np.eye(self.size(j)))
        elif kb == "dense":
            prod = ("lr", self.dense(i, k), self.small[(j, k)])
        else:
            prod = ("dense", self.apply(i, k, self.dense(j, k).T))
        self.subtract(i, j, prod)

    # solve L(j,j) Z = Y (transpose=False) or L(j,j).T Z = Y, L stored on the diagonal
    def trsv(self, j: int, Y: Array, transpose: bool = False) -> Array:
        if (j, j) in self.small:
            L = self.small[(j, j)]
            return sla.solve_triangular(L, Y, lower=True, trans="T" if transpose else "N", check_finite=False)
        s1, s2 = self.sons(j)
        n1 = self.size(s1)
        Y = np.array(Y, dtype=np.float64, copy=True)
        Y1, Y2 = Y[:n1], Y[n1:]
        if transpose:
            Z2 = self.trsv(s2, Y2, True)
            Z1 = self.trsv(s1, Y1 - self.apply(s2, s1, Z2, True), True)
        else:
            Z1 = self.trsv(s1, Y1)
            Z2 = self.trsv(s2, Y2 - self.apply(s2, s1, Z1))
        return np.concatenate([Z1, Z2], axis=0)

    # W(i,j) <- W(i,j) @ L(j,j)^{-T}
    def trsm_right(self, i: int, j: int) -> None:
        kind = self.kind(i, j)
        if kind == "lr":
            b = self.adm[(i, j)]
            self.adm[(i, j)] = LowRankBlock(b.X, self.trsv(j, b.Y))
        elif kind == "dense":
            self.small[(i, j)] = self.trsv(j, self.small[(i, j)].T).T.copy()
        elif kind == "hier":
            j1, j2 = self.sons(j)
            for a in self.sons(i):
                self.trsm_right(a, j1)
                self.muladd(a, j2, j1)
                self.trsm_right(a, j2)

    def cholesky(self, i: int) -> None:
        if (i, i) in self.small:
            D = self.small[(i, i)]
            try:
                L = np.linalg.cholesky(D)
            except np.linalg.LinAlgError as exc:
                raise NotSPDError(f"matrix not SPD (pivot <= 0 at cluster {i})") from exc
            self.small[(i, i)] = L
            return
        s1, s2 = self.sons(i)
        self.cholesky(s1)
        self.trsm_right(s2, s1)
        self.muladd(s2, s2, s1)
        self.cholesky(s2)


def hcholesky(h: HMatrix, trunc: Truncation | int | float | None = DEFAULT_TOL) -> HMatrix:
    """Block-recursive Cholesky factorization in H-arithmetic.

    Only the lower triangle of ``h`` (tree ordering) is read. Every low-rank
    update is recompressed right away with ``trunc``. The factor satisfies
    ``L L^T ~ h`` in tree ordering; use :func:`apply_inverse` for solves in
    the original ordering.
    """
    trunc = _as_trunc(trunc)
    work = _Arith(h, trunc)
    work.lower = True
    work.cholesky(h.tree.root)
    nodes = h.tree.nodes
    adm = {b: v for b, v in work.adm.items() if nodes[b[0]].start >= nodes[b[1]].stop}
    small = {}
    for b, D in work.small.items():
        if b[0] == b[1]:
            small[b] = np.tril(D)
        elif nodes[b[0]].start >= nodes[b[1]].stop:
            small[b] = D
    return HMatrix(h.partition, adm, small, trunc.rank, True, trunc)


def _check_factor(factor: HMatrix) -> None:
    if not factor.lower:
        raise HMatrixError("expected a lower-triangular factor from hcholesky")
    for (i, j), D in factor.small_blocks.items():
        if i == j and np.any(np.diag(D) == 0):
            raise HMatrixError(f"zero on the diagonal of factor block ({i}, {i})")


def solve_triangular(factor: HMatrix, rhs: Array, transposed: bool = False) -> Array:
    """Solve ``L x = rhs`` (or ``L^T x = rhs``); vectors in original ordering."""
    _check_factor(factor)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != factor.n:
        raise HMatrixError("right-hand side has the wrong length")
    work = _Arith(factor, EXACT)
    perm = factor.tree.perm
    out = np.empty_like(rhs)
    out[perm] = work.trsv(factor.tree.root, rhs[perm], transposed)
    return out


def apply_inverse(factor: HMatrix, v: Array) -> Array:
    """``(L L^T)^{-1} v``."""
    _check_factor(factor)
    v = np.asarray(v, dtype=np.float64)
    work = _Arith(factor, EXACT)
    perm = factor.tree.perm
    root = factor.tree.root
    out = np.empty_like(v)
    out[perm] = work.trsv(root, work.trsv(root, v[perm]), True)
    return out


def est_spectral_norm(
    apply: Callable[[Array], Array],
    n: int,
    apply_t: Callable[[Array], Array] | None = None,
    max_iter: int = 500,
    rtol: float = 1e-10,
    seed: int = 0,
) -> tuple[float, dict]:
    """Power iteration for the largest singular value of a linear operator.

    Without ``apply_t`` the operator is taken to be symmetric. Returns the
    estimate and a diagnostics dict with the iteration count.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    it = 0
    done = False
    for it in range(1, max_iter + 1):
        y = apply(x)
        z = apply_t(y) if apply_t is not None else apply(y)
        nz = np.linalg.norm(z)
        new = float(np.sqrt(nz))
        if nz == 0.0:
            est, done = 0.0, True
            break
        x = z / nz
        done = abs(new - est) <= rtol * new
        est = new
        if done:
            break
    return est, {"iterations": it, "converged": done}


# --- serialization -----------------------------------------------------------


def _write_record(fh, M: Array) -> None:
    M = np.ascontiguousarray(M, dtype="<f8")
    fh.write(MAGIC)
    fh.write(struct.pack("<QQ", *M.shape))
    fh.write(M.tobytes())


def _read_record(raw: bytes, offset: int) -> tuple[Array, int]:
    if raw[offset : offset + 8] != MAGIC:
        raise HMatrixError(f"bad record header at byte {offset}")
    r, c = struct.unpack("<QQ", raw[offset + 8 : offset + 24])
    start = offset + 24
    M = np.frombuffer(raw, dtype="<f8", count=r * c, offset=start).reshape(r, c).astype(np.float64)
    return M, start + 8 * r * c


def save_hmatrix(h: HMatrix, directory: str | Path) -> None:
    """Write ``index.json`` (partition + block table) and ``blocks.bin``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    table = []
    with open(d / "blocks.bin", "wb") as fh:
        for b in sorted(h.adm_blocks):
            lr = h.adm_blocks[b]
            table.append({"block": list(b), "kind": "lowrank", "offset": fh.tell(), "rank": lr.rank})
            _write_record(fh, lr.X)
            _write_record(fh, lr.Y)
        for b in sorted(h.small_blocks):
            table.append({"block": list(b), "kind": "dense", "offset": fh.tell()})
            _write_record(fh, h.small_blocks[b])
    index = {
        "partition": h.partition.to_dict(),
        "lower": h.lower,
        "rank_bound": h.rank_bound,
        "truncation": {"rank": h.truncation.rank, "tol": h.truncation.tol},
        "blocks": table,
        "diagnostics": h.diagnostics(),
    }
    (d / "index.json").write_text(json.dumps(index, indent=1))


def load_hmatrix(directory: str | Path) -> HMatrix:
    from rbfh.clustering import partition_from_dict

    d = Path(directory)
    index = json.loads((d / "index.json").read_text())
    raw = (d / "blocks.bin").read_bytes()
    p = partition_from_dict(index["partition"])
    adm: dict[Block, LowRankBlock] = {}
    small: dict[Block, Array] = {}
    for entry in index["blocks"]:
        b = tuple(entry["block"])
        if entry["kind"] == "lowrank":
            X, off = _read_record(raw, entry["offset"])
            Y, _ = _read_record(raw, off)
            adm[b] = LowRankBlock(X, Y)
        else:
            small[b], _ = _read_record(raw, entry["offset"])
    t = index.get("truncation", {})
    return HMatrix(p, adm, small, index["rank_bound"], index["lower"], Truncation(t.get("rank"), t.get("tol")))


# --- factorization accuracy --------------------------------------------------


def inverse_error(
    factor: HMatrix, M: Array, max_iter: int = 200, rtol: float = 1e-6, seed: int = 0
) -> tuple[float, dict]:
    """Power-iteration estimate of ``||I - (L L^T)^{-1} M||_2`` (original ordering).

    A loose stopping tolerance is enough here: the estimate is only compared
    across ranks that differ by orders of magnitude.
    """
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]

    def E(v: Array) -> Array:
        return v - apply_inverse(factor, M @ v)

    def Et(v: Array) -> Array:
        return v - M @ apply_inverse(factor, v)

    return est_spectral_norm(E, n, Et, max_iter=max_iter, rtol=rtol, seed=seed)


def cholesky_rank_sweep(
    M: Array,
    p: BlockPartition,
    ranks: list[int],
    compress_tol: float = DEFAULT_TOL,
    seed: int = 0,
) -> list[dict]:
    """Factor ``M`` once at ``compress_tol`` and project the factor to each rank.

    Rows come back sorted by rank with the estimated ``||I - (L_r L_r^T)^{-1} M||_2``.
    """
    L = hcholesky(compress(M, p, compress_tol), compress_tol)
    rows = []
    for r in sorted(set(int(r) for r in ranks)):
        if r < 0:
            raise HMatrixError("ranks must be nonnegative")
        err, info = inverse_error(truncate(L, r), M, seed=seed)
        rows.append({"rank": r, "error": err, "iterations": info["iterations"]})
    return rows
