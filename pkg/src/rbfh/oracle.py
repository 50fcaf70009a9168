"""Dense reference computations for the inverse of the interpolation matrix.

The exact inverse is split into blocks ``S11 .. S22``; the singular values of
``S11`` on every admissible block give the computable H-matrix error bound
``depth * max_b sigma_{r+1}(S11|_b)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.typing import NDArray

from rbfh.assembly import SaddleSystem, assemble_saddle_matrix
from rbfh.clustering import Block, BlockPartition, sparsity_constant
from rbfh.ddarith import dd_inverse

Array = NDArray[np.float64]

log = logging.getLogger(__name__)

PRECISIONS = ("double", "dd")
RESIDUAL_FLOOR = 1e-8


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class InverseBlocks:
    S11: Array
    S12: Array
    S21: Array
    S22: Array
    residual: float
    residual_tol: float
    cond_inf: float
    precision: str

    @property
    def valid(self) -> bool:
        return self.residual <= self.residual_tol

    @property
    def full(self) -> Array:
        return np.block([[self.S11, self.S12], [self.S21, self.S22]])


def dense_inverse(sys: SaddleSystem, precision: str = "double") -> InverseBlocks:
    """Inverse of [[A, B^T], [B, 0]] by partially pivoted LU.

    ``precision="dd"`` runs the elimination in double-double. The residual
    ``max |K S - I|`` is checked against ``max(1e-8, 100 n eps cond_inf(K))``;
    exceeding it only logs a warning and marks the result invalid.
    """
    if precision not in PRECISIONS:
        raise OracleError(f"precision must be one of {PRECISIONS}")
    K = assemble_saddle_matrix(sys)
    m = K.shape[0]
    if precision == "dd":
        try:
            S = dd_inverse(K)
        except np.linalg.LinAlgError as exc:
            raise OracleError("interpolation matrix is singular") from exc
    else:
        with warnings.catch_warnings():
            # an exactly singular factor is reported below as an OracleError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(K, check_finite=True)
        if np.any(np.diag(lu) == 0.0):
            raise OracleError("interpolation matrix is singular")
        S = sla.lu_solve((lu, piv), np.eye(m))
    residual = float(np.max(np.abs(K @ S - np.eye(m)))) if m else 0.0
    cond = float(np.linalg.norm(K, np.inf) * np.linalg.norm(S, np.inf)) if m else 1.0
    tol = max(RESIDUAL_FLOOR, 100.0 * m * np.finfo(float).eps * cond)
    if residual > tol:
        log.warning("inverse residual %.3e exceeds %.3e (cond_inf ~ %.3e)", residual, tol, cond)
    n = sys.n
    return InverseBlocks(S[:n, :n], S[:n, n:], S[n:, :n], S[n:, n:], residual, tol, cond, precision)


@dataclass
class SpectrumReport:
    """Leading singular values of ``S11`` on every admissible block.

    ``sigmas[b][r]`` is sigma_{r+1} of block ``b`` (zero-padded), so
    ``bound(r)`` is available for ``r = 0 .. r_max``.
    """

    sigmas: dict[Block, Array]
    depth: int
    sparsity_constant: int
    r_max: int
    meta: dict = field(default_factory=dict)

    def max_sigma(self, r: int) -> float:
        """max over admissible blocks of sigma_{r+1}."""
        if not 0 <= r <= self.r_max:
            raise OracleError(f"rank {r} outside 0..{self.r_max}")
        return max((float(s[r]) for s in self.sigmas.values()), default=0.0)

    def bound(self, r: int) -> float:
        return self.depth * self.max_sigma(r)

    def ranks(self) -> list[int]:
        return list(range(self.r_max + 1)) if self.sigmas else []

    def bound_curve(self, ranks: Iterable[int] | None = None) -> Array:
        rs = self.ranks() if ranks is None else list(ranks)
        return np.array([self.bound(r) for r in rs])

    def rows(self) -> list[dict]:
        return [{"r": r, "bound": self.bound(r), "max_sigma": self.max_sigma(r)} for r in self.ranks()]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "bound", "max_sigma"])
            for row in self.rows():
                w.writerow([row["r"], f"{row['bound']:.17g}", f"{row['max_sigma']:.17g}"])


def blockwise_spectra(S11: Array, p: BlockPartition, r_max: int) -> SpectrumReport:
    if r_max < 0:
        raise OracleError("r_max must be nonnegative")
    tree = p.tree
    sig: dict[Block, Array] = {}
    for b in p.admissible:
        blk = S11[np.ix_(tree.indices(b[0]), tree.indices(b[1]))]
        s = np.linalg.svd(blk, compute_uv=False)
        out = np.zeros(r_max + 1)
        k = min(s.size, r_max + 1)
        out[:k] = s[:k]
        sig[b] = out
    return SpectrumReport(sig, tree.depth, sparsity_constant(p), r_max)


def best_approximation(S11: Array, p: BlockPartition, r: int) -> Array:
    """``M_r``: every admissible block of S11 replaced by its rank-r SVD."""
    tree = p.tree
    M = np.array(S11, copy=True)
    for b in p.admissible:
        ix = np.ix_(tree.indices(b[0]), tree.indices(b[1]))
        U, s, Vt = np.linalg.svd(S11[ix], full_matrices=False)
        M[ix] = (U[:, :r] * s[:r]) @ Vt[:r]
    return M


def best_approximation_error(S11: Array, p: BlockPartition, r: int) -> float:
    """Dense spectral norm ``||S11 - M_r||_2``."""
    E = S11 - best_approximation(S11, p, r)
    return float(np.linalg.norm(E, 2)) if E.size else 0.0


def decay_fit(
    report: SpectrumReport | Sequence[tuple[int, float]], r_range: Iterable[int] | None = None
) -> dict:
    """Least-squares line through ``(r, log bound(r))``.

    Accepts a :class:`SpectrumReport` or explicit ``(r, value)`` pairs.
    Nonpositive values are skipped; at least three points must remain.
    """
    if isinstance(report, SpectrumReport):
        rs = report.ranks() if r_range is None else list(r_range)
        pts = [(r, report.bound(r)) for r in rs]
    else:
        pts = list(report)
        if r_range is not None:
            keep = set(r_range)
            pts = [(r, v) for r, v in pts if r in keep]
    used = [(float(r), math.log(v)) for r, v in pts if v > 0 and math.isfinite(v)]
    if len(used) < 3:
        raise OracleError(f"decay fit needs at least 3 positive values, got {len(used)}")
    x = np.array([u[0] for u in used])
    y = np.array([u[1] for u in used])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2, "n_points": len(used)}
