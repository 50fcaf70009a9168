"""Solve the interpolation problem and evaluate the interpolant

    u(x) = sum_n c_n phi(x - x_n) + sum_a d_a pi_a(x),   B c = 0.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from numpy.typing import ArrayLike, NDArray

from rbfh.assembly import SaddleSystem, assemble_saddle_matrix, augmented_lagrangian, kernel_matrix
from rbfh.clustering import BlockPartition
from rbfh.ddarith import dd_inverse
from rbfh.geometry import PointCloud
from rbfh.hmatrix import DEFAULT_TOL, Truncation, apply_inverse, compress, hcholesky
from rbfh.kernels import KernelSpec
from rbfh.polybasis import PolyBasis, eval_poly_basis

Array = NDArray[np.float64]

CONSTRAINT_RTOL = 1e-8


class SolverError(ValueError):
    pass


@dataclass
class Interpolant:
    cloud: PointCloud
    spec: KernelSpec
    basis: PolyBasis
    c: Array
    d_coeffs: Array
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, x: ArrayLike) -> float | Array:
        return evaluate(self, x)

    def to_dict(self) -> dict:
        return {
            "c": self.c.tolist(),
            "d_coeffs": self.d_coeffs.tolist(),
            "kernel": self.spec.to_dict(),
            "unisolvent_indices": list(self.basis.node_indices),
            "node_file_sha256": cloud_hash(self.cloud),
            "diagnostics": self.diagnostics,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def cloud_hash(cloud: PointCloud) -> str:
    """SHA-256 of the cloud in point-file format."""
    lines = [f"{cloud.dim} {cloud.n}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in cloud.points]
    return hashlib.sha256(("\n".join(lines) + "\n").encode()).hexdigest()


def _require_refs(sys: SaddleSystem) -> tuple[PointCloud, KernelSpec, PolyBasis]:
    if sys.cloud is None or sys.spec is None or sys.basis is None:
        raise SolverError("system was not built by assemble_system; cloud/kernel/basis unknown")
    return sys.cloud, sys.spec, sys.basis


def _residuals(sys: SaddleSystem, f: Array, c: Array, d: Array) -> dict:
    interp = sys.A @ c + sys.B.T @ d - f
    fmax = float(np.max(np.abs(f))) if f.size else 0.0
    return {
        "interpolation_residual": float(np.max(np.abs(interp))) if f.size else 0.0,
        "interpolation_residual_rel": float(np.max(np.abs(interp)) / fmax) if fmax > 0 else 0.0,
        "constraint_residual": float(np.linalg.norm(sys.B @ c)),
        "c_norm": float(np.linalg.norm(c)),
    }


def solve(
    sys: SaddleSystem,
    f_values: ArrayLike,
    method: str = "dense",
    *,
    partition: BlockPartition | None = None,
    gamma: float = 1.0,
    trunc: Truncation | int | float | None = DEFAULT_TOL,
    precision: str = "double",
    refine_steps: int = 2,
) -> Interpolant:
    """Solve [[A, B^T], [B, 0]] (c; d) = (f; 0).

    ``method="dense"`` factorizes the saddle matrix with pivoted LU (or its
    double-double inverse with ``precision="dd"``). ``method="hchol"`` factors
    ``M = A + gamma B^T B`` in H-arithmetic over ``partition`` and recovers
    ``d`` from the Schur complement ``B M^-1 B^T``, followed by
    ``refine_steps`` rounds of iterative refinement against the dense system.
    """
    cloud, spec, basis = _require_refs(sys)
    f = np.asarray(f_values, dtype=np.float64)
    if f.shape != (sys.n,):
        raise SolverError(f"expected {sys.n} data values, got shape {f.shape}")
    n, m = sys.n, sys.n_min
    diag: dict = {"method": method}
    if method == "dense":
        K = assemble_saddle_matrix(sys)
        rhs = np.concatenate([f, np.zeros(m)])
        try:
            if precision == "dd":
                sol = dd_inverse(K) @ rhs
            else:
                sol = sla.lu_solve(sla.lu_factor(K), rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"singular interpolation matrix: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SolverError("singular interpolation matrix")
        c, d = sol[:n], sol[n:]
        diag["precision"] = precision
    elif method == "hchol":
        if partition is None:
            raise SolverError("method 'hchol' needs a block partition")
        M = augmented_lagrangian(sys, gamma)
        L = hcholesky(compress(M, partition, trunc), trunc)

        def saddle_solve(g: Array, h: Array) -> tuple[Array, Array]:
            # c = M^-1 (g - B^T d), B c = h  =>  (B M^-1 B^T) d = B M^-1 g - h
            Mg = apply_inverse(L, g)
            if m == 0:
                return Mg, np.zeros(0)
            MBt = np.column_stack([apply_inverse(L, sys.B[a]) for a in range(m)])
            dd = np.linalg.solve(sys.B @ MBt, sys.B @ Mg - h)
            return Mg - MBt @ dd, dd

        # [[A, B^T], [B, 0]] and [[M, B^T], [B, 0]] agree on the constraint set
        c, d = saddle_solve(f, np.zeros(m))
        for _ in range(refine_steps):
            rc = f - sys.A @ c - sys.B.T @ d
            rd = -sys.B @ c
            dc, ddd = saddle_solve(rc + gamma * sys.B.T @ rd, rd)
            c, d = c + dc, d + ddd
        diag.update({"gamma": gamma, "truncation": L.truncation.describe(), "refine_steps": refine_steps})
        diag["factor"] = L.diagnostics()
    else:
        raise SolverError(f"unknown method {method!r}")
    diag.update(_residuals(sys, f, c, d))
    return Interpolant(cloud, spec, basis, c, d, diag)


def evaluate(u: Interpolant, x: ArrayLike) -> float | Array:
    """Value of the interpolant at one point (shape (d,)) or many (M, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, u.cloud.dim)
    vals = kernel_matrix(u.spec, pts, u.cloud.points) @ u.c
    if u.basis.n_min:
        vals = vals + eval_poly_basis(u.basis, pts) @ u.d_coeffs
    return float(vals[0]) if single else vals


def energy(u: Interpolant, sys: SaddleSystem) -> float:
    """Native-space seminorm squared ``c^T A c``, valid only for ``B c = 0``."""
    c = u.c
    if np.linalg.norm(sys.B @ c) > CONSTRAINT_RTOL * np.linalg.norm(c):
        raise SolverError("c not in C; energy identity invalid")
    return max(float(c @ (sys.A @ c)), 0.0)
