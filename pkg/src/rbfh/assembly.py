"""Dense assembly of the kernel matrix A, the polynomial matrix B and the
saddle-point interpolation matrix [[A, B^T], [B, 0]].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from rbfh.geometry import PointCloud
from rbfh.kernels import KernelSpec, eval_radial
from rbfh.polybasis import PolyBasis, eval_poly_basis

MAGIC = b"RBFMAT01"


@dataclass(frozen=True)
class SaddleSystem:
    """Kernel matrix ``A[m, n] = phi(x_m - x_n)`` and ``B[b, n] = pi_b(x_n)``.

    The cloud, kernel and basis the matrices came from are kept for
    evaluating interpolants; they are optional for hand-built systems.
    """

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    cloud: PointCloud | None = field(default=None, repr=False, compare=False)
    spec: KernelSpec | None = field(default=None, repr=False, compare=False)
    basis: PolyBasis | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_min(self) -> int:
        return self.B.shape[0]


def kernel_matrix(spec: KernelSpec, x: NDArray[np.float64], y: NDArray[np.float64]) -> NDArray[np.float64]:
    """Rectangular kernel matrix ``phi(x_m - y_n)``."""
    diff = x[:, None, :] - y[None, :, :]
    return eval_radial(spec, np.sqrt(np.sum(diff * diff, axis=-1)))


def assemble_system(cloud: PointCloud, spec: KernelSpec, basis: PolyBasis) -> SaddleSystem:
    if cloud.dim != spec.dim or basis.dim != spec.dim:
        raise ValueError("dimension mismatch between cloud, kernel and basis")
    n = cloud.n
    pts = cloud.points
    R = np.empty((n, n))
    step = max(1, (1 << 22) // max(n * cloud.dim, 1))
    for i0 in range(0, n, step):
        diff = pts[i0 : i0 + step, None, :] - pts[None, :, :]
        R[i0 : i0 + step] = np.sqrt(np.sum(diff * diff, axis=-1))
    # mirror the lower triangle so that A is symmetric bit for bit
    R = np.tril(R) + np.tril(R, -1).T
    A = eval_radial(spec, R)
    B = np.ascontiguousarray(eval_poly_basis(basis, pts).T) if basis.n_min else np.zeros((0, n))
    return SaddleSystem(A, B, cloud, spec, basis)


def assemble_saddle_matrix(sys: SaddleSystem) -> NDArray[np.float64]:
    if sys.n_min == 0:
        return sys.A.copy()
    n, m = sys.n, sys.n_min
    K = np.zeros((n + m, n + m))
    K[:n, :n] = sys.A
    K[:n, n:] = sys.B.T
    K[n:, :n] = sys.B
    return K


def augmented_lagrangian(sys: SaddleSystem, gamma: float = 1.0) -> NDArray[np.float64]:
    """``A + gamma B^T B``, symmetric by construction."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if sys.n_min == 0:
        return sys.A.copy()
    M = sys.A + gamma * (sys.B.T @ sys.B)
    return 0.5 * (M + M.T)


def write_matrix(path: str | Path, M: NDArray[np.float64]) -> None:
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise ValueError("only 2-d matrices can be written")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", *M.shape))
        fh.write(M.tobytes(order="C"))


def read_matrix(path: str | Path) -> NDArray[np.float64]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an RBFMAT01 file")
    rows, cols = struct.unpack("<QQ", raw[8:24])
    data = np.frombuffer(raw, dtype="<f8", offset=24)
    if data.size != rows * cols:
        raise ValueError(f"{path}: payload has {data.size} values, header says {rows}x{cols}")
    return data.reshape(rows, cols).astype(np.float64)


def write_matrix_csv(path: str | Path, M: NDArray[np.float64]) -> None:
    np.savetxt(path, np.atleast_2d(M), delimiter=",", fmt="%.17g")
