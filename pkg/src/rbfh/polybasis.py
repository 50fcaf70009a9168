"""Polynomial space P = P_{k_min-1}(R^d), unisolvent nodes and Lagrange basis."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rbfh.geometry import PointCloud
from rbfh.kernels import KernelSpec, poly_space_dim

PIVOT_RTOL = 1e-8
KRONECKER_ATOL = 1e-10


class UnisolvencyError(ValueError):
    pass


MultiIndex = tuple[int, ...]


def enumerate_multi_indices(d: int, max_degree: int) -> list[MultiIndex]:
    """All exponent tuples of total degree <= max_degree, graded-lex order.

    Within one degree the tuples are sorted descending, so (1, 0) precedes
    (0, 1).
    """
    if max_degree < -1:
        raise ValueError("max_degree must be >= -1")
    out: list[MultiIndex] = []
    for deg in range(max_degree + 1):
        layer = [a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) == deg]
        out.extend(sorted(layer, reverse=True))
    return out


def _monomials(
    x: NDArray[np.float64], indices: list[MultiIndex], center: NDArray[np.float64], scale: NDArray[np.float64]
) -> NDArray[np.float64]:
    y = (x - center) / scale
    out = np.ones((x.shape[0], len(indices)))
    for j, alpha in enumerate(indices):
        for i, e in enumerate(alpha):
            if e:
                out[:, j] *= y[:, i] ** e
    return out


def _frame(cloud: PointCloud) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    half = 0.5 * (hi - lo)
    half[half == 0] = 1.0
    return 0.5 * (lo + hi), half


@dataclass(frozen=True)
class PolyBasis:
    """Lagrange basis pi_alpha of P for the nodes xi_alpha.

    Monomials are taken in coordinates centered and scaled to the cloud's
    bounding box; ``coeff_matrix[:, b]`` holds the monomial coefficients of
    the b-th Lagrange function.
    """

    dim: int
    indices: list[MultiIndex]
    coeff_matrix: NDArray[np.float64]
    nodes: NDArray[np.float64]
    node_indices: list[int]
    center: NDArray[np.float64]
    scale: NDArray[np.float64]

    @property
    def n_min(self) -> int:
        return len(self.indices)

    def monomials(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return _monomials(x, self.indices, self.center, self.scale)


def select_unisolvent_subset(cloud: PointCloud, spec: KernelSpec) -> list[int]:
    """Greedy row-pivoted elimination on the monomial Vandermonde matrix."""
    n_min = poly_space_dim(spec)
    if n_min == 0:
        return []
    if cloud.n < n_min:
        raise UnisolvencyError("point set not unisolvent for P (too few points)")
    indices = enumerate_multi_indices(cloud.dim, spec.k_min - 1)
    center, scale = _frame(cloud)
    V = _monomials(cloud.points, indices, center, scale)
    chosen: list[int] = []
    active = np.ones(cloud.n, dtype=bool)
    first_pivot = None
    for j in range(n_min):
        col = np.where(active, np.abs(V[:, j]), -1.0)
        p = int(np.argmax(col))
        piv = col[p]
        if first_pivot is None:
            first_pivot = piv
        if piv <= PIVOT_RTOL * first_pivot or piv <= 0:
            raise UnisolvencyError("point set not unisolvent for P")
        chosen.append(p)
        active[p] = False
        factors = V[:, j] / V[p, j]
        V[:, j:] -= np.outer(factors, V[p, j:])
        V[p, j:] = 0.0
    return chosen


def build_lagrange_basis(cloud: PointCloud, node_indices: list[int], spec: KernelSpec) -> PolyBasis:
    indices = enumerate_multi_indices(cloud.dim, spec.k_min - 1)
    if len(node_indices) != len(indices):
        raise UnisolvencyError(f"need {len(indices)} nodes, got {len(node_indices)}")
    center, scale = _frame(cloud)
    nodes = cloud.points[list(node_indices)].copy()
    if not indices:
        coeff = np.zeros((0, 0))
    else:
        V = _monomials(nodes, indices, center, scale)
        try:
            coeff = np.linalg.inv(V)
        except np.linalg.LinAlgError as exc:
            raise UnisolvencyError("singular Vandermonde: nodes not unisolvent") from exc
        err = np.max(np.abs(V @ coeff - np.eye(len(indices))))
        if not np.isfinite(err) or err > KRONECKER_ATOL:
            raise UnisolvencyError(f"Lagrange basis violates pi_b(xi_a) = delta_ab (err {err:.2e})")
    return PolyBasis(cloud.dim, indices, coeff, nodes, list(node_indices), center, scale)


def eval_poly_basis(basis: PolyBasis, x: ArrayLike) -> NDArray[np.float64]:
    """Values (pi_alpha(x))_alpha; shape (N_min,) for one point, (M, N_min) for M."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    vals = basis.monomials(x.reshape(-1, basis.dim)) @ basis.coeff_matrix
    return vals[0] if single else vals
