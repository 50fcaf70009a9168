"""Radial kernels: polyharmonic (thin-plate) splines and Matérn functions.

Both families are fundamental solutions of ``sum_l sigma_l (-Laplace)^l``:

* thin-plate spline: ``k_min == k``, ``sigma_k == 1``, operator ``(-Laplace)^k``;
* Matérn / Bessel potential: ``k_min == 0``, ``sigma_l = C(k, l) b^(2(k-l))``,
  operator ``(b^2 - Laplace)^k``.

By default the constant prefactor of each kernel is dropped (only its sign is
kept), e.g. the 2D thin-plate spline is ``r^2 log r`` and the 3D Matérn kernel
with ``k=2, b=1`` is ``exp(-r)``. Set ``normalize_prefactor=True`` for the
exact fundamental solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

TPS = "tps"
MATERN = "matern"

QUAD_RTOL = 1e-12


class KernelError(ValueError):
    pass


def _gamma_reflected(z: float) -> float:
    """Gamma function, with the reflection formula for negative arguments."""
    if z > 0:
        return math.gamma(z)
    if z == math.floor(z):
        raise KernelError(f"Gamma has a pole at {z}")
    return math.pi / (math.sin(math.pi * z) * math.gamma(1.0 - z))


def matern_sigmas(k: int, b: float) -> NDArray[np.float64]:
    if k < 1 or b <= 0:
        raise KernelError("matern_sigmas needs k >= 1 and b > 0")
    return np.array([math.comb(k, l) * b ** (2 * (k - l)) for l in range(k + 1)], dtype=np.float64)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and the native-space parameters it belongs to."""

    dim: int
    k: int
    k_min: int
    family: str
    b: float = 1.0
    sigmas: tuple[float, ...] = field(default=())
    normalize_prefactor: bool = False

    def __post_init__(self) -> None:
        d, k, k_min = self.dim, self.k, self.k_min
        if d < 1:
            raise KernelError("dimension must be >= 1")
        if not 2 * k > d:
            raise KernelError(f"need k > d/2, got k={k}, d={d}")
        if not 0 <= k_min <= k:
            raise KernelError("k_min must lie in {0, ..., k}")
        if self.family == TPS:
            if k_min != k:
                raise KernelError("thin-plate spline requires k_min == k")
            sig = tuple(self.sigmas) or (1.0,)
            if sig != (1.0,):
                raise KernelError("thin-plate spline requires sigma_k == 1")
        elif self.family == MATERN:
            if k_min != 0:
                raise KernelError("Matérn kernel requires k_min == 0")
            if self.b <= 0:
                raise KernelError("Matérn parameter b must be positive")
            expected = tuple(float(s) for s in matern_sigmas(k, self.b))
            sig = tuple(float(s) for s in self.sigmas) or expected
            if not np.allclose(sig, expected, rtol=1e-14, atol=0.0):
                raise KernelError("Matérn sigmas must be C(k,l) b^(2(k-l))")
        else:
            raise KernelError(f"unknown kernel family {self.family!r}")
        if sig[0] <= 0 or sig[-1] <= 0:
            raise KernelError("sigma_{k_min} and sigma_k must be positive")
        object.__setattr__(self, "sigmas", sig)

    @classmethod
    def tps(cls, d: int, k: int, normalize_prefactor: bool = False) -> KernelSpec:
        return cls(d, k, k, TPS, normalize_prefactor=normalize_prefactor)

    @classmethod
    def matern(cls, d: int, k: int, b: float = 1.0, normalize_prefactor: bool = False) -> KernelSpec:
        return cls(d, k, 0, MATERN, b=float(b), normalize_prefactor=normalize_prefactor)

    @property
    def prefactor(self) -> float:
        """Constant in front of the kernel's radial profile."""
        return _prefactor(self.family, self.dim, self.k, self.b)

    def to_dict(self) -> dict:
        out = {"family": self.family, "d": self.dim, "k": self.k, "k_min": self.k_min}
        if self.family == MATERN:
            out["b"] = self.b
        out["normalize_prefactor"] = self.normalize_prefactor
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> KernelSpec:
        fam = cfg["family"]
        norm = bool(cfg.get("normalize_prefactor", False))
        d, k = int(cfg["d"]), int(cfg["k"])
        if fam == TPS:
            spec = cls.tps(d, k, norm)
        elif fam == MATERN:
            spec = cls.matern(d, k, float(cfg.get("b", 1.0)), norm)
        else:
            raise KernelError(f"unknown kernel family {fam!r}")
        if "k_min" in cfg and int(cfg["k_min"]) != spec.k_min:
            raise KernelError(f"k_min={cfg['k_min']} is not valid for family {fam!r}")
        return spec


def tps_constant(d: int, k: int) -> float:
    if d % 2:
        return _gamma_reflected(d / 2 - k) / (4**k * math.pi ** (d / 2) * math.factorial(k - 1))
    sign = (-1) ** (k + (d - 2) // 2)
    return sign / (
        2 ** (2 * k - 1) * math.pi ** (d / 2) * math.factorial(k - 1) * math.factorial(k - d // 2)
    )


def _prefactor(family: str, d: int, k: int, b: float) -> float:
    if family == TPS:
        return tps_constant(d, k)
    if d % 2:
        L = k - (d + 1) // 2
        return (4 * math.pi) ** ((1 - d) / 2) / (math.gamma(k) * (2 * b) ** (2 * L + 1))
    return (4 * math.pi) ** (-d / 2) / math.gamma(k)


def _tps_profile(d: int, k: int, r: NDArray[np.float64]) -> NDArray[np.float64]:
    p = 2 * k - d
    if d % 2:
        return r**p
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** p * np.log(r[pos])
    return out


def _matern_odd_profile(d: int, k: int, b: float, r: NDArray[np.float64]) -> NDArray[np.float64]:
    L = k - (d + 1) // 2
    z = 2 * b * r
    acc = np.zeros_like(r)
    for l in range(L + 1):
        coef = math.factorial(2 * L - l) / (math.factorial(l) * math.factorial(L - l))
        acc += coef * z**l
    return acc * np.exp(-b * r)


@lru_cache(maxsize=200_000)
def _matern_integral(d: int, k: int, b: float, r: float) -> float:
    """``int_0^inf t^(k-d/2-1) exp(-b^2 t - r^2/(4t)) dt`` via ``t = exp(s)``."""
    nu = k - d / 2
    q = r * r / 4.0
    b2 = b * b

    def logf(s: float) -> float:
        return nu * s - b2 * math.exp(s) - q * math.exp(-s)

    # the log-integrand is concave; its maximiser solves b2 u^2 - nu u - q = 0
    u = (nu + math.sqrt(nu * nu + 4.0 * b2 * q)) / (2.0 * b2)
    s0 = math.log(u)
    g0 = logf(s0)
    cut = 80.0
    lo = s0 - 1.0
    step = 1.0
    while logf(lo) - g0 > -cut:
        step *= 2.0
        lo = s0 - step
    hi = s0 + 1.0
    step = 1.0
    while logf(hi) - g0 > -cut:
        step *= 2.0
        hi = s0 + step

    def f(s: float) -> float:
        return math.exp(logf(s) - g0)

    left, _ = integrate.quad(f, lo, s0, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    right, _ = integrate.quad(f, s0, hi, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return (left + right) * math.exp(g0)


def matern_quadrature(d: int, k: int, b: float, r: ArrayLike) -> NDArray[np.float64]:
    """Matérn kernel from its integral representation, any dimension.

    Returns the normalized kernel; repeated radii are integrated once.
    """
    r = np.asarray(r, dtype=np.float64)
    uniq, inv = np.unique(r.ravel(), return_inverse=True)
    vals = np.array([_matern_integral(d, k, float(b), float(x)) for x in uniq])
    pref = (4 * math.pi) ** (-d / 2) / math.gamma(k)
    return (pref * vals[inv]).reshape(r.shape)


def eval_radial(spec: KernelSpec, r: ArrayLike) -> NDArray[np.float64]:
    """Kernel value as a function of the distance ``r >= 0`` (vectorized)."""
    r = np.asarray(r, dtype=np.float64)
    d, k = spec.dim, spec.k
    pref = spec.prefactor
    if spec.family == TPS:
        prof = _tps_profile(d, k, r)
    elif d % 2:
        prof = _matern_odd_profile(d, k, spec.b, r)
    else:
        return matern_quadrature(d, k, spec.b, r) / (1.0 if spec.normalize_prefactor else pref)
    if spec.normalize_prefactor:
        return pref * prof
    return math.copysign(1.0, pref) * prof


def eval_kernel(spec: KernelSpec, x: ArrayLike) -> float | NDArray[np.float64]:
    """Evaluate the kernel at ``x`` (shape (d,) or (..., d))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.dim:
        raise KernelError(f"expected points of dimension {spec.dim}, got shape {x.shape}")
    r = np.sqrt(np.sum(x * x, axis=-1))
    out = eval_radial(spec, r)
    return float(out) if out.ndim == 0 else out


def poly_space_dim(spec: KernelSpec) -> int:
    if spec.k_min == 0:
        return 0
    return math.comb(spec.dim + spec.k_min - 1, spec.dim)
