"""Vectorized double-double arithmetic and a compensated LU inverse.

A double-double number is an unevaluated sum ``hi + lo`` of two floats with
``|lo| <= ulp(hi)/2``, giving roughly 32 significant digits. Only what the
dense inverse needs is implemented.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a: Array, b: Array) -> tuple[Array, Array]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def quick_two_sum(a: Array, b: Array) -> tuple[Array, Array]:
    s = a + b
    return s, b - (s - a)


def _split(a: Array) -> tuple[Array, Array]:
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a: Array, b: Array) -> tuple[Array, Array]:
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def dd_add(ah: Array, al: Array, bh: Array, bl: Array) -> tuple[Array, Array]:
    s, e = two_sum(ah, bh)
    t, f = two_sum(al, bl)
    e = e + t
    s, e = quick_two_sum(s, e)
    e = e + f
    return quick_two_sum(s, e)


def dd_mul(ah: Array, al: Array, bh: Array, bl: Array) -> tuple[Array, Array]:
    p, e = two_prod(ah, bh)
    e = e + (ah * bl + al * bh)
    return quick_two_sum(p, e)


def dd_div(ah: Array, al: Array, bh: Array, bl: Array) -> tuple[Array, Array]:
    q1 = ah / bh
    ph, pl = dd_mul(q1, np.zeros_like(q1), bh, bl)
    rh, rl = dd_add(ah, al, -ph, -pl)
    q2 = rh / bh
    ph, pl = dd_mul(q2, np.zeros_like(q2), bh, bl)
    rh, _ = dd_add(rh, rl, -ph, -pl)
    q3 = rh / bh
    qh, ql = quick_two_sum(q1, q2)
    return dd_add(qh, ql, q3, np.zeros_like(q3))


def dd_inverse(K: Array) -> Array:
    """Inverse of ``K`` by partially pivoted LU with double-double updates.

    The elimination, forward and backward substitution all run in
    double-double; the result is rounded to double at the end.
    """
    K = np.asarray(K, dtype=np.float64)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValueError("matrix must be square")
    hi = K.copy()
    lo = np.zeros_like(K)
    perm = np.arange(n)
    for k in range(n - 1):
        p = k + int(np.argmax(np.abs(hi[k:, k])))
        if hi[p, k] == 0.0:
            raise np.linalg.LinAlgError("singular matrix")
        if p != k:
            hi[[k, p]] = hi[[p, k]]
            lo[[k, p]] = lo[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lh, ll = dd_div(hi[k + 1 :, k], lo[k + 1 :, k], np.full(n - k - 1, hi[k, k]), np.full(n - k - 1, lo[k, k]))
        hi[k + 1 :, k] = lh
        lo[k + 1 :, k] = ll
        ph, pl = dd_mul(lh[:, None], ll[:, None], hi[k, k + 1 :][None, :], lo[k, k + 1 :][None, :])
        sh, sl = dd_add(hi[k + 1 :, k + 1 :], lo[k + 1 :, k + 1 :], -ph, -pl)
        hi[k + 1 :, k + 1 :] = sh
        lo[k + 1 :, k + 1 :] = sl
    if hi[n - 1, n - 1] == 0.0:
        raise np.linalg.LinAlgError("singular matrix")

    # solve L U X = P I
    xh = np.zeros((n, n))
    xh[np.arange(n), perm] = 1.0
    xl = np.zeros((n, n))
    for k in range(n - 1):
        ph, pl = dd_mul(hi[k + 1 :, k][:, None], lo[k + 1 :, k][:, None], xh[k][None, :], xl[k][None, :])
        xh[k + 1 :], xl[k + 1 :] = dd_add(xh[k + 1 :], xl[k + 1 :], -ph, -pl)
    for k in range(n - 1, -1, -1):
        dh = np.full(n, hi[k, k])
        dl = np.full(n, lo[k, k])
        xh[k], xl[k] = dd_div(xh[k], xl[k], dh, dl)
        if k:
            ph, pl = dd_mul(hi[:k, k][:, None], lo[:k, k][:, None], xh[k][None, :], xl[k][None, :])
            xh[:k], xl[:k] = dd_add(xh[:k], xl[:k], -ph, -pl)
    return xh + xl
