"""Compiled kernel moment sums over sorted index values."""

from __future__ import annotations

import numba
import numpy as np

from .kernels import epanechnikov, quartic

# Kernels with a compiled path, keyed by their numpy implementation.
KERNEL_CODES = {epanechnikov: 0, quartic: 1}


@numba.njit(cache=True, nogil=True, inline="always")
def _kernel(z, code):
    v = 1.0 - z * z
    if code == 0:
        return 0.75 * v
    return 0.9375 * v * v


@numba.njit(cache=True, nogil=True)
def banded_sums(t, y, u, h, scale, code, s_order, xi_order):
    """``S`` (U, s_order+1), ``xi`` (U, xi_order+1, q) and window counts.

    ``t`` must be sorted; ``y`` is (len(t), q). Kernel values are divided
    by ``scale``.
    """
    U = u.size
    q = y.shape[1]
    S = np.zeros((U, s_order + 1))
    xi = np.zeros((U, xi_order + 1, q))
    counts = np.zeros(U, np.int64)
    lo = np.searchsorted(t, u - h, side="left")
    hi = np.searchsorted(t, u + h, side="right")
    top = max(s_order, xi_order)
    inv_h = 1.0 / h
    inv_scale = 1.0 / scale
    fast = q == 1 and s_order == 2 and xi_order == 1
    for a in range(U):
        counts[a] = hi[a] - lo[a]
        if fast:
            s0 = 0.0
            s1 = 0.0
            s2 = 0.0
            x0 = 0.0
            x1 = 0.0
            for b in range(lo[a], hi[a]):
                z = (t[b] - u[a]) * inv_h
                if z < -1.0 or z > 1.0:
                    continue
                k = _kernel(z, code)
                kz = k * z
                s0 += k
                s1 += kz
                s2 += kz * z
                x0 += k * y[b, 0]
                x1 += kz * y[b, 0]
            S[a, 0] = s0 * inv_scale
            S[a, 1] = s1 * inv_scale
            S[a, 2] = s2 * inv_scale
            xi[a, 0, 0] = x0 * inv_scale
            xi[a, 1, 0] = x1 * inv_scale
            continue
        for b in range(lo[a], hi[a]):
            z = (t[b] - u[a]) * inv_h
            if z < -1.0 or z > 1.0:
                continue
            k = _kernel(z, code) * inv_scale
            zl = 1.0
            for l in range(top + 1):
                w = zl * k
                if l <= s_order:
                    S[a, l] += w
                if l <= xi_order:
                    for c in range(q):
                        xi[a, l, c] += w * y[b, c]
                zl *= z
    return S, xi, counts
