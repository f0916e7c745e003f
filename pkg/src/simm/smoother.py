"""Pooled local linear smoothing of a response on index values.

All observations ``(i, j)`` are lumped together and the within-subject
dependence is ignored when forming the local fit. For an evaluation
point ``u`` and bandwidth ``h`` the building blocks are

    S_l(u)  = n^-1 sum_ij z_ij^l K_h(t_ij - u)
    xi_l(u) = n^-1 sum_ij z_ij^l K_h(t_ij - u) y_ij,   z_ij = (t_ij - u) / h

and the local intercept/slope solve the 2x2 system built from them.
Kernels have bounded support, so each evaluation only touches the
observations in a window located by binary search over sorted index values.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._banded import KERNEL_CODES, banded_sums
from .errors import InsufficientLocalData, UsageError
from .kernels import get_kernel
from .model import BandwidthPolicy, IndexCoefficient, LongitudinalDataset

# Upper bound on (evaluation points x window width) processed at once.
_CHUNK_CELLS = 2_000_000
DET_GUARD = 1e-10
GRID_POINTS = 101


def det_threshold(S0, h):
    """Smallest accepted ``S0 S2 - S1^2``; scale-aware so tiny h is not penalized."""
    return DET_GUARD * (S0 + h) ** 2


class LocalLinearSmoother:
    """Local linear regression of ``response`` on scalar ``index`` values.

    Parameters
    ----------
    index : array_like
        Index values ``t_ij``; any shape, flattened internally.
    response : array_like
        Same leading shape as ``index``, optionally with one trailing axis
        for vector responses (used to smooth covariates).
    h : float
        Bandwidth.
    kernel : str or KernelSpec
    n_subjects : int, optional
        Divisor ``n`` in the sums; defaults to the number of observations.
        It cancels from every ratio but keeps ``S_l`` on the scale of a
        density times ``m``.
    """

    def __init__(self, index, response, h, kernel="epanechnikov", n_subjects=None):
        t = np.asarray(index, dtype=float)
        y = np.asarray(response, dtype=float)
        if not h > 0:
            raise UsageError(f"bandwidth must be positive, got {h}")
        self.shape = t.shape
        t = t.ravel()
        N = t.size
        if y.shape[: len(self.shape)] != self.shape:
            raise UsageError("response and index shapes disagree")
        self.vector = y.ndim > len(self.shape)
        y = y.reshape(N, -1)
        self.order = np.argsort(t, kind="mergesort")
        self.t = t[self.order]
        self.y = y[self.order]
        self.h = float(h)
        self.kernel = get_kernel(kernel)
        self.n = int(n_subjects) if n_subjects is not None else N

    @property
    def size(self) -> int:
        return self.t.size

    def with_bandwidth(self, h) -> "LocalLinearSmoother":
        if not h > 0:
            raise UsageError(f"bandwidth must be positive, got {h}")
        other = copy.copy(self)
        other.h = float(h)
        return other

    # -- raw sums ---------------------------------------------------------

    def _windows(self, u):
        reach = self.h * self.kernel.support
        lo = np.searchsorted(self.t, u - reach, side="left")
        hi = np.searchsorted(self.t, u + reach, side="right")
        return lo, hi

    def sums(self, u, s_order=2, xi_order=1):
        """Kernel moment sums at each point of ``u``.

        Returns ``S`` of shape (len(u), s_order + 1), ``xi`` of shape
        (len(u), xi_order + 1, q) and the count of observations inside
        each kernel window.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        U = u.size
        q = self.y.shape[1]
        S = np.zeros((U, s_order + 1))
        xi = np.zeros((U, xi_order + 1, q))
        code = KERNEL_CODES.get(self.kernel.func)
        if code is not None and self.kernel.support == 1.0:
            return banded_sums(self.t, self.y, u, self.h, self.n * self.h, code, s_order, xi_order)
        lo, hi = self._windows(u)
        counts = hi - lo
        width = int(counts.max()) if U else 0
        if width == 0:
            return S, xi, counts
        step = max(1, _CHUNK_CELLS // width)
        offsets = np.arange(width)
        for start in range(0, U, step):
            sl = slice(start, min(U, start + step))
            idx = lo[sl, None] + offsets
            mask = offsets < counts[sl, None]
            idx = np.minimum(idx, self.size - 1)
            z = (self.t[idx] - u[sl, None]) / self.h
            k = np.where(mask, self.kernel(z), 0.0) / (self.n * self.h)
            zl = np.ones_like(z)
            ys = self.y[idx]
            for l in range(max(s_order, xi_order) + 1):
                if l <= s_order:
                    S[sl, l] = np.sum(zl * k, axis=1)
                if l <= xi_order:
                    xi[sl, l] = np.einsum("uw,uwq->uq", zl * k, ys)
                zl = zl * z
        return S, xi, counts

    # -- estimates --------------------------------------------------------

    def _shape_out(self, arr, ushape):
        return arr.reshape(ushape + ((arr.shape[-1],) if self.vector else ()))

    def evaluate(self, u, inside=None):
        """Local linear estimates ``(g_hat(u), g_hat'(u))``.

        Points flagged in ``inside`` (default: all) raise
        :class:`InsufficientLocalData` when the local system is singular.
        Other points fall back to the local constant fit, or to the response
        of the nearest observation when no data lie within reach; their
        derivative is reported as 0.
        """
        u_arr = np.asarray(u, dtype=float)
        ushape = u_arr.shape
        uf = u_arr.ravel()
        S, xi, counts = self.sums(uf)
        S0, S1, S2 = S[:, 0], S[:, 1], S[:, 2]
        det = S0 * S2 - S1 * S1
        ok = det > det_threshold(S0, self.h)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = (S2[:, None] * xi[:, 0] - S1[:, None] * xi[:, 1]) / det[:, None]
            gp = (S0[:, None] * xi[:, 1] - S1[:, None] * xi[:, 0]) / det[:, None] / self.h
        if not ok.all():
            bad = ~ok
            strict = np.ones(uf.size, bool) if inside is None else np.asarray(inside, bool).ravel()
            hard = bad & strict
            if hard.any():
                k = int(np.flatnonzero(hard)[0])
                raise InsufficientLocalData(uf[k], counts[k])
            gp[bad] = 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                g[bad] = xi[bad, 0] / S0[bad, None]
            empty = bad & ~(S0 > 0)
            if empty.any():
                nearest = np.clip(np.searchsorted(self.t, uf[empty]), 1, self.size - 1)
                left = self.t[nearest - 1]
                pick = np.where(uf[empty] - left <= self.t[nearest] - uf[empty], nearest - 1, nearest)
                g[empty] = self.y[pick]
        return self._shape_out(g, ushape), self._shape_out(gp, ushape)

    def second_derivative(self, u, h=None):
        """``g''`` from a local quadratic fit, by default with bandwidth ``2 h``."""
        pilot = self.with_bandwidth(2.0 * self.h if h is None else h)
        u_arr = np.asarray(u, dtype=float)
        S, xi, counts = pilot.sums(u_arr.ravel(), s_order=4, xi_order=2)
        M = np.stack([S[:, 0:3], S[:, 1:4], S[:, 2:5]], axis=1)
        out = np.empty((u_arr.size, self.y.shape[1]))
        for k in range(u_arr.size):
            try:
                coef = np.linalg.solve(M[k], xi[k])
            except np.linalg.LinAlgError:
                raise InsufficientLocalData(u_arr.ravel()[k], counts[k]) from None
            out[k] = 2.0 * coef[2] / pilot.h**2
        return self._shape_out(out, u_arr.shape)

    def weights(self, u):
        """Equivalent-kernel weights ``W_nij(u)`` with ``g_hat(u) = sum W_nij y_ij``.

        Returned in the original layout of ``index``.
        """
        u = float(u)
        S, _, counts = self.sums(np.array([u]))
        S0, S1, S2 = S[0]
        det = S0 * S2 - S1 * S1
        if not det > det_threshold(S0, self.h):
            raise InsufficientLocalData(u, counts[0])
        z = (self.t - u) / self.h
        k = self.kernel(z) / (self.n * self.h)
        w_sorted = k * (S2 - z * S1) / det
        w = np.empty_like(w_sorted)
        w[self.order] = w_sorted
        return w.reshape(self.shape)


def local_linear(dataset: LongitudinalDataset, beta, u, h, kernel="epanechnikov"):
    """``(g_hat(u; beta), g_hat'(u; beta))`` from the pooled local linear fit."""
    sm = LocalLinearSmoother(dataset.index(beta), dataset.Y, h, kernel, dataset.n)
    g, gp = sm.evaluate(u)
    return g, gp


def smoother_weights(dataset: LongitudinalDataset, beta, u, h, kernel="epanechnikov"):
    sm = LocalLinearSmoother(dataset.index(beta), dataset.Y, h, kernel, dataset.n)
    return sm.weights(u)


def estimate_g1(dataset: LongitudinalDataset, beta, u, h, kernel="epanechnikov", inside=None):
    """Local linear estimate of ``E(X | X^T beta = u)``; shape ``u.shape + (p,)``."""
    sm = LocalLinearSmoother(dataset.index(beta), dataset.X, h, kernel, dataset.n)
    return sm.evaluate(u, inside)[0]


def estimate_density(index, j, u0, h, kernel="epanechnikov"):
    """Kernel density of the index values at measurement occasion ``j``.

    ``index`` is the (n, m) array of ``X_ij^T beta``.
    """
    if not h > 0:
        raise UsageError(f"bandwidth must be positive, got {h}")
    K = get_kernel(kernel)
    col = np.asarray(index, dtype=float)[:, j]
    u0 = np.asarray(u0, dtype=float)
    z = (col[:, None] - u0.ravel()[None, :]) / h
    return (K(z).sum(axis=0) / (col.size * h)).reshape(u0.shape)


def density_sum(index, u0, h, kernel="epanechnikov"):
    """``sum_j f_hat_j(u0)``."""
    index = np.asarray(index, dtype=float)
    return sum(estimate_density(index, j, u0, h, kernel) for j in range(index.shape[1]))


@dataclass(frozen=True)
class LinkEstimate:
    """Link and derivative tabulated on an equispaced grid over the window."""

    grid: np.ndarray
    g: np.ndarray
    g_prime: np.ndarray
    h: float
    beta: np.ndarray
    kernel: str

    def __call__(self, u):
        return np.interp(u, self.grid, self.g)

    def derivative(self, u):
        return np.interp(u, self.grid, self.g_prime)

    @property
    def window(self):
        return float(self.grid[0]), float(self.grid[-1])


def link_estimate(smoother: LocalLinearSmoother, beta: IndexCoefficient, lo, hi, points=GRID_POINTS):
    grid = np.linspace(lo, hi, points)
    g, gp = smoother.evaluate(grid)
    return LinkEstimate(grid, g, gp, smoother.h, np.array(beta.beta), smoother.kernel.name)


# -- bandwidth selection ---------------------------------------------------


def index_scale(index) -> float:
    return float(np.std(np.asarray(index, dtype=float).ravel(), ddof=1))


def rate_bandwidth(index, c=1.0, gamma=0.3) -> float:
    index = np.asarray(index, dtype=float)
    return c * index_scale(index) * index.size ** (-gamma)


def cv_score(dataset: LongitudinalDataset, index, h, kernel="epanechnikov") -> float:
    """Leave-one-subject-out squared prediction error of the pooled smoother.

    Full-sample sums at every observed index value have the held-out
    subject's own contributions subtracted before solving, so one pass
    covers all subjects.
    """
    K = get_kernel(kernel)
    n, m = index.shape
    sm = LocalLinearSmoother(index, dataset.Y, h, K, n)
    S, xi, _ = sm.sums(index.ravel())
    S = S.reshape(n, m, 3)
    xi = xi[:, :, 0].reshape(n, m, 2)
    # own[i, j, j'] : subject i's point j' seen from evaluation point t_ij
    z = (index[:, None, :] - index[:, :, None]) / h
    k = K(z) / (n * h)
    for l in range(3):
        S[..., l] -= np.sum(k * z**l, axis=2)
    for l in range(2):
        xi[..., l] -= np.sum(k * z**l * dataset.Y[:, None, :], axis=2)
    S0, S1, S2 = S[..., 0], S[..., 1], S[..., 2]
    det = S0 * S2 - S1 * S1
    if not np.all(det > det_threshold(np.abs(S0), h)):
        return np.inf
    pred = (S2 * xi[..., 0] - S1 * xi[..., 1]) / det
    return float(np.mean((dataset.Y - pred) ** 2))


def cv_grid(index, size: int) -> np.ndarray:
    if size < 1:
        raise UsageError("empty cross-validation grid")
    scale = index_scale(index)
    return scale * np.logspace(np.log10(0.02), np.log10(2.0), size)


def select_bandwidth(dataset: LongitudinalDataset, beta, policy: Optional[BandwidthPolicy] = None,
                     kernel="epanechnikov", grid=None) -> float:
    """Bandwidth under ``policy`` at the index direction ``beta``."""
    policy = policy or BandwidthPolicy()
    index = dataset.index(beta)
    if policy.kind == "fixed":
        h = float(policy.value)
    elif policy.kind == "rate":
        h = rate_bandwidth(index, policy.c, policy.gamma)
    else:
        grid = cv_grid(index, policy.cv_grid_size) if grid is None else np.asarray(grid, float)
        if grid.size == 0:
            raise UsageError("empty cross-validation grid")
        scores = np.array([cv_score(dataset, index, hh, kernel) for hh in grid])
        if not np.isfinite(scores).any():
            raise InsufficientLocalData(np.nan, 0, "cross-validation failed for every candidate bandwidth")
        best = scores.min()
        tie = best + 1e-10 * (np.mean(dataset.Y**2) + np.finfo(float).tiny)
        h = float(grid[np.flatnonzero(scores <= tie).max()])
        if policy.cv_undersmooth:
            h *= index.size ** (policy.cv_gamma - policy.gamma)
    if not h > 0:
        raise UsageError(f"bandwidth must be positive, got {h}")
    return h
