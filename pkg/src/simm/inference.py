"""Plug-in asymptotic inference for the index direction and the link.

The sandwich covariance of the direction estimate is
``J B^-1 A B^-1 J^T / n`` with ``A`` built from covariates centred at their
smoothed conditional mean given the index. Its null space contains the
estimate itself, since ``J`` spans the tangent space of the sphere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NumericalError, UsageError
from .gee import build_V_inverse, score_terms, subject_mean, weights_at
from .kernels import get_kernel
from .reparam import jacobian
from .smoother import LocalLinearSmoother, density_sum

# Relative condition guard for inverting the contrast covariance.
CONTRAST_RCOND = 1e-12
MIN_DENSITY = 1e-6


def normal_quantile(prob):
    return float(stats.norm.ppf(prob))


def chi2_quantile(prob, df):
    return float(stats.chi2.ppf(prob, df))


def covariate_smoother(dataset, beta, link: LocalLinearSmoother) -> LocalLinearSmoother:
    """Smoother of ``X`` on the index, sharing bandwidth and kernel with ``link``."""
    return LocalLinearSmoother(dataset.index(beta), dataset.X, link.h, link.kernel, dataset.n)


def assemble_A_hat(dataset, beta, link, vc, weight, g1=None) -> np.ndarray:
    """``n^-1 sum_i J^T Xc_i^T G'_i^2 W_i^2 V^-1 Xc_i J`` with ``Xc_i = X_i - G1_i``.

    ``g1`` evaluates ``E(X | index = u)``; by default it is the local linear
    smoother of the covariates built with ``link``'s bandwidth and kernel.
    """
    if g1 is None:
        g1 = covariate_smoother(dataset, beta, link)
    t = dataset.index(beta)
    w = weights_at(weight, t)
    inside = w > 0
    _, gp = link.evaluate(t, inside)
    G1 = g1.evaluate(t, inside)[0]
    J = jacobian(beta)
    XcJ = (dataset.X - G1) @ J
    Vinv = build_V_inverse(vc)
    mixed = np.einsum("jl,ilk->ijk", Vinv, XcJ)
    terms = np.einsum("ijk,ij,ijl->ikl", XcJ, gp**2 * w**2, mixed)
    return subject_mean(terms)


def sandwich(J, A, B, n):
    """Return the symmetrized, PSD-projected sandwich and its raw asymmetry."""
    Bs = 0.5 * (B + B.T)
    Binv = np.linalg.inv(Bs)
    raw = J @ Binv @ A @ Binv @ J.T / n
    asym = float(np.linalg.norm(raw - raw.T))
    sym = 0.5 * (raw + raw.T)
    evals, evecs = np.linalg.eigh(sym)
    scale = max(float(np.max(np.abs(evals))), np.finfo(float).tiny)
    negative = evals < -1e-10 * scale
    if negative.any():
        sym = (evecs * np.where(negative, 0.0, evals)) @ evecs.T
    clipped = int(negative.sum())
    return sym, asym, clipped


def inference_matrices(dataset, beta, link, vc, weight):
    """``(A_hat, B_hat, J_hat, Sigma_hat, diagnostics)`` at the fitted direction."""
    A = assemble_A_hat(dataset, beta, link, vc, weight)
    _, B, _ = score_terms(dataset, beta, link, build_V_inverse(vc), weight)
    J = jacobian(beta)
    cov, asym, clipped = sandwich(J, A, B, dataset.n)
    evals = np.linalg.eigvalsh(0.5 * (A + A.T))
    diag = {
        "A_asymmetry": float(np.linalg.norm(A - A.T)),
        "A_min_eigenvalue": float(evals.min()),
        "sandwich_asymmetry": asym,
        "sandwich_clipped_eigenvalues": clipped,
    }
    return A, B, J, cov, diag


@dataclass(frozen=True)
class ConfidenceRegion:
    """Chi-square region for ``H^T beta`` around the fitted direction."""

    center: np.ndarray
    H: np.ndarray
    inner: np.ndarray
    critical: float
    level: float

    @property
    def df(self) -> int:
        return self.H.shape[1]

    def statistic(self, beta) -> float:
        diff = self.H.T @ (self.center - np.asarray(beta, dtype=float))
        return float(diff @ np.linalg.solve(self.inner, diff))

    def contains(self, beta) -> bool:
        return self.statistic(beta) <= self.critical

    def interval(self):
        """``(lower, upper)`` for ``h^T beta`` when the contrast is one column."""
        if self.df != 1:
            raise UsageError("intervals are defined only for single-column contrasts")
        est = float(self.H[:, 0] @ self.center)
        half = float(np.sqrt(self.critical * self.inner[0, 0]))
        return est - half, est + half


def confidence_region(fit, H, level=0.95) -> ConfidenceRegion:
    """Large-sample region ``{beta : stat(beta) <= chi2_{l, level}}`` for contrast ``H``."""
    H = np.asarray(H, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    p = fit.beta.p
    if H.shape[0] != p:
        raise UsageError(f"contrast must have {p} rows, got {H.shape[0]}")
    l = H.shape[1]
    if not l < p:
        raise UsageError(f"contrast has l={l} columns; need l < p={p}")
    if np.linalg.matrix_rank(H) < l:
        raise UsageError("contrast matrix H is not of full column rank")
    inner = H.T @ fit.covariance @ H
    inner = 0.5 * (inner + inner.T)
    evals = np.linalg.eigvalsh(inner)
    if not evals.min() > CONTRAST_RCOND * max(evals.max(), 0.0):
        raise NumericalError(f"covariance of the contrast H={H.tolist()} is singular")
    return ConfidenceRegion(np.array(fit.beta.beta), H, inner, chi2_quantile(level, l), level)


def coordinate_intervals(fit, level=0.95) -> np.ndarray:
    """``(p, 2)`` array of per-coordinate intervals; NaN where degenerate."""
    p = fit.beta.p
    out = np.full((p, 2), np.nan)
    for k in range(p):
        try:
            out[k] = confidence_region(fit, np.eye(p)[:, k], level).interval()
        except NumericalError:
            pass
    return out


@dataclass(frozen=True)
class PointwiseBand:
    u0: np.ndarray
    g_hat: np.ndarray
    bias: np.ndarray
    sigma_sq: np.ndarray
    level: float
    lower: np.ndarray
    upper: np.ndarray

    @property
    def width(self):
        return self.upper - self.lower


def pointwise_band(smoother, index, u0, vc, level=0.95, bias_mode="ignore", inside=None):
    """Pointwise normal intervals for the link from its local linear fit.

    ``index`` is the (n, m) array of fitted index values, ``vc`` the
    estimated variance components.
    """
    if bias_mode not in ("ignore", "plugin"):
        raise UsageError(f"bias_mode must be 'ignore' or 'plugin', got {bias_mode!r}")
    u0 = np.asarray(u0, dtype=float)
    n = np.asarray(index).shape[0]
    h = smoother.h
    K = get_kernel(smoother.kernel)
    dens = density_sum(index, u0, h, K)
    if np.any(dens < MIN_DENSITY):
        bad = u0.ravel()[np.argmax(np.ravel(dens) < MIN_DENSITY)]
        raise NumericalError(f"u0={bad:.6g} is outside the effective support of the index")
    g, _ = smoother.evaluate(u0, inside)
    sigma_sq = (vc.sigma_alpha_sq + vc.sigma_eps_sq) * K.nu0 / dens
    if bias_mode == "plugin":
        bias = 0.5 * h**2 * K.mu2 * smoother.second_derivative(u0)
    else:
        bias = np.zeros_like(g)
    half = normal_quantile(0.5 + level / 2) * np.sqrt(sigma_sq / (n * h))
    center = g - bias
    return PointwiseBand(u0, g, bias, sigma_sq, level, center - half, center + half)


def pointwise_ci_g(fit, u0, level=0.95, bias_mode="ignore") -> PointwiseBand:
    """Interval for ``g(u0)`` from a completed fit; ``u0`` must lie in the window."""
    if fit.smoother is None or fit.dataset is None:
        raise UsageError("pointwise intervals need the fit's dataset and smoother")
    u = np.asarray(u0, dtype=float)
    if not np.all(fit.window.contains(u)):
        raise UsageError(f"u0 must lie inside the trimming window [{fit.window.lo:.6g}, {fit.window.hi:.6g}]")
    index = fit.dataset.index(fit.beta)
    return pointwise_band(fit.smoother, index, u, fit.variance, level, bias_mode)


def cosine_alignment(beta_hat, beta_ref) -> float:
    """Absolute cosine between two unit directions."""
    a = np.asarray(getattr(beta_hat, "beta", beta_hat), dtype=float)
    b = np.asarray(getattr(beta_ref, "beta", beta_ref), dtype=float)
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise UsageError("cosine_alignment expects unit vectors")
    return float(min(1.0, abs(a @ b)))


def angle_error(beta_hat, beta_ref) -> float:
    """Angle in radians between the lines spanned by two unit vectors."""
    a = np.asarray(getattr(beta_hat, "beta", beta_hat), dtype=float)
    b = np.asarray(getattr(beta_ref, "beta", beta_ref), dtype=float)
    cosine_alignment(a, b)
    # chord form stays accurate for tiny angles, unlike arccos
    chord = np.linalg.norm(a - np.copysign(1.0, a @ b) * b)
    return float(2.0 * np.arcsin(min(1.0, chord / 2.0)))
