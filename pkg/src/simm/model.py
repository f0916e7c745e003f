"""Domain types shared across the package.

Indices are zero-based throughout: the anchor ``r`` of an
:class:`IndexCoefficient` is a Python position into ``beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, DegenerateAnchor, UsageError

NORM_TOL = 1e-12


@dataclass(frozen=True)
class LongitudinalDataset:
    """Balanced panel: ``n`` subjects observed ``m`` times each.

    Attributes
    ----------
    Y : ndarray, shape (n, m)
        Responses.
    X : ndarray, shape (n, m, p)
        Covariates.
    subject_ids : tuple of str
        One opaque label per subject.
    """

    Y: np.ndarray
    X: np.ndarray
    subject_ids: tuple = ()

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        X = np.array(self.X, dtype=float)
        if Y.ndim != 2:
            raise DataError(f"Y must be an (n, m) array, got shape {Y.shape}")
        if X.ndim != 3 or X.shape[:2] != Y.shape:
            raise DataError(f"X must have shape (n, m, p) = {Y.shape + ('p',)}, got {X.shape}")
        Y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)
        ids = tuple(str(s) for s in self.subject_ids) if len(self.subject_ids) else tuple(
            f"s{i + 1}" for i in range(Y.shape[0])
        )
        if len(ids) != Y.shape[0]:
            raise DataError(f"{len(ids)} subject ids for {Y.shape[0]} subjects")
        object.__setattr__(self, "subject_ids", ids)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[2]

    def index(self, beta) -> np.ndarray:
        """Index values ``X_ij^T beta`` as an (n, m) array."""
        b = beta.beta if isinstance(beta, IndexCoefficient) else np.asarray(beta, dtype=float)
        return self.X @ b

    def subset(self, rows) -> "LongitudinalDataset":
        rows = np.asarray(rows)
        return LongitudinalDataset(
            self.Y[rows], self.X[rows], tuple(self.subject_ids[i] for i in rows)
        )


@dataclass(frozen=True)
class IndexCoefficient:
    """Unit-norm index direction with a positive anchor component ``r``."""

    beta: np.ndarray
    r: int

    def __post_init__(self):
        b = np.array(self.beta, dtype=float).ravel()
        r = int(self.r)
        if not 0 <= r < b.size:
            raise UsageError(f"anchor r={r} out of range for p={b.size}")
        if abs(np.linalg.norm(b) - 1.0) > NORM_TOL:
            raise UsageError(f"beta must have unit norm, |beta|={np.linalg.norm(b)!r}")
        if not b[r] > 0:
            raise DegenerateAnchor(f"anchor component beta[{r}]={b[r]!r} is not positive")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "r", r)

    @property
    def p(self) -> int:
        return self.beta.size


UNIT_NORM_SLACK = 8 * np.finfo(float).eps


def normalize(beta_raw, r: int) -> IndexCoefficient:
    """Scale ``beta_raw`` to unit length and flip its sign so ``beta[r] > 0``.

    >>> normalize([3.0, 4.0], r=1).beta
    array([0.6, 0.8])
    """
    b = np.asarray(beta_raw, dtype=float).ravel()
    norm = np.linalg.norm(b)
    if not np.isfinite(norm) or norm == 0.0:
        raise UsageError("cannot normalize a zero (or non-finite) vector")
    if b[r] == 0.0:
        raise DegenerateAnchor(f"component r={r} is zero; choose another anchor")
    # Vectors already of unit length up to rounding pass through unscaled,
    # which makes normalize idempotent bit-for-bit.
    out = b.copy() if abs(norm - 1.0) <= UNIT_NORM_SLACK else b / norm
    if out[r] < 0:
        out = -out
    return IndexCoefficient(out, r)


def best_anchor(beta_raw) -> int:
    """Position of the largest-magnitude component."""
    return int(np.argmax(np.abs(np.asarray(beta_raw, dtype=float))))


@dataclass(frozen=True)
class VarianceComponents:
    sigma_alpha_sq: float
    sigma_eps_sq: float
    m: int

    def __post_init__(self):
        if self.sigma_alpha_sq < 0 or self.sigma_eps_sq < 0:
            raise UsageError("variance components must be non-negative")
        if self.m < 1:
            raise UsageError("block size m must be positive")

    def covariance(self) -> np.ndarray:
        """Compound-symmetry matrix ``sigma_alpha^2 11^T + sigma_eps^2 I``."""
        m = self.m
        return self.sigma_alpha_sq * np.ones((m, m)) + self.sigma_eps_sq * np.eye(m)

    def inverse(self) -> np.ndarray:
        """Closed-form inverse of :meth:`covariance` (rank-one update)."""
        if not self.sigma_eps_sq > 0:
            raise UsageError("sigma_eps_sq must be positive to invert V")
        m = self.m
        s_a, s_e = self.sigma_alpha_sq, self.sigma_eps_sq
        shrink = s_a / (s_e + m * s_a)
        return (np.eye(m) - shrink * np.ones((m, m))) / s_e

    def floored(self, floor: float) -> "VarianceComponents":
        if self.sigma_eps_sq >= floor:
            return self
        return VarianceComponents(self.sigma_alpha_sq, floor, self.m)


@dataclass(frozen=True)
class TrimmingWeight:
    """Indicator weight ``w(u) = 1{|u - center| <= a}``."""

    a: float
    center: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise UsageError(f"trimming half-width must be positive, got {self.a}")

    @classmethod
    def from_interval(cls, lo: float, hi: float) -> "TrimmingWeight":
        return cls(a=0.5 * (hi - lo), center=0.5 * (hi + lo))

    @classmethod
    def everywhere(cls) -> "TrimmingWeight":
        return cls(a=float("inf"))

    @property
    def lo(self) -> float:
        return self.center - self.a

    @property
    def hi(self) -> float:
        return self.center + self.a

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (np.abs(u - self.center) <= self.a).astype(float)

    def contains(self, u) -> np.ndarray:
        return np.abs(np.asarray(u, dtype=float) - self.center) <= self.a


BANDWIDTH_POLICIES = ("fixed", "rate", "cv")


@dataclass(frozen=True)
class BandwidthPolicy:
    """How the smoothing bandwidth is chosen.

    ``fixed`` returns ``value``; ``rate`` uses ``c * sd(index) * (n m)^-gamma``;
    ``cv`` runs leave-one-subject-out cross-validation over ``cv_grid_size``
    log-spaced candidates and then undersmooths by ``(n m)^(cv_gamma - gamma)``.
    """

    kind: str = "rate"
    value: Optional[float] = None
    c: float = 1.0
    gamma: float = 0.3
    cv_gamma: float = 0.2
    cv_grid_size: int = 20
    cv_undersmooth: bool = True

    def __post_init__(self):
        if self.kind not in BANDWIDTH_POLICIES:
            raise UsageError(f"unknown bandwidth policy {self.kind!r}")
        if self.kind == "fixed" and not (self.value is not None and self.value > 0):
            raise UsageError("fixed bandwidth policy needs a positive value")
        if self.kind in ("rate", "cv") and not (0.2 < self.gamma <= 1 / 3):
            raise UsageError(f"rate exponent gamma must lie in (1/5, 1/3], got {self.gamma}")
        if self.kind == "rate" and not self.c > 0:
            raise UsageError("rate constant c must be positive")
        if self.kind == "cv" and self.cv_grid_size < 1:
            raise UsageError("empty cross-validation grid")


@dataclass(frozen=True)
class FitConfig:
    bandwidth: BandwidthPolicy = field(default_factory=BandwidthPolicy)
    kernel: str = "epanechnikov"
    max_iterations: int = 50
    tol: float = 1e-8
    max_scoring_steps: int = 5
    max_halvings: int = 10
    trim_quantiles: tuple = (0.05, 0.95)
    anchor_floor: float = 0.1
    level: float = 0.95
    # Outer iterations during which trimming membership follows the index;
    # afterwards each observation keeps the weight it had last.
    weight_refresh: int = 3
    # Past outer iterates used to extrapolate the alternation; 0 disables it.
    anderson_depth: int = 3
    # Solve the profiled equations directly when half the iterations pass
    # without convergence, then resume alternating from that root.
    profile_rescue: bool = True

    def __post_init__(self):
        lo, hi = self.trim_quantiles
        if not 0.0 <= lo < hi <= 1.0:
            raise UsageError(f"trimming quantiles must satisfy 0 <= lo < hi <= 1, got {self.trim_quantiles}")
        if self.max_iterations < 0 or self.max_scoring_steps < 1:
            raise UsageError("iteration limits must be non-negative (scoring steps >= 1)")
        if not self.tol > 0:
            raise UsageError("tolerance must be positive")
        if self.anderson_depth < 0:
            raise UsageError("anderson_depth must be non-negative")
        if self.weight_refresh < 1:
            raise UsageError("weight_refresh must be at least 1")
        if not 0 < self.level < 1:
            raise UsageError("confidence level must lie in (0, 1)")


def pooled_ols_direction(dataset: LongitudinalDataset) -> np.ndarray:
    """Slope vector of the pooled least-squares fit of Y on (1, X)."""
    N = dataset.n * dataset.m
    design = np.column_stack([np.ones(N), dataset.X.reshape(N, dataset.p)])
    coef, *_ = np.linalg.lstsq(design, dataset.Y.reshape(N), rcond=None)
    return coef[1:]


def as_index(beta, r: Optional[int] = None) -> IndexCoefficient:
    if isinstance(beta, IndexCoefficient):
        return beta
    return normalize(beta, best_anchor(beta) if r is None else r)

