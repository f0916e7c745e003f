"""Between/within-subject variance components from link residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import VarianceComponents


@dataclass(frozen=True)
class ResidualSet:
    """Residuals ``e_ij = Y_ij - g_hat(X_ij^T beta_hat)`` as an (n, m) array."""

    e: np.ndarray

    def __post_init__(self):
        e = np.array(self.e, dtype=float)
        if e.ndim != 2:
            raise DataError(f"residuals must be an (n, m) array, got shape {e.shape}")
        if not np.all(np.isfinite(e)):
            raise DataError("residuals contain non-finite values")
        object.__setattr__(self, "e", e)

    @classmethod
    def from_fitted(cls, Y, fitted) -> "ResidualSet":
        return cls(np.asarray(Y, dtype=float) - np.asarray(fitted, dtype=float))

    @property
    def subject_means(self) -> np.ndarray:
        return self.e.mean(axis=1)


def estimate_variances(residuals) -> VarianceComponents:
    """Gaussian pseudo-likelihood estimates of ``(sigma_alpha^2, sigma_eps^2)``.

    The within-subject spread gives ``sigma_eps^2``; the spread of subject
    means, less ``sigma_eps^2 / m``, gives ``sigma_alpha^2``. When the latter
    is not positive the random-effect variance is set to zero and
    ``sigma_eps^2`` becomes the plain mean squared residual.

    >>> vc = estimate_variances([[1.0, -1.0], [1.0, -1.0]])
    >>> vc.sigma_alpha_sq, vc.sigma_eps_sq
    (0.0, 1.0)
    """
    rs = residuals if isinstance(residuals, ResidualSet) else ResidualSet(residuals)
    e = rs.e
    n, m = e.shape
    if m < 2:
        raise DataError("within-subject replication required: need m >= 2 to split variance components")
    ebar = rs.subject_means
    within = math.fsum(((e - ebar[:, None]) ** 2).ravel())
    sigma_eps_sq = within / (n * (m - 1))
    sigma_alpha_sq = math.fsum(ebar**2) / n - sigma_eps_sq / m
    if sigma_alpha_sq <= 0:
        return VarianceComponents(0.0, math.fsum((e**2).ravel()) / (n * m), m)
    return VarianceComponents(sigma_alpha_sq, sigma_eps_sq, m)
