"""Delete-one-component parameterization of the unit sphere.

A unit vector ``beta`` with ``beta[r] > 0`` is represented by the
``p - 1`` free coordinates ``beta_r`` left after deleting position ``r``;
the deleted entry is recovered as ``sqrt(1 - |beta_r|^2)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateAnchor
from .model import IndexCoefficient

# Jacobian is refused once |beta_r| exceeds 1 - JACOBIAN_GUARD.
JACOBIAN_GUARD = 1e-6


def drop_component(beta: IndexCoefficient) -> np.ndarray:
    b = beta.beta
    free = np.delete(b, beta.r)
    if np.dot(free, free) >= 1.0:
        raise DegenerateAnchor(f"|beta^(r)| >= 1 for anchor r={beta.r}; the anchor is degenerate")
    return free


def lift_component(beta_r, r: int) -> IndexCoefficient:
    free = np.asarray(beta_r, dtype=float).ravel()
    sq = float(np.dot(free, free))
    if sq >= 1.0:
        raise DegenerateAnchor(f"|beta^(r)|^2 = {sq!r} >= 1 cannot be lifted onto the sphere")
    full = np.insert(free, r, np.sqrt(1.0 - sq))
    # Renormalize to absorb the rounding in sqrt(1 - sq).
    return IndexCoefficient(full / np.linalg.norm(full), r)


def jacobian(beta: IndexCoefficient) -> np.ndarray:
    """``d beta / d beta_r`` as a ``p x (p - 1)`` matrix.

    Rows other than ``r`` form the identity; row ``r`` is
    ``-beta_r / sqrt(1 - |beta_r|^2)``. The columns are tangent to the
    sphere at ``beta``, so ``beta @ J == 0``.
    """
    p, r = beta.p, beta.r
    free = np.delete(beta.beta, r)
    norm = np.sqrt(np.dot(free, free))
    if norm > 1.0 - JACOBIAN_GUARD:
        raise DegenerateAnchor(
            f"|beta^(r)| = {norm:.10f} is within {JACOBIAN_GUARD:g} of 1; re-anchor on a larger component"
        )
    J = np.zeros((p, p - 1))
    rows = [s for s in range(p) if s != r]
    J[rows, np.arange(p - 1)] = 1.0
    # Use the stored anchor value: it equals sqrt(1 - |free|^2) on the sphere.
    J[r] = -free / beta.beta[r]
    return J
