"""Second-order kernels with bounded support on [-1, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import UsageError


def epanechnikov(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def quartic(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 0.9375 * (1.0 - u * u) ** 2, 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric probability density supported on ``[-support, support]``.

    ``moments`` holds ``(mu0, mu1, mu2, nu0, nu1, nu2)`` where
    ``mu_l = int u^l K(u) du`` and ``nu_l = int u^l K(u)^2 du``.
    """

    name: str
    func: Callable
    moments: tuple
    support: float = 1.0

    def __call__(self, u):
        return self.func(u)

    @property
    def mu2(self) -> float:
        return self.moments[2]

    @property
    def nu0(self) -> float:
        return self.moments[3]


KERNELS = {
    "epanechnikov": KernelSpec("epanechnikov", epanechnikov, (1.0, 0.0, 0.2, 0.6, 0.0, 3.0 / 35.0)),
    "quartic": KernelSpec("quartic", quartic, (1.0, 0.0, 1.0 / 7.0, 5.0 / 7.0, 0.0, 5.0 / 77.0)),
}


def get_kernel(kernel) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        return kernel
    try:
        return KERNELS[str(kernel).lower()]
    except KeyError:
        raise UsageError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}") from None


def numeric_moments(kernel) -> tuple:
    """Moments by adaptive quadrature over the support."""
    k = get_kernel(kernel)
    a = k.support

    def q(f):
        return integrate.quad(f, -a, a, epsabs=1e-13, epsrel=1e-13, limit=200)[0]

    return (
        q(lambda u: k(u)),
        q(lambda u: u * k(u)),
        q(lambda u: u * u * k(u)),
        q(lambda u: k(u) ** 2),
        q(lambda u: u * k(u) ** 2),
        q(lambda u: u * u * k(u) ** 2),
    )


def kernel_moments(kernel) -> tuple:
    """``(mu0, mu1, mu2, nu0, nu1, nu2)``; analytic for the catalogued kernels."""
    k = get_kernel(kernel)
    if k.moments is not None:
        return tuple(float(v) for v in k.moments)
    return numeric_moments(k)


def check_kernel(kernel, tol: float = 1e-8) -> list:
    """Return a list of violated kernel conditions (empty when valid)."""
    k = get_kernel(kernel)
    problems = []
    grid = np.linspace(-1.5 * k.support, 1.5 * k.support, 601)
    vals = k(grid)
    if np.any(vals < 0):
        problems.append("kernel takes negative values")
    if not np.allclose(vals, k(-grid), atol=tol):
        problems.append("kernel is not symmetric")
    if np.any(vals[np.abs(grid) > k.support] != 0):
        problems.append("kernel support exceeds the declared bound")
    mu0, mu1, mu2, *_ = numeric_moments(k)
    if abs(mu0 - 1) > tol:
        problems.append(f"kernel integrates to {mu0:.12g}, not 1")
    if abs(mu1) > tol:
        problems.append("first moment is not zero")
    if not mu2 > 0:
        problems.append("second moment must be positive")
    return problems
