import numpy as np
import pytest
from numpy.testing import assert_allclose

from simm import KERNELS, KernelSpec, UsageError, get_kernel, kernel_moments
from simm.kernels import check_kernel, numeric_moments


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_analytic_moments_match_quadrature(name):
    assert_allclose(kernel_moments(name), numeric_moments(name), atol=1e-12)


def test_epanechnikov_constants():
    mu0, mu1, mu2, nu0, nu1, nu2 = kernel_moments("epanechnikov")
    assert (mu0, mu1) == (1.0, 0.0)
    assert mu2 == pytest.approx(0.2, abs=1e-15)
    assert nu0 == pytest.approx(0.6, abs=1e-15)
    assert nu2 == pytest.approx(3 / 35, abs=1e-15)


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_catalogued_kernels_are_valid(name):
    assert check_kernel(name) == []


def test_kernel_vanishes_outside_support():
    for k in KERNELS.values():
        assert np.all(k(np.array([-1.0001, 1.0001, 5.0])) == 0)
        assert k(np.array(0.0)) > 0


def test_check_kernel_reports_problems():
    lopsided = KernelSpec("lopsided", lambda u: np.where((u >= 0) & (u <= 1), 1.0, 0.0), None)
    problems = check_kernel(lopsided)
    assert any("symmetric" in p for p in problems)
    assert any("first moment" in p for p in problems)
    unnormalized = KernelSpec("half", lambda u: 0.5 * KERNELS["epanechnikov"](u), None)
    assert any("integrates" in p for p in check_kernel(unnormalized))


def test_custom_kernel_moments_fall_back_to_quadrature():
    tri = KernelSpec("triangle", lambda u: np.clip(1 - np.abs(u), 0, None), None)
    mu0, mu1, mu2, nu0, _, _ = kernel_moments(tri)
    assert_allclose([mu0, mu1, mu2, nu0], [1.0, 0.0, 1 / 6, 2 / 3], atol=1e-12)


def test_unknown_kernel():
    with pytest.raises(UsageError):
        get_kernel("gaussian")
