import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import wls_local_linear, wls_weights
from simm import (
    BandwidthPolicy,
    InsufficientLocalData,
    KernelSpec,
    LocalLinearSmoother,
    LongitudinalDataset,
    estimate_density,
    estimate_g1,
    local_linear,
    normalize,
    select_bandwidth,
    smoother_weights,
)
from simm.kernels import KERNELS
from simm.smoother import cv_grid, cv_score, density_sum, rate_bandwidth


def small_instance(rng):
    n, m, p = rng.integers(2, 6), rng.integers(2, 5), rng.integers(2, 4)
    X = rng.normal(size=(n, m, p))
    Y = rng.normal(size=(n, m))
    beta = normalize(rng.normal(size=p) + 0.1, 0)
    return LongitudinalDataset(Y, X), beta


def admissible_point(t, h, rng):
    """A point whose window holds at least three distinct index values."""
    for _ in range(100):
        u = rng.uniform(t.min(), t.max())
        if np.unique(t[np.abs(t - u) < 0.9 * h]).size >= 3:
            return u
    return None


def test_matches_wls_oracle():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(200):
        d, beta = small_instance(rng)
        t = d.index(beta)
        h = 1.5 * np.std(t) + 0.1
        u = admissible_point(t, h, rng)
        if u is None:
            continue
        g, gp = local_linear(d, beta, u, h)
        a, b = wls_local_linear(t, d.Y, u, h)
        assert_allclose([g, gp], [a, b], atol=1e-10, rtol=1e-10)
        checked += 1
    assert checked > 150


def test_weights_identities_and_oracle():
    rng = np.random.default_rng(12)
    for _ in range(50):
        d, beta = small_instance(rng)
        t = d.index(beta)
        h = 1.5 * np.std(t) + 0.1
        u = admissible_point(t, h, rng)
        if u is None:
            continue
        W = smoother_weights(d, beta, u, h)
        assert W.shape == d.Y.shape
        assert abs(W.sum() - 1) < 1e-10
        assert abs(np.sum(W * (t - u))) < 1e-10
        assert_allclose(np.sum(W * d.Y), local_linear(d, beta, u, h)[0], atol=1e-10)
        assert_allclose(W.ravel(), wls_weights(t, u, h), atol=1e-10)


def test_reproduces_constants_and_lines():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3, 2))
    beta = normalize([1.0, 2.0], 1)
    t = X @ beta.beta
    u = np.linspace(-1, 1, 7)
    g, gp = local_linear(LongitudinalDataset(np.full((30, 3), 7.0), X), beta, u, 0.8)
    assert_allclose(g, 7.0, atol=1e-12)
    assert_allclose(gp, 0.0, atol=1e-11)
    g, gp = local_linear(LongitudinalDataset(2 + 3 * t, X), beta, u, 0.8)
    assert_allclose(g, 2 + 3 * u, atol=1e-12)
    assert_allclose(gp, 3.0, atol=1e-11)


def test_covariate_smoother_examples():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(25, 3, 3))
    beta = normalize([1.0, 1.0, 1.0], 2)
    t = X @ beta.beta
    u = np.array([-0.5, 0.0, 0.4])
    const = np.broadcast_to([1.0, -2.0, 0.5], X.shape)
    d = LongitudinalDataset(np.zeros((25, 3)), X)
    sm = LocalLinearSmoother(t, const, 1.0, "epanechnikov", 25)
    assert_allclose(sm.evaluate(u)[0], np.broadcast_to([1.0, -2.0, 0.5], (3, 3)), atol=1e-12)
    v = np.array([0.3, -1.0, 2.0])
    lin = 1.5 * t[..., None] * v + 4.0
    sm = LocalLinearSmoother(t, lin, 1.0, "epanechnikov", 25)
    assert_allclose(sm.evaluate(u)[0], 1.5 * u[:, None] * v + 4.0, atol=1e-12)
    # brute-force weighted sum per coordinate
    G1 = estimate_g1(d, beta, u, 1.0)
    for k, uk in enumerate(u):
        Wk = wls_weights(t, uk, 1.0)
        assert_allclose(G1[k], Wk @ X.reshape(-1, 3), atol=1e-10)


def test_compiled_and_generic_paths_agree():
    rng = np.random.default_rng(5)
    t = rng.normal(size=(40, 4))
    y = np.sin(t) + rng.normal(size=t.shape)
    u = np.linspace(-2.5, 2.5, 33)
    for name in ("epanechnikov", "quartic"):
        fast = LocalLinearSmoother(t, y, 0.4, name, 40)
        k = KERNELS[name]
        generic = LocalLinearSmoother(t, y, 0.4, KernelSpec(name, lambda z, k=k: k(z), None), 40)
        for so, xo in ((2, 1), (4, 2)):
            S1, xi1, c1 = fast.sums(u, so, xo)
            S2, xi2, c2 = generic.sums(u, so, xo)
            assert_allclose(S1, S2, atol=1e-13)
            assert_allclose(xi1, xi2, atol=1e-13)
            np.testing.assert_array_equal(c1, c2)


def test_insufficient_local_data():
    t = np.array([[0.0, 0.0], [0.0, 5.0]])
    sm = LocalLinearSmoother(t, np.ones_like(t), 0.5)
    with pytest.raises(InsufficientLocalData) as info:
        sm.evaluate(0.1)
    assert info.value.u == pytest.approx(0.1)
    # outside the strict set the estimate falls back to the local constant
    g, gp = sm.evaluate(np.array([0.1]), inside=np.array([False]))
    assert g[0] == 1.0 and gp[0] == 0.0
    g, _ = sm.evaluate(np.array([2.6]), inside=np.array([False]))
    assert g[0] == 1.0


def test_second_derivative_of_quadratic():
    rng = np.random.default_rng(6)
    t = rng.uniform(-2, 2, size=(200, 3))
    sm = LocalLinearSmoother(t, 1 + t - 0.75 * t**2, 0.3)
    assert_allclose(sm.second_derivative(np.array([-1.0, 0.0, 1.0])), -1.5, atol=1e-9)


def test_density_examples():
    assert estimate_density(np.array([[0.0]]), 0, 0.0, 1.0) == pytest.approx(0.75)
    assert estimate_density(np.array([[0.0], [0.5]]), 0, 0.0, 1.0) == pytest.approx(0.65625, abs=1e-15)
    assert estimate_density(np.array([[0.0], [0.5]]), 0, 3.0, 1.0) == 0.0
    idx = np.array([[0.0, 0.5], [0.2, 0.1]])
    assert density_sum(idx, 0.1, 1.0) == pytest.approx(
        estimate_density(idx, 0, 0.1, 1.0) + estimate_density(idx, 1, 0.1, 1.0))


def test_bandwidth_rules():
    d = LongitudinalDataset(np.zeros((250, 4)), np.random.default_rng(0).normal(size=(250, 4, 2)))
    beta = normalize([1.0, 0.0], 0)
    assert select_bandwidth(d, beta, BandwidthPolicy("fixed", 0.3)) == 0.3
    t = d.index(beta)
    scale = np.std(t.ravel(), ddof=1)
    # rate rule on a rescaled index whose sample sd is exactly 2
    t2 = 2 * t / scale
    assert rate_bandwidth(t2, 1.0, 0.3) == pytest.approx(2 * 1000 ** -0.3, rel=1e-14)
    assert select_bandwidth(d, beta, BandwidthPolicy("rate")) == pytest.approx(scale * 1000 ** -0.3)


def test_cv_on_noiseless_linear_data_picks_largest_h():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 3, 2))
    beta = normalize([1.0, 1.0], 0)
    d = LongitudinalDataset(1 + 2 * (X @ beta.beta), X)
    t = d.index(beta)
    grid = cv_grid(t, 8)
    scores = np.array([cv_score(d, t, h, "epanechnikov") for h in grid])
    finite = np.isfinite(scores)
    assert finite.sum() >= 3 and scores[finite].max() < 1e-20
    h = select_bandwidth(d, beta, BandwidthPolicy("cv", cv_grid_size=8, cv_undersmooth=False), grid=grid)
    assert h == grid[-1]


def test_cv_score_matches_refits():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(12, 3, 2))
    beta = normalize([1.0, 0.5], 0)
    d = LongitudinalDataset(np.sin(X @ beta.beta) + 0.1 * rng.normal(size=(12, 3)), X)
    t = d.index(beta)
    h = 1.5
    errors = []
    for i in range(12):
        keep = np.arange(12) != i
        sm = LocalLinearSmoother(t[keep], d.Y[keep], h)
        errors.append(d.Y[i] - sm.evaluate(t[i])[0])
    assert cv_score(d, t, h) == pytest.approx(np.mean(np.square(errors)), rel=1e-10)


def test_density_is_a_density():
    rng = np.random.default_rng(10)
    idx = rng.normal(size=(400, 3))
    grid = np.linspace(-6, 6, 4001)
    for j in range(3):
        f = estimate_density(idx, j, grid, 0.3)
        assert f.min() >= 0
        assert np.sum(f) * (grid[1] - grid[0]) == pytest.approx(1.0, abs=0.02)
