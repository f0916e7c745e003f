import numpy as np
import pytest
from numpy.testing import assert_allclose

from simm import FitConfig, SimulationConfig, UsageError, generate, run_study
from simm.simulation import records_csv, replication_seed, summary_report


def test_replication_streams_match_spawn():
    children = np.random.SeedSequence(2009).spawn(5)
    for k, child in enumerate(children):
        a = np.random.default_rng(replication_seed(2009, k)).random(4)
        assert_allclose(a, np.random.default_rng(child).random(4), rtol=0, atol=0)


def test_generate_is_deterministic_and_matches_model():
    cfg = SimulationConfig(n=30, m=3, sigma_alpha=0.0, sigma_eps=0.0)
    a, b = generate(cfg, 4), generate(cfg, 4)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.X, b.X)
    assert_allclose(a.Y, np.sin(np.pi * (a.X @ np.array(cfg.beta0)) / 2), atol=1e-15)
    assert np.all(np.abs(a.X) <= 1)


def test_random_effect_is_shared_within_subject():
    cfg = SimulationConfig(n=2000, m=5, sigma_alpha=1.0, sigma_eps=0.0, link="linear")
    d = generate(cfg, 0)
    alpha = d.Y - d.X @ np.array(cfg.beta0)
    assert np.ptp(alpha, axis=1).max() < 1e-12
    assert np.var(alpha[:, 0]) == pytest.approx(1.0, abs=0.1)


def test_chisq_random_effect_is_centered():
    cfg = SimulationConfig(n=20000, m=2, sigma_eps=0.0, link="linear", random_effect="chisq", sigma_alpha=0.5)
    d = generate(cfg, 1)
    alpha = (d.Y - d.X @ np.array(cfg.beta0))[:, 0]
    assert abs(alpha.mean()) < 0.02
    assert alpha.std() == pytest.approx(0.5, abs=0.03)


def test_config_validation():
    for bad in (dict(beta0=(1.0, 1.0)), dict(link="cubic"), dict(covariates="t"), dict(rho=1.0),
                dict(sigma_eps=-1.0)):
        with pytest.raises(UsageError):
            SimulationConfig(**bad)


@pytest.mark.slow
def test_serial_and_parallel_studies_agree():
    cfg = SimulationConfig(n=60)
    fc = FitConfig()
    serial = run_study(cfg, fc, 4, master_seed=5, threads=1)
    parallel = run_study(cfg, fc, 4, master_seed=5, threads=2)
    assert summary_report(serial) == summary_report(parallel)
    assert records_csv(serial) == records_csv(parallel)
    assert serial["replications"] == 4 and serial["failed"] == 0


def test_study_prefix_is_stable():
    cfg = SimulationConfig(n=60)
    two = run_study(cfg, FitConfig(), 2, master_seed=8)
    three = run_study(cfg, FitConfig(), 3, master_seed=8)
    assert two.records[:2] == three.records[:2]
    assert len(records_csv(three).splitlines()) == 4
