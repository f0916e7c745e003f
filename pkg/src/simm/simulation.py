"""Synthetic single-index mixed-model data and Monte Carlo studies.

Replication ``k`` of a study with master seed ``s`` draws from
``numpy.random.SeedSequence(s, spawn_key=(k,))``, the same stream that
``SeedSequence(s).spawn(R)[k]`` yields. Results therefore do not depend on
the number of replications, on the worker count, or on scheduling order.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError, SimmError, UsageError
from .gee import fit
from .io import fmt
from .inference import angle_error, confidence_region, cosine_alignment, pointwise_ci_g
from .model import FitConfig, LongitudinalDataset

log = logging.getLogger(__name__)

LINKS = {
    "linear": (lambda u: u, lambda u: np.ones_like(u), lambda u: np.zeros_like(u)),
    "quadratic": (lambda u: u**2, lambda u: 2.0 * u, lambda u: 2.0 * np.ones_like(u)),
    "sine": (
        lambda u: np.sin(np.pi * u / 2),
        lambda u: 0.5 * np.pi * np.cos(np.pi * u / 2),
        lambda u: -0.25 * np.pi**2 * np.sin(np.pi * u / 2),
    ),
}
COVARIATE_LAWS = ("uniform", "gaussian")
RANDOM_EFFECT_LAWS = ("normal", "chisq")
MAX_FAILURE_RATE = 0.05


def link_function(name):
    """``(g, g', g'')`` for a catalogued link."""
    try:
        return LINKS[name]
    except KeyError:
        raise UsageError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


@dataclass(frozen=True)
class SimulationConfig:
    """Design of one synthetic panel.

    The defaults are the package's reference study: direction (1, 2, 2)/3,
    sine link, covariates uniform on [-1, 1]^3, and both standard deviations
    equal to 0.5.
    """

    n: int = 200
    m: int = 4
    beta0: tuple = (1 / 3, 2 / 3, 2 / 3)
    link: str = "sine"
    covariates: str = "uniform"
    rho: float = 0.0
    sigma_alpha: float = 0.5
    sigma_eps: float = 0.5
    random_effect: str = "normal"
    chisq_df: int = 1
    seed: int = 0

    def __post_init__(self):
        b = np.asarray(self.beta0, dtype=float)
        object.__setattr__(self, "beta0", tuple(float(v) for v in b))
        if abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise UsageError("beta0 must have unit norm")
        if self.n < 1 or self.m < 1 or b.size < 2:
            raise UsageError("need n >= 1, m >= 1 and p >= 2")
        if self.sigma_alpha < 0 or self.sigma_eps < 0:
            raise UsageError("standard deviations must be non-negative")
        if self.covariates not in COVARIATE_LAWS:
            raise UsageError(f"unknown covariate law {self.covariates!r}")
        if self.random_effect not in RANDOM_EFFECT_LAWS:
            raise UsageError(f"unknown random-effect law {self.random_effect!r}")
        if not -1.0 / (b.size - 1) < self.rho < 1.0:
            raise UsageError("equicorrelation rho out of range")
        link_function(self.link)

    @property
    def p(self) -> int:
        return len(self.beta0)

    def with_(self, **changes) -> "SimulationConfig":
        return SimulationConfig(**{**asdict(self), **changes})


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate(config: SimulationConfig, seed=None) -> LongitudinalDataset:
    """Draw ``Y_ij = g(X_ij^T beta0) + alpha_i + eps_ij``.

    ``seed`` (int, SeedSequence or Generator) overrides ``config.seed``.
    """
    rng = _rng(config.seed if seed is None else seed)
    n, m, p = config.n, config.m, config.p
    if config.covariates == "uniform":
        X = rng.uniform(-1.0, 1.0, size=(n, m, p))
    else:
        cov = (1 - config.rho) * np.eye(p) + config.rho * np.ones((p, p))
        X = rng.standard_normal((n, m, p)) @ np.linalg.cholesky(cov).T
    if config.random_effect == "normal":
        alpha = config.sigma_alpha * rng.standard_normal(n)
    else:
        k = config.chisq_df
        alpha = config.sigma_alpha * (rng.chisquare(k, n) - k) / np.sqrt(2 * k)
    eps = config.sigma_eps * rng.standard_normal((n, m))
    g = link_function(config.link)[0]
    Y = g(X @ np.asarray(config.beta0)) + alpha[:, None] + eps
    ids = tuple(f"s{i + 1:05d}" for i in range(n))
    return LongitudinalDataset(Y, X, ids)


def replication_seed(master_seed: int, k: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(k,))


@dataclass
class ReplicationRecord:
    replicate: int
    seed: int
    beta_hat: tuple = ()
    angle: float = np.nan
    one_minus_cos: float = np.nan
    sigma_alpha_sq: float = np.nan
    sigma_eps_sq: float = np.nan
    sup_link_error: float = np.nan
    beta_covered: tuple = ()
    g_u0: float = np.nan
    g_covered: bool = False
    converged: bool = False
    iterations: int = 0
    runtime: float = field(default=np.nan, compare=False)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def run_replication(config: SimulationConfig, fit_config: FitConfig, k: int, master_seed: int) -> ReplicationRecord:
    ss = replication_seed(master_seed, k)
    record = ReplicationRecord(replicate=k, seed=int(ss.generate_state(1, np.uint64)[0]))
    started = time.perf_counter()
    try:
        data = generate(config, ss)
        result = fit(data, fit_config)
        beta0 = np.asarray(config.beta0)
        g_true = link_function(config.link)[0]
        g_fn = g_true
        if result.beta.beta @ beta0 < 0:
            # the fit chose the opposite orientation; g(u) on that axis is g(-u)
            beta0 = -beta0
            g_fn = lambda u: g_true(-u)  # noqa: E731
        record.beta_hat = tuple(float(v) for v in result.beta.beta)
        record.angle = angle_error(result.beta, beta0)
        record.one_minus_cos = 1.0 - cosine_alignment(result.beta, beta0)
        record.sigma_alpha_sq = result.variance.sigma_alpha_sq
        record.sigma_eps_sq = result.variance.sigma_eps_sq
        record.sup_link_error = float(np.max(np.abs(result.link.g - g_fn(result.link.grid))))
        covered = []
        for k_coord in range(config.p):
            try:
                lo, hi = confidence_region(result, np.eye(config.p)[:, k_coord], fit_config.level).interval()
                covered.append(bool(lo <= beta0[k_coord] <= hi))
            except NumericalError:
                covered.append(False)
        record.beta_covered = tuple(covered)
        u0 = float(np.median(data.index(result.beta)))
        band = pointwise_ci_g(result, u0, fit_config.level)
        record.g_u0 = u0
        record.g_covered = bool(band.lower <= g_fn(np.array(u0)) <= band.upper)
        record.converged = result.converged
        record.iterations = len(result.trace)
    except SimmError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        log.warning("replication %d failed: %s", k, record.error)
    except np.linalg.LinAlgError as exc:
        record.error = f"LinAlgError: {exc}"
        log.warning("replication %d failed: %s", k, record.error)
    record.runtime = time.perf_counter() - started
    return record


def _run_one(args):
    return run_replication(*args)


@dataclass
class StudySummary:
    """Aggregates over successful replications; ``records`` keeps them all."""

    config: SimulationConfig
    metrics: dict
    records: list

    def __getitem__(self, key):
        return self.metrics[key]


def _iqr(x):
    q1, q3 = np.percentile(x, [25, 75])
    return float(q3 - q1)


def summarize(config: SimulationConfig, records) -> StudySummary:
    ok = [r for r in records if not r.failed]
    metrics = {
        "replications": len(records),
        "failed": len(records) - len(ok),
    }
    if ok:
        angle = np.array([r.angle for r in ok])
        sa = np.array([r.sigma_alpha_sq for r in ok])
        se = np.array([r.sigma_eps_sq for r in ok])
        metrics.update(
            converged_fraction=float(np.mean([r.converged for r in ok])),
            angle_median=float(np.median(angle)),
            angle_iqr=_iqr(angle),
            one_minus_cos_median=float(np.median([r.one_minus_cos for r in ok])),
            sigma_alpha_sq_mean=float(np.mean(sa)),
            sigma_alpha_sq_rmse=float(np.sqrt(np.mean((sa - config.sigma_alpha**2) ** 2))),
            sigma_eps_sq_mean=float(np.mean(se)),
            sigma_eps_sq_rmse=float(np.sqrt(np.mean((se - config.sigma_eps**2) ** 2))),
            sup_link_error_median=float(np.median([r.sup_link_error for r in ok])),
            sup_link_error_iqr=_iqr([r.sup_link_error for r in ok]),
            coverage_g=float(np.mean([r.g_covered for r in ok])),
        )
        for k in range(config.p):
            metrics[f"coverage_beta{k + 1}"] = float(np.mean([r.beta_covered[k] for r in ok]))
    return StudySummary(config, metrics, list(records))


def run_study(config: SimulationConfig, fit_config: Optional[FitConfig] = None, replications: int = 100,
              master_seed: Optional[int] = None, threads: int = 1) -> StudySummary:
    """Fit ``replications`` independent synthetic panels and aggregate.

    Failed replications are recorded; more than 5% failures raise
    :class:`NumericalError`.
    """
    if replications < 1:
        raise UsageError("replications must be at least 1")
    fit_config = fit_config or FitConfig()
    master = config.seed if master_seed is None else int(master_seed)
    jobs = [(config, fit_config, k, master) for k in range(replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(_run_one, jobs, chunksize=max(1, replications // (4 * threads))))
    else:
        records = [_run_one(job) for job in jobs]
    summary = summarize(config, records)
    rate = summary.metrics["failed"] / replications
    if rate > MAX_FAILURE_RATE:
        raise NumericalError(f"{summary.metrics['failed']} of {replications} replications failed")
    return summary


# -- emission ----------------------------------------------------------------

RECORD_COLUMNS = (
    "replicate", "seed", "angle", "one_minus_cos", "sigma_alpha_sq", "sigma_eps_sq",
    "sup_link_error", "g_u0", "g_covered", "converged", "iterations", "error",
)


def records_csv(summary: StudySummary) -> str:
    p = summary.config.p
    header = list(RECORD_COLUMNS[:2]) + [f"beta_hat{k + 1}" for k in range(p)] + list(RECORD_COLUMNS[2:]) + [
        f"beta{k + 1}_covered" for k in range(p)
    ]
    lines = [",".join(header)]
    for r in summary.records:
        beta = list(r.beta_hat) or [np.nan] * p
        cov = list(r.beta_covered) or [False] * p
        row = [r.replicate, r.seed] + beta + [getattr(r, c) for c in RECORD_COLUMNS[2:]] + cov
        lines.append(",".join(fmt(v).replace(",", ";") for v in row))
    return "\n".join(lines) + "\n"


def summary_report(summary: StudySummary) -> str:
    lines = [f"config.{k} = {fmt(v) if not isinstance(v, tuple) else ' '.join(fmt(x) for x in v)}"
             for k, v in asdict(summary.config).items()]
    lines += [f"{k} = {fmt(v)}" for k, v in summary.metrics.items()]
    return "\n".join(lines) + "\n"
