"""Structural checks and sample surrogates of the regularity conditions.

Only structural problems (shape, non-finite entries, no replication) are
errors. The moment, density and kernel checks are surrogates for asymptotic
conditions and can only warn.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import DataError
from .kernels import check_kernel, get_kernel
from .smoother import select_bandwidth
from .model import FitConfig, LongitudinalDataset, best_anchor, normalize, pooled_ols_direction

# Excess kurtosis above this suggests heavy tails (fourth moment in doubt).
KURTOSIS_BOUND = 20.0
# Minimum observations inside the kernel window at every trimming-window grid point.
MIN_LOCAL_COUNT = 5


@dataclass
class ValidationReport:
    n: int
    m: int
    p: int
    warnings: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.warnings


def _structural(dataset: LongitudinalDataset):
    n, m, p = dataset.n, dataset.m, dataset.p
    if m < 2:
        raise DataError("within-subject replication required: every subject needs m >= 2 measurements")
    if n < 2:
        raise DataError(f"need at least 2 subjects, got {n}")
    if p < 2:
        raise DataError(f"need at least 2 covariates for a single-index model, got p={p}")
    bad_y = np.argwhere(~np.isfinite(dataset.Y))
    if bad_y.size:
        i, j = bad_y[0]
        raise DataError(f"non-finite response at subject {dataset.subject_ids[i]!r} (i={i}, j={j})")
    bad_x = np.argwhere(~np.isfinite(dataset.X))
    if bad_x.size:
        i, j, k = bad_x[0]
        raise DataError(f"non-finite covariate {k} at subject {dataset.subject_ids[i]!r} (i={i}, j={j})")


def validate(dataset: LongitudinalDataset, config: Optional[FitConfig] = None, deep: bool = True) -> ValidationReport:
    """Check ``dataset`` before fitting.

    Raises :class:`DataError` on structural violations. With ``deep=True``
    also runs the statistical surrogates and records warnings.
    """
    config = config or FitConfig()
    _structural(dataset)
    report = ValidationReport(dataset.n, dataset.m, dataset.p)
    if not deep:
        return report

    N = dataset.n * dataset.m
    columns = {"Y": dataset.Y.ravel()}
    columns.update({f"X{k + 1}": dataset.X[..., k].ravel() for k in range(dataset.p)})
    kurt = {}
    for name, col in columns.items():
        if np.ptp(col) == 0:
            kurt[name] = 0.0
            if name != "Y":
                report.warnings.append(f"covariate {name} is constant")
            continue
        kurt[name] = float(stats.kurtosis(col))
        if kurt[name] > KURTOSIS_BOUND:
            report.warnings.append(f"{name} has excess kurtosis {kurt[name]:.1f}; fourth moments may not exist")
    report.checks["excess_kurtosis"] = kurt

    problems = check_kernel(config.kernel)
    report.checks["kernel_problems"] = problems
    report.warnings.extend(f"kernel: {msg}" for msg in problems)

    raw = pooled_ols_direction(dataset)
    if not np.any(raw):
        report.warnings.append("pooled least squares slope is zero; no initial index direction")
        return report
    beta = normalize(raw, best_anchor(raw))
    t = dataset.index(beta)
    lo, hi = np.quantile(t, config.trim_quantiles)
    h = select_bandwidth(dataset, beta, config.bandwidth, config.kernel)
    grid = np.linspace(lo, hi, 101)
    ts = np.sort(t.ravel())
    reach = h * get_kernel(config.kernel).support
    counts = np.searchsorted(ts, grid + reach, "right") - np.searchsorted(ts, grid - reach, "left")
    report.checks["initial_beta"] = beta.beta.tolist()
    report.checks["bandwidth"] = h
    report.checks["min_local_count"] = int(counts.min())
    if counts.min() < MIN_LOCAL_COUNT:
        report.warnings.append(
            f"sparse index density: only {counts.min()} observations within h={h:.4g} of some window point"
        )
    report.checks["observations"] = N
    return report
