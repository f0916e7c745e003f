"""Long-format CSV ingestion, flat key-value configs and report emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .model import BandwidthPolicy, FitConfig, LongitudinalDataset


def fmt(value) -> str:
    """Round-trip-safe text: 17 significant digits for floats."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def human(value) -> str:
    """Four significant digits for console summaries."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".4g")
    return fmt(value)


# -- CSV ---------------------------------------------------------------------


def _parse_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}: column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}: column {column!r}: non-finite value {text!r}")
    return value


def ingest_csv(path, subject="subject", index="index", response="y", covariates=None) -> LongitudinalDataset:
    """Read a balanced long-format panel.

    One row per ``(subject, index)`` with measurement indices ``1..m``.
    ``covariates`` defaults to every other column in header order. Rows are
    reordered by subject id, then by measurement index.
    """
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for name in (subject, index, response):
            if name not in header:
                raise DataError(f"{path}: header lacks column {name!r} (found {header})")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate column names in header")
        if covariates is None:
            covariates = [h for h in header if h not in (subject, index, response)]
        else:
            covariates = list(covariates)
            missing = [c for c in covariates if c not in header]
            if missing:
                raise DataError(f"{path}: header lacks covariate column(s) {missing}")
        if not covariates:
            raise DataError(f"{path}: no covariate columns")
        pos = {h: k for k, h in enumerate(header)}
        rows = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
            sid = row[pos[subject]].strip()
            if not sid:
                raise DataError(f"line {line}: empty subject id")
            raw = row[pos[index]].strip()
            try:
                j = int(raw)
            except ValueError:
                raise DataError(f"line {line}: column {index!r}: {raw!r} is not an integer") from None
            if j < 1:
                raise DataError(f"line {line}: measurement index must be >= 1, got {j}")
            if (sid, j) in rows:
                raise DataError(f"line {line}: duplicate row for subject={sid!r}, index={j} "
                                f"(first seen on line {rows[sid, j][0]})")
            y = _parse_float(row[pos[response]], line, response)
            x = [_parse_float(row[pos[c]], line, c) for c in covariates]
            rows[sid, j] = (line, y, x)
    if not rows:
        raise DataError(f"{path}: no data rows")

    subjects = sorted({s for s, _ in rows})
    m = max(j for _, j in rows)
    gaps = []
    for s in subjects:
        absent = [j for j in range(1, m + 1) if (s, j) not in rows]
        if absent:
            gaps.append(f"{s} (missing index {', '.join(map(str, absent))})")
    if gaps:
        raise DataError(f"unbalanced panel with m={m}: " + "; ".join(gaps))

    n, p = len(subjects), len(covariates)
    Y = np.empty((n, m))
    X = np.empty((n, m, p))
    for i, s in enumerate(subjects):
        for j in range(m):
            _, Y[i, j], X[i, j] = rows[s, j + 1]
    return LongitudinalDataset(Y, X, tuple(subjects))


def write_csv(dataset: LongitudinalDataset, path, covariate_names=None, response="y") -> None:
    names = covariate_names or [f"x{k + 1}" for k in range(dataset.p)]
    with open(path, "w", newline="") as handle:
        out = csv.writer(handle, lineterminator="\n")
        out.writerow(["subject", "index", response, *names])
        for i, sid in enumerate(dataset.subject_ids):
            for j in range(dataset.m):
                out.writerow([sid, j + 1, fmt(dataset.Y[i, j]), *(fmt(v) for v in dataset.X[i, j])])


def read_matrix(path) -> np.ndarray:
    """Numbers separated by commas or whitespace, one matrix row per line."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        rows.append([_parse_float(tok, line_no, "matrix") for tok in line.replace(",", " ").split()])
    if not rows:
        raise DataError(f"{path}: empty matrix")
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have different lengths")
    return np.array(rows)


# -- configs -----------------------------------------------------------------


def read_config(path) -> dict:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_pairs(text.splitlines(), str(path))


def parse_pairs(lines, source="--set") -> dict:
    out = {}
    for line_no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{line_no}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{line_no}: empty key")
        out[key] = value
    return out


def _convert(text: str, like, key):
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float) or like is None:
            return float(text)
        if isinstance(like, tuple):
            return tuple(float(t) for t in text.replace(",", " ").split())
        return text
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {text!r}") from None


def _defaults(cls):
    obj = cls()
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(cls)}


def build_config(cls, pairs: dict, prefix: str = ""):
    """Instantiate dataclass ``cls`` from string pairs; unknown keys are ignored.

    ``FitConfig.bandwidth`` is read from ``bandwidth`` (the policy kind) and
    ``bandwidth.<field>`` keys.
    """
    defaults = _defaults(cls)
    kwargs = {}
    for name, like in defaults.items():
        if name == "bandwidth" and cls is FitConfig:
            kwargs[name] = _bandwidth(pairs)
        elif prefix + name in pairs:
            kwargs[name] = _convert(pairs[prefix + name], like, prefix + name)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _bandwidth(pairs) -> BandwidthPolicy:
    defaults = _defaults(BandwidthPolicy)
    kwargs = {}
    if "bandwidth" in pairs:
        kwargs["kind"] = pairs["bandwidth"]
    for name, like in defaults.items():
        key = f"bandwidth.{name}"
        if key in pairs:
            kwargs[name] = _convert(pairs[key], like, key)
    return BandwidthPolicy(**kwargs)


def config_keys(*classes) -> set:
    keys = set()
    for cls in classes:
        keys.update(_defaults(cls))
        if cls is FitConfig:
            keys.update(f"bandwidth.{k}" for k in _defaults(BandwidthPolicy))
    return keys


# -- JSON with fixed float formatting ------------------------------------------


def dumps(obj, indent=2) -> str:
    """JSON text with floats at 17 significant digits and NaN/inf as null."""
    return _encode(obj, 0, indent) + "\n"


def _encode(obj, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, level + 1, indent)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, level + 1, indent) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, level + 1, indent) for v in obj) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


# -- fit reports ---------------------------------------------------------------

REPORT_FORMAT = "simm-fit/1"


def fit_report(fit, level=None) -> dict:
    """Structured report of a completed fit.

    The link table is the 101-point grid over the trimming window with
    pointwise intervals; run time is left out so reports are reproducible.
    """
    from .errors import NumericalError
    from .inference import coordinate_intervals, pointwise_band

    level = fit.diagnostics.get("level", 0.95) if level is None else level
    grid = fit.link.grid
    lower = np.full(grid.shape, np.nan)
    upper = np.full(grid.shape, np.nan)
    if fit.smoother is not None and fit.dataset is not None:
        index = fit.dataset.index(fit.beta)
        for k, u in enumerate(grid):
            try:
                band = pointwise_band(fit.smoother, index, u, fit.variance, level)
            except NumericalError:
                continue
            lower[k], upper[k] = float(band.lower), float(band.upper)
    diagnostics = {k: v for k, v in fit.diagnostics.items() if k != "elapsed_seconds"}
    return {
        "format": REPORT_FORMAT,
        "converged": bool(fit.converged),
        "iterations": len(fit.trace),
        "n": fit.n,
        "m": fit.m,
        "p": fit.p,
        "beta": fit.beta.beta,
        "anchor": fit.beta.r,
        "level": level,
        "beta_ci": coordinate_intervals(fit, level),
        "sigma_alpha_sq": fit.variance.sigma_alpha_sq,
        "sigma_eps_sq": fit.variance.sigma_eps_sq,
        "bandwidth": fit.h,
        "kernel": fit.kernel,
        "window": [fit.window.lo, fit.window.hi],
        "covariance": fit.covariance,
        "A_hat": fit.A_hat,
        "B_hat": fit.B_hat,
        "trace": [list(row) for row in fit.trace],
        "link_table": {
            "u": grid,
            "g": fit.link.g,
            "g_prime": fit.link.g_prime,
            "lower": lower,
            "upper": upper,
        },
        "diagnostics": diagnostics,
    }


@dataclasses.dataclass(frozen=True)
class SavedFit:
    """The parts of a fit report needed for contrast queries."""

    beta: object
    covariance: np.ndarray
    level: float
    converged: bool


def load_fit(path) -> SavedFit:
    from .model import IndexCoefficient

    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != REPORT_FORMAT:
        raise DataError(f"{path}: not a {REPORT_FORMAT} report")
    try:
        beta = IndexCoefficient(np.array(doc["beta"], dtype=float), int(doc["anchor"]))
        cov = np.array(doc["covariance"], dtype=float)
        return SavedFit(beta, cov, float(doc["level"]), bool(doc["converged"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed report ({exc})") from None
