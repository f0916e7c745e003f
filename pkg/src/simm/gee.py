"""Estimating equations for the index direction and the alternating fit.

For a link evaluator ``link`` (anything with ``evaluate(u, inside)``
returning ``(g(u), g'(u))``) the quasi-score in the free coordinates is

    Q = n^-1 sum_i J^T X_i^T G'_i W_i V^-1 (Y_i - G_i)

and the scoring matrix is

    B = n^-1 sum_i J^T X_i^T G'_i^2 W_i V^-1 X_i J

with ``G'_i``, ``W_i`` diagonal. The products are formed exactly in this
order, so the trimming weight zeroes rows after ``V^-1`` has mixed the
residuals of all occasions of a subject.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy import optimize

from .errors import DataError, DegenerateAnchor, InsufficientLocalData, NonIdentifiableDirection
from .kernels import get_kernel
from .model import (
    FitConfig,
    IndexCoefficient,
    LongitudinalDataset,
    TrimmingWeight,
    VarianceComponents,
    as_index,
    best_anchor,
    normalize,
    pooled_ols_direction,
)
from .reparam import jacobian
from .smoother import LinkEstimate, LocalLinearSmoother, link_estimate, select_bandwidth
from .variance import ResidualSet, estimate_variances

log = logging.getLogger(__name__)

# Relative eigenvalue floor below which the symmetrized B is treated as singular.
SINGULAR_RTOL = 1e-12
# Increments shorter than this skip the objective guard: the guard targets
# overshoot, and near the root the scoring direction need not descend the
# weighted objective when trimming makes W V^-1 asymmetric.
GUARD_MIN_STEP = 1e-3


class KnownLink:
    """Wraps a true link ``g`` and its derivative as a link evaluator."""

    def __init__(self, g, dg):
        self.g = g
        self.dg = dg

    def evaluate(self, u, inside=None):
        u = np.asarray(u, dtype=float)
        return np.asarray(self.g(u), dtype=float), np.asarray(self.dg(u), dtype=float)


def build_V_inverse(vc: VarianceComponents) -> np.ndarray:
    """Inverse of the compound-symmetry covariance, in closed form."""
    return vc.inverse()


def subject_mean(terms: np.ndarray) -> np.ndarray:
    """Average over the leading (subject) axis with exactly rounded sums.

    Exact rounding makes the result independent of subject order.
    """
    n = terms.shape[0]
    flat = terms.reshape(n, -1)
    sums = np.array([math.fsum(col) for col in flat.T])
    return sums.reshape(terms.shape[1:]) / n


def weights_at(weight, index) -> np.ndarray:
    """Trimming weights at ``index``.

    ``weight`` is either a :class:`TrimmingWeight`, evaluated at the index
    values, or an array of per-observation weights frozen elsewhere.
    """
    if isinstance(weight, TrimmingWeight):
        return weight(index)
    w = np.asarray(weight, dtype=float)
    if w.shape != np.shape(index):
        raise ValueError(f"weights of shape {w.shape} do not match index shape {np.shape(index)}")
    return w


def _link_at(dataset, beta, link, weight):
    t = dataset.index(beta)
    w = weights_at(weight, t)
    g, gp = link.evaluate(t, w > 0)
    return t, w, g, gp


def score_terms(dataset: LongitudinalDataset, beta: IndexCoefficient, link, Vinv, weight):
    """``(Q, B, R)`` at ``beta`` from a single link evaluation."""
    _, w, g, gp = _link_at(dataset, beta, link, weight)
    J = jacobian(beta)
    X = dataset.X
    resid = dataset.Y - g
    mixed = resid @ Vinv.T  # rows V^-1 e_i
    d = gp * w
    XJ = X @ J  # (n, m, p-1)
    q_terms = np.einsum("ijk,ij->ik", XJ, d * mixed)
    mixed_X = np.einsum("jl,ilk->ijk", Vinv, XJ)
    b_terms = np.einsum("ijk,ij,ijl->ikl", XJ, d * gp, mixed_X)
    r_terms = np.sum(resid * w * mixed, axis=1)
    return subject_mean(q_terms), subject_mean(b_terms), float(subject_mean(r_terms))


def evaluate_Q(dataset, beta, link, vc, weight) -> np.ndarray:
    return score_terms(dataset, beta, link, build_V_inverse(vc), weight)[0]


def evaluate_B(dataset, beta, link, vc, weight) -> np.ndarray:
    return score_terms(dataset, beta, link, build_V_inverse(vc), weight)[1]


def objective(dataset, beta, link, vc, weight) -> float:
    """Weighted residual quadratic form ``n^-1 sum_i e_i^T W_i V^-1 e_i``."""
    _, w, g, _ = _link_at(dataset, beta, link, weight)
    resid = dataset.Y - g
    mixed = resid @ build_V_inverse(vc).T
    return float(subject_mean(np.sum(resid * w * mixed, axis=1)))


@dataclass(frozen=True)
class ScoringState:
    beta: IndexCoefficient
    Q: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    iteration: int = 0
    step_norm: float = np.inf
    objective: float = np.nan
    asymmetry: float = 0.0
    halvings: int = 0
    reanchored: bool = False


def _solve_symmetric(B, J):
    Bs = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(Bs)
    scale = np.max(np.abs(evals)) if evals.size else 0.0
    small = np.abs(evals) <= SINGULAR_RTOL * scale
    if scale == 0.0 or small.any():
        k = int(np.argmin(np.abs(evals)))
        raise NonIdentifiableDirection(J @ evecs[:, k])
    return Bs


def scoring_step(state: ScoringState, dataset, link, vc, weight, max_halvings=10, anchor_floor=0.1):
    """One Fisher-scoring update of the index direction.

    The increment ``J B^-1 Q`` is added to the current direction and the
    result renormalized. If the weighted residual objective goes up, the
    increment is halved (at most ``max_halvings`` times); if no fraction
    helps, the full step is taken.
    """
    beta = state.beta
    Vinv = build_V_inverse(vc)
    Q, B, R0 = score_terms(dataset, beta, link, Vinv, weight)
    J = jacobian(beta)
    Bs = _solve_symmetric(B, J)
    increment = J @ np.linalg.solve(Bs, Q)
    asym = float(np.linalg.norm(B - B.T))

    chosen = normalize(beta.beta + increment, beta.r)
    R_new = np.nan
    halvings = 0
    if np.linalg.norm(increment) > GUARD_MIN_STEP:
        for k in range(max_halvings + 1):
            cand = normalize(beta.beta + increment * 0.5**k, beta.r)
            R_cand = objective(dataset, cand, link, vc, weight)
            if R_cand <= R0:
                chosen, R_new, halvings = cand, R_cand, k
                break
        else:
            log.debug("objective guard found no decrease; taking the full scoring step")
            halvings = -1

    reanchored = False
    if abs(chosen.beta[chosen.r]) < anchor_floor:
        r_new = best_anchor(chosen.beta)
        chosen = normalize(chosen.beta, r_new)
        reanchored = True

    return ScoringState(
        beta=chosen,
        Q=Q,
        B=B,
        iteration=state.iteration + 1,
        step_norm=float(np.linalg.norm(chosen.beta - beta.beta)),
        objective=R_new,
        asymmetry=asym,
        halvings=halvings,
        reanchored=reanchored,
    )


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``trace`` holds one ``(outer_iteration, step_norm, objective)`` tuple per
    outer iteration. ``dataset`` and ``smoother`` are kept for pointwise
    inference and are not serialized.
    """

    beta: IndexCoefficient
    link: LinkEstimate
    variance: VarianceComponents
    A_hat: np.ndarray
    B_hat: np.ndarray
    J_hat: np.ndarray
    covariance: np.ndarray
    trace: list
    converged: bool
    h: float
    window: TrimmingWeight
    weights: np.ndarray
    kernel: str
    n: int
    m: int
    diagnostics: dict = field(default_factory=dict)
    dataset: Optional[LongitudinalDataset] = field(default=None, repr=False)
    smoother: Any = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.beta.p


def initial_direction(dataset: LongitudinalDataset) -> IndexCoefficient:
    raw = pooled_ols_direction(dataset)
    if not np.any(raw):
        raise DataError("pooled least squares gives a zero slope; no initial index direction")
    return normalize(raw, best_anchor(raw))


def _residuals(dataset, beta, h, kernel, w):
    t = dataset.index(beta)
    sm = LocalLinearSmoother(t, dataset.Y, h, kernel, dataset.n)
    fitted = sm.evaluate(t, w > 0)[0]
    return sm, ResidualSet.from_fitted(dataset.Y, fitted)


# Extrapolated iterates farther than this multiple of the plain step are discarded.
ANDERSON_MAX_RATIO = 10.0


def _anderson(history, mapped: IndexCoefficient, step: float) -> IndexCoefficient:
    """Anderson extrapolation of the outer fixed-point map.

    ``history`` holds ``(x_k, F(x_k))`` pairs of unit vectors with a common
    orientation. Returns ``mapped`` itself when there is too little history
    or the extrapolation is implausible.
    """
    if len(history) < 2:
        return mapped
    x = np.array([h[0] for h in history])
    g = np.array([h[1] for h in history])
    f = g - x
    dF = np.diff(f, axis=0).T
    dG = np.diff(g, axis=0).T
    gamma, *_ = np.linalg.lstsq(dF, f[-1], rcond=None)
    raw = g[-1] - dG @ gamma
    if not np.all(np.isfinite(raw)) or raw[mapped.r] <= 0:
        return mapped
    cand = normalize(raw, mapped.r)
    if np.linalg.norm(cand.beta - mapped.beta) > ANDERSON_MAX_RATIO * step:
        return mapped
    return cand


def profile_score(dataset, beta, h, kernel, w, floor=0.0) -> np.ndarray:
    """``Q`` at ``beta`` with the link and variance components re-estimated at ``beta``.

    The alternating fit converges exactly at the roots of this map.
    """
    smoother, residuals = _residuals(dataset, beta, h, kernel, w)
    vc = estimate_variances(residuals).floored(floor)
    return score_terms(dataset, beta, smoother, build_V_inverse(vc), w)[0]


def solve_profile(dataset, start: IndexCoefficient, h, kernel, w, floor=0.0, tol=1e-8):
    """Root of :func:`profile_score` near ``start`` by MINPACK's hybrid method.

    Works in the chart ``beta(v) = normalize(start + J(start) v)``. Returns
    ``None`` when the solver fails or leaves the anchor's half-sphere.
    """
    J0 = jacobian(start)

    def at(v):
        raw = start.beta + J0 @ v
        if raw[start.r] <= 0:
            raise DegenerateAnchor(f"solver left the half-sphere beta[{start.r}] > 0")
        return normalize(raw, start.r)

    def score(v):
        try:
            return profile_score(dataset, at(v), h, kernel, w, floor)
        except (DegenerateAnchor, InsufficientLocalData, NonIdentifiableDirection):
            return np.full(start.p - 1, 1e6)

    sol = optimize.root(score, np.zeros(start.p - 1), method="hybr", options={"xtol": tol * 1e-2})
    if not sol.success or not np.all(np.isfinite(sol.x)) or np.linalg.norm(sol.fun) > 1e3:
        return None
    try:
        return at(sol.x)
    except DegenerateAnchor:
        return None


# Chart radius of the extra starting points tried by the profile rescue.
RESCUE_RADIUS = 0.05
RESCUE_STARTS = 8


def profile_objective(dataset, beta, h, kernel, w, floor=0.0) -> float:
    """``R_n`` at ``beta`` with link and variance components re-estimated there."""
    smoother, residuals = _residuals(dataset, beta, h, kernel, w)
    vc = estimate_variances(residuals).floored(floor)
    return objective(dataset, beta, smoother, vc, w)


def rescue_root(dataset, initial: IndexCoefficient, current: IndexCoefficient, h, kernel, w, floor, tol):
    """Best profile root over several starts, or ``None``.

    Starts are ``initial``, ``current`` and points on a small ring around
    ``initial``; among the roots found the one with the smallest profiled
    ``R_n`` wins.
    """
    J0 = jacobian(initial)
    starts = [initial, current]
    for k in range(RESCUE_STARTS):
        ang = 2 * np.pi * k / RESCUE_STARTS
        raw = initial.beta + RESCUE_RADIUS * (J0 @ _ring_vector(initial.p - 1, ang))
        starts.append(normalize(raw, initial.r))
    best, best_R = None, np.inf
    for start in starts:
        root = solve_profile(dataset, start, h, kernel, w, floor, tol)
        if root is None:
            continue
        if root.r != initial.r or root.beta @ initial.beta < 0:
            root = normalize(root.beta * np.sign(root.beta @ initial.beta), initial.r)
        R = profile_objective(dataset, root, h, kernel, w, floor)
        if R < best_R:
            best, best_R = root, R
    return best


def _ring_vector(dim, ang):
    v = np.zeros(dim)
    v[0] = np.cos(ang)
    if dim > 1:
        v[1] = np.sin(ang)
    return v


def _window(window: TrimmingWeight, flipped: bool) -> TrimmingWeight:
    return TrimmingWeight(window.a, -window.center) if flipped else window


def fit(dataset: LongitudinalDataset, config: Optional[FitConfig] = None, beta_init=None) -> FitResult:
    """Alternate between smoothing the link and scoring the index direction.

    Starts from the normalized pooled least-squares slope (or ``beta_init``)
    and freezes the bandwidth and the trimming window at the initial index
    values. Each observation's trimming weight is re-read from the window
    during the first ``config.weight_refresh`` outer iterations and then
    held fixed, so that points crossing the window edge cannot make the
    iteration cycle. The variance components are refreshed after every
    outer iteration.
    """
    from .inference import inference_matrices
    from .validation import validate

    config = config or FitConfig()
    validate(dataset, config, deep=False)
    kernel = get_kernel(config.kernel)
    beta = initial_direction(dataset) if beta_init is None else as_index(beta_init)

    t0 = dataset.index(beta)
    h = select_bandwidth(dataset, beta, config.bandwidth, kernel)
    window = TrimmingWeight.from_interval(*np.quantile(t0, config.trim_quantiles))
    w = window(t0)
    floor = 1e-10 * max(float(np.var(dataset.Y)), np.finfo(float).tiny)

    smoother, residuals = _residuals(dataset, beta, h, kernel, w)
    vc = estimate_variances(residuals)
    trace = []
    converged = False
    asymmetry = 0.0
    flipped = False
    history = []
    initial = beta
    rescue_at = config.max_iterations // 2 if config.profile_rescue else -1
    rescued = False
    started = time.perf_counter()

    for outer in range(config.max_iterations):
        if outer == rescue_at and outer >= config.weight_refresh:
            root = rescue_root(dataset, initial, beta, h, kernel, w, floor, config.tol)
            if root is not None:
                log.info("alternation slow after %d iterations; restarting from the profile root", outer)
                flipped = flipped != bool(root.beta @ beta.beta < 0)
                beta = root
                history.clear()
                smoother, residuals = _residuals(dataset, beta, h, kernel, w)
                vc = estimate_variances(residuals)
                rescued = True
        vc_w = vc.floored(floor)
        state = ScoringState(beta)
        for _ in range(config.max_scoring_steps):
            prev_r = state.beta.r
            state = scoring_step(state, dataset, smoother, vc_w, w, config.max_halvings, config.anchor_floor)
            asymmetry = max(asymmetry, state.asymmetry)
            if state.reanchored:
                log.info("re-anchored from r=%d to r=%d", prev_r, state.beta.r)
                break
            if state.step_norm < config.tol:
                break
        mapped = state.beta
        sign = 1.0 if mapped.beta @ beta.beta >= 0 else -1.0
        if sign < 0:
            # re-anchoring flipped the orientation, which mirrors the index axis
            flipped = not flipped
        step = float(np.linalg.norm(mapped.beta - sign * beta.beta))
        refreshing = outer + 1 < config.weight_refresh
        if refreshing:
            w = _window(window, flipped)(dataset.index(mapped))
        nxt = mapped
        if step < config.tol:
            converged = True
        elif config.anderson_depth and not (refreshing or state.reanchored):
            history.append((sign * beta.beta, mapped.beta))
            del history[: -(config.anderson_depth + 1)]
            nxt = _anderson(history, mapped, step)
            if nxt is mapped and len(history) > 1:
                history.clear()
        else:
            history.clear()
        beta = nxt
        smoother, residuals = _residuals(dataset, beta, h, kernel, w)
        vc = estimate_variances(residuals)
        trace.append((outer + 1, step, objective(dataset, beta, smoother, vc.floored(floor), w)))
        if converged:
            break

    if not converged:
        log.warning("fit did not converge in %d outer iterations", config.max_iterations)

    window = _window(window, flipped)
    link_table = link_estimate(smoother, beta, window.lo, window.hi)
    vc_w = vc.floored(floor)
    Q_final, _, _ = score_terms(dataset, beta, smoother, build_V_inverse(vc_w), w)
    A_hat, B_hat, J_hat, cov, inf_diag = inference_matrices(dataset, beta, smoother, vc_w, w)
    diagnostics = {
        "B_asymmetry": float(np.linalg.norm(B_hat - B_hat.T)),
        "scoring_B_asymmetry": asymmetry,
        "Q_norm": float(np.linalg.norm(Q_final)),
        "iterations": len(trace),
        "profile_rescue": rescued,
        "level": config.level,
        "elapsed_seconds": time.perf_counter() - started,
        **inf_diag,
    }
    return FitResult(
        beta=beta,
        link=link_table,
        variance=vc,
        A_hat=A_hat,
        B_hat=B_hat,
        J_hat=J_hat,
        covariance=cov,
        trace=trace,
        converged=converged,
        h=h,
        window=window,
        weights=w,
        kernel=kernel.name,
        n=dataset.n,
        m=dataset.m,
        diagnostics=diagnostics,
        dataset=dataset,
        smoother=smoother,
    )
