"""Point estimates for the Laplace approximation of logistic-normal emissions.

The same code serves the topical parameter (scale ``tau0``, dimension V) and
the spatial parameter (scale ``rho0``, dimension M). All estimators return
the logistic form, i.e. a probability vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

_INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class CountContext:
    current_counts: np.ndarray
    total: float
    historical_counts: np.ndarray
    prior_probs: np.ndarray
    scale: float

    def __post_init__(self):
        for name in ("current_counts", "historical_counts", "prior_probs"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.current_counts)
        if len(self.historical_counts) != n or len(self.prior_probs) != n:
            raise ValueError("count vectors and prior must share one dimension")
        if np.any(self.current_counts < 0) or np.any(self.historical_counts < 0):
            raise ValueError("counts must be nonnegative")
        if not math.isclose(self.current_counts.sum(), self.total, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError("total must equal the sum of current counts")
        if np.any(self.prior_probs < 0) or abs(self.prior_probs.sum() - 1.0) > 1e-9:
            raise ValueError("prior_probs must be a probability vector")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def _require_total(ctx: CountContext) -> None:
    if ctx.total <= 0:
        raise ValueError("estimator undefined for an empty cluster (total = 0)")


def pseudo_counts(ctx: CountContext) -> np.ndarray:
    """Prior expressed as counts: ``n' = total * prior``."""
    _require_total(ctx)
    return ctx.total * ctx.prior_probs


def solution1(ctx: CountContext) -> np.ndarray:
    _require_total(ctx)
    return ctx.current_counts / ctx.total


def solution2(ctx: CountContext) -> np.ndarray:
    mass = ctx.historical_counts.sum()
    if mass <= 0:
        raise ValueError("solution2 needs a nonempty history")
    return ctx.historical_counts / mass


def solution3(ctx: CountContext) -> np.ndarray:
    """Closed form after the Lambert-W cancellation.

    Weight ``1/(1+scale)`` sits on the prior pseudo-counts and
    ``scale/(1+scale)`` on the current counts.
    """
    _require_total(ctx)
    scale = ctx.scale
    prior_part = pseudo_counts(ctx) / (1.0 + scale)
    return (prior_part + ctx.current_counts * (scale / (1.0 + scale))) / ctx.total


def estimate(solution, current, total, history, prior, scale) -> np.ndarray:
    """Hot-path estimator on raw arrays.

    Falls back to ``prior`` when the chosen solution has no data: an empty
    current epoch for S1/S3, an empty history for S2. For a brand-new cluster
    the prior is uniform, which is the logistic transform of the zero mean.
    """
    if solution == "S2":
        mass = history.sum()
        return history / mass if mass > 0 else prior
    if total <= 0:
        return prior
    if solution == "S1":
        return current / total
    w = scale / (1.0 + scale)
    return prior * (1.0 - w) + current * (w / total)


def lambert_w0(x: float) -> float:
    """Principal branch of Lambert's W via Halley iteration."""
    x = float(x)
    if math.isnan(x) or x < -_INV_E:
        raise ValueError(f"lambert_w0 undefined for x < -1/e (got {x!r})")
    if x == 0.0:
        return 0.0
    if x == -_INV_E:
        return -1.0
    if math.isinf(x):
        return math.inf
    if x < -0.32:
        # branch-point series in p = sqrt(2(ex + 1))
        p = math.sqrt(max(2.0 * (math.e * x + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif abs(x) < 0.25:
        w = x - x * x + 1.5 * x ** 3
    elif x < 3.0:
        w = math.log1p(x) * 0.8
    else:
        l1 = math.log(x)
        l2 = math.log(l1)
        w = l1 - l2 + l2 / l1
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w_new = w - step
        if w_new < -1.0:
            w_new = (w - 1.0) / 2.0
        if abs(w_new - w) <= 1e-16 * (1.0 + abs(w_new)):
            w = w_new
            break
        w = w_new
    # final Newton polish; Halley can stop one ulp short near the branch point
    ew = math.exp(w)
    if w > -1.0:
        w_new = w - (w * ew - x) / (ew * (w + 1.0))
        if abs(w_new * math.exp(w_new) - x) <= abs(w * ew - x):
            w = w_new
    return max(w, -1.0)


def _stationarity_terms(ctx: CountContext):
    """Coefficients of ``a_i - b*x_i = exp(x_i)`` per component.

    ``a_i = (2*log(prior_i) + n_i*scale^2) / (scale^2 * n)`` and
    ``b = 2 / (scale^2 * n)``; this is the form whose solution is the
    Lambert-W expression that solution3 linearises.
    """
    r2n = ctx.scale ** 2 * ctx.total
    with np.errstate(divide="ignore"):
        log_prior = np.log(ctx.prior_probs)
    a = (2.0 * log_prior + ctx.current_counts * ctx.scale ** 2) / r2n
    return a, 2.0 / r2n


def stationarity_residual(ctx: CountContext, root) -> np.ndarray:
    a, b = _stationarity_terms(ctx)
    root = np.asarray(root, dtype=np.float64)
    out = np.zeros_like(root)
    live = np.isfinite(a)
    out[live] = a[live] - b * root[live] - np.exp(root[live])
    return out


def fixed_point_root(ctx: CountContext) -> np.ndarray:
    """Per-component root of the stationarity condition (natural scale).

    Components with a zero prior get ``-inf`` (the limit of the root).
    Raises ``RuntimeError`` when a bracket cannot be established.
    """
    _require_total(ctx)
    a, b = _stationarity_terms(ctx)
    roots = np.full(len(a), -np.inf)
    for i, ai in enumerate(a):
        if not np.isfinite(ai):
            continue

        def g(p, ai=ai):
            return math.exp(p) + b * p - ai

        lo = min(-1.0, (ai - 1.0) / b)
        hi = max(0.0, math.log(ai)) if ai > 0 else ai / b
        glo, ghi = g(lo), g(hi)
        if glo > 0 or ghi < 0:
            raise RuntimeError(f"cannot bracket stationarity root for component {i}")
        root = lo if glo == 0 else hi if ghi == 0 else brentq(
            g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
        for _ in range(3):
            ep = math.exp(root)
            root_new = root - (ep + b * root - ai) / (ep + b)
            if abs(g(root_new)) >= abs(g(root)):
                break
            root = root_new
        roots[i] = root
    return roots


def fixed_point_oracle(ctx: CountContext) -> np.ndarray:
    """Numerical optimum of the Laplace objective, renormalised to the simplex.

    Test oracle only; solution3 is the hot-path estimator.
    """
    v = np.exp(fixed_point_root(ctx))
    return v / v.sum()


def envelope(ctx: CountContext) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise [min, max] of current and prior proportions."""
    a = ctx.current_counts / ctx.total
    b = pseudo_counts(ctx) / ctx.total
    return np.minimum(a, b), np.maximum(a, b)
