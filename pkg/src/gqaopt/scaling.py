"""Power-plus-constant loss curves: fitting, prediction, inversion, context diagnostics.

Two curve families share one fitting core, ``y = A * x**k + c`` with ``A > 0``:

* loss vs. model size, ``(a / N)**b + E``  (``A = a**b``, ``k = -b``)
* loss vs. head count, ``a * n**b + c``

The core scans the asymptote on a grid, solves the remaining two coefficients
by least squares on ``log(y - c)`` vs ``log(x)``, refines the asymptote with a
bounded scalar search and finishes with a Nelder-Mead polish in raw loss space.
"""

from __future__ import annotations

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .config import AttentionHeads, SizeField
from .errors import DegenerateDataError, GQAOptError, InfeasibleTargetError

MIN_POINTS = 4
FLATNESS_FROM = 8192
CHINCHILLA_RATIO = 20

HeadAxis = Literal["n_h", "n_kv"]


@dataclass(frozen=True)
class LossRecord:
    heads: AttentionHeads
    n_params_non_embedding: float
    n_params_total: float
    context_length: int
    train_tokens: float
    loss: float
    model_id: str = ""
    n_layers: int = 0
    hidden_size: int = 0
    head_dim: int = 64
    vocab_size: int = 50304

    def __post_init__(self):
        if not self.loss > 0:
            raise GQAOptError(f"loss must be positive ({self.model_id}: {self.loss})")
        if self.n_params_non_embedding > self.n_params_total:
            raise GQAOptError(f"non-embedding count exceeds total ({self.model_id})")

    def size(self, size_field: SizeField = "nonemb") -> float:
        if size_field == "nonemb":
            return self.n_params_non_embedding
        if size_field == "total":
            return self.n_params_total
        raise GQAOptError(f"unknown size field {size_field!r}")


@dataclass(frozen=True)
class FitDiagnostics:
    r_squared: float
    rmse: float
    n_points: int
    residuals: tuple = ()


@dataclass(frozen=True)
class ScalingCurve:
    a: float
    b: float
    E: float
    heads: AttentionHeads | None = None
    fit_domain: tuple = (0.0, math.inf)
    size_field: SizeField = "nonemb"
    context_length: int | None = None
    diagnostics: FitDiagnostics | None = None

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.E >= 0):
            raise GQAOptError(f"invalid curve coefficients a={self.a}, b={self.b}, E={self.E}")


@dataclass(frozen=True)
class HeadLawCurve:
    a: float
    b: float
    c: float
    axis: HeadAxis = "n_h"

    def predict(self, x):
        return self.a * np.asarray(x, dtype=float) ** self.b + self.c


@dataclass(frozen=True)
class JointHeadFit:
    curves: tuple
    diagnostics: tuple
    threshold: float = 0.999

    @property
    def c(self) -> float:
        return self.curves[0].c

    @property
    def flagged(self) -> bool:
        """True when any group fits worse than the R^2 threshold."""
        return any(d.r_squared < self.threshold for d in self.diagnostics)


@dataclass(frozen=True)
class ContextDeltaSeries:
    baseline_id: str
    contexts: tuple
    deltas: tuple
    flatness: float | None = None

    def as_dict(self) -> dict:
        return dict(zip(self.contexts, self.deltas))


# -- fitting core ----------------------------------------------------------

def _diagnostics(y, pred) -> FitDiagnostics:
    resid = y - pred
    sse = float(np.sum(resid ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else (1.0 if sse == 0 else -math.inf)
    return FitDiagnostics(r2, math.sqrt(sse / len(y)), len(y), tuple(float(r) for r in resid))


def _loglinear(lx, y, c):
    """Least-squares (log A, k) for log(y - c) = log A + k log x."""
    z = np.log(y - c)
    k, logA = np.polyfit(lx, z, 1)
    return logA, k


def _sse(lx, y, logA, k, c):
    return float(np.sum((y - (np.exp(logA + k * lx) + c)) ** 2))


def _asymptote_grid(y_min: float, c_floor: float, n: int = 240) -> np.ndarray:
    span = y_min - c_floor
    gaps = span * np.geomspace(1.0, 1e-7, n)
    return y_min - gaps


def _profile(groups, c):
    total = 0.0
    for lx, y in groups:
        logA, k = _loglinear(lx, y, c)
        total += _sse(lx, y, logA, k, c)
    return total


def _fit_groups(groups, c_floor: float = 0.0):
    """Shared-asymptote fit of ``A_g x**k_g + c`` over groups of (log x, y)."""
    y_min = min(float(y.min()) for _, y in groups)
    if y_min <= c_floor:
        raise DegenerateDataError("all losses must exceed the asymptote floor")
    grid = _asymptote_grid(y_min, c_floor)
    scores = np.array([_profile(groups, c) for c in grid])
    i = int(np.nanargmin(scores))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    c = grid[i]
    if hi > lo:
        res = minimize_scalar(lambda c: _profile(groups, c), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-14 * max(1.0, abs(y_min))})
        if res.fun <= scores[i]:
            c = float(res.x)
    start = [c]
    for lx, y in groups:
        start.extend(_loglinear(lx, y, c))

    def objective(p):
        c = p[0]
        if c < c_floor or c >= y_min:
            return math.inf
        return sum(_sse(lx, y, p[1 + 2 * g], p[2 + 2 * g], c) for g, (lx, y) in enumerate(groups))

    base = objective(start)
    scale = sum(float(np.sum(y ** 2)) for _, y in groups)
    p = np.array(start)
    if base > 1e-28 * scale:
        res = minimize(objective, p, method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-18 * scale, "maxiter": 20000,
                                "maxfev": 20000, "adaptive": len(start) > 3})
        if res.fun < base:
            p = res.x
    c = float(p[0])
    return c, [(float(p[1 + 2 * g]), float(p[2 + 2 * g])) for g in range(len(groups))]


def _check_trend(x, y, what: str):
    if len(y) < MIN_POINTS:
        raise DegenerateDataError(f"need at least {MIN_POINTS} points for a {what} fit, got {len(y)}")
    if np.ptp(y) <= 1e-12 * abs(float(y.max())):
        raise DegenerateDataError(f"losses are constant; the {what} exponent is unidentifiable")
    slope = np.polyfit(np.log(x), y, 1)[0]
    if slope >= 0:
        raise DegenerateDataError(f"losses do not decrease with {what}; refusing to fit")


def fit_power_plus_constant(x, y, c_floor: float = 0.0):
    """Fit ``y = A * x**k + c``; returns (A, k, c, FitDiagnostics)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c, [(logA, k)] = _fit_groups([(np.log(x), y)], c_floor)
    A = math.exp(logA)
    return A, k, c, _diagnostics(y, A * x ** k + c)


# -- size scaling ----------------------------------------------------------

def _group_key(r: LossRecord):
    return (r.heads, r.context_length)


def fit_power_law(records: Sequence[LossRecord], size_field: SizeField = "nonemb",
                  chinchilla: bool = False) -> tuple[ScalingCurve, FitDiagnostics]:
    """Fit ``(a / N)**b + E`` to records of one head configuration and context length.

    Records must share ``train_tokens`` unless ``chinchilla`` asserts that each was
    trained on a fixed tokens-per-parameter ratio.
    """
    records = list(records)
    if len(records) < MIN_POINTS:
        raise DegenerateDataError(f"need at least {MIN_POINTS} records, got {len(records)}")
    keys = {_group_key(r) for r in records}
    if len(keys) > 1:
        raise GQAOptError(f"records mix head configurations / context lengths: {sorted(map(str, keys))}")
    if not chinchilla and len({r.train_tokens for r in records}) > 1:
        raise GQAOptError("records have mismatched train_tokens; pass chinchilla=True "
                          "if they follow a fixed tokens-per-parameter ratio")
    N = np.array([r.size(size_field) for r in records], dtype=float)
    y = np.array([r.loss for r in records], dtype=float)
    if N.max() < 10 * N.min():
        raise DegenerateDataError(
            f"model sizes span {N.max() / N.min():.3g}x, less than one decade")
    _check_trend(N, y, "model size")
    A, k, E, diag = fit_power_plus_constant(N, y)
    if k >= 0:
        raise DegenerateDataError("fitted exponent is not decreasing in model size")
    b = -k
    a = A ** (1.0 / b)
    heads, ctx = next(iter(keys))
    curve = ScalingCurve(a, b, E, heads, (float(N.min()), float(N.max())),
                         size_field, ctx, diag)
    return curve, diag


def fit_all(records: Iterable[LossRecord], size_field: SizeField = "nonemb",
            chinchilla: bool = False):
    """Fit one curve per (heads, context_length) group.

    Returns (curves, failures) where failures maps each skipped group to its error.
    """
    groups = defaultdict(list)
    for r in records:
        groups[_group_key(r)].append(r)
    if not chinchilla:
        mixed = [k for k, rs in sorted(groups.items())
                 if len({r.train_tokens for r in rs}) > 1]
        if mixed:
            names = ", ".join(f"heads {h} @ T={t}" for h, t in mixed)
            raise GQAOptError(f"mismatched train_tokens in groups: {names}; pass the "
                              "chinchilla-ratio tag if tokens scale with model size")
    curves, failures = [], {}
    for key in sorted(groups):
        try:
            curves.append(fit_power_law(groups[key], size_field, chinchilla)[0])
        except DegenerateDataError as exc:
            failures[key] = exc
    return curves, failures


def predict_loss(curve: ScalingCurve, n_params, warn: bool = True):
    n = np.asarray(n_params, dtype=float)
    if np.any(n <= 0):
        raise GQAOptError("model size must be positive")
    lo, hi = curve.fit_domain
    if warn and np.any((n < lo) | (n > hi)):
        warnings.warn(f"predicting outside the fitted size range [{lo:.3g}, {hi:.3g}]",
                      stacklevel=2)
    out = (curve.a / n) ** curve.b + curve.E
    return float(out) if out.ndim == 0 else out


def invert_curve(curve: ScalingCurve, target_loss: float) -> float:
    """Smallest model size whose predicted loss reaches ``target_loss``."""
    gap = target_loss - curve.E
    if not gap > 0:
        raise InfeasibleTargetError(
            f"target loss {target_loss} is not above the asymptote {curve.E} "
            f"(gap {gap:.6g}) for heads {curve.heads}", gap=gap)
    return curve.a / gap ** (1.0 / curve.b)


# -- head-count scaling ----------------------------------------------------

def _head_xy(records: Sequence[LossRecord], axis: HeadAxis):
    records = list(records)
    if len({r.context_length for r in records}) > 1:
        raise GQAOptError("head-law records must share one context length")
    x = np.array([getattr(r.heads, axis) for r in records], dtype=float)
    y = np.array([r.loss for r in records], dtype=float)
    return x, y


def _check_head_data(x, y):
    _check_trend(x, y, "head count")
    if len(np.unique(x)) < 3:
        raise DegenerateDataError("need at least three distinct head counts")


def fit_head_law_arrays(x, y, axis: HeadAxis = "n_h") -> tuple[HeadLawCurve, FitDiagnostics]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_head_data(x, y)
    A, k, c, diag = fit_power_plus_constant(x, y)
    return HeadLawCurve(A, k, c, axis), diag


def fit_head_law(records: Sequence[LossRecord], axis: HeadAxis = "n_h"):
    """Fit ``a * n**b + c`` where n is the chosen head count."""
    return fit_head_law_arrays(*_head_xy(records, axis), axis=axis)


def joint_fit_arrays(groups: Sequence[tuple], axis: HeadAxis = "n_h",
                     threshold: float = 0.999) -> JointHeadFit:
    """Head-law fit of several (x, y) groups constrained to one asymptote."""
    if len(groups) < 2:
        raise DegenerateDataError("a shared-constant fit needs at least two groups")
    arrays = []
    for x, y in groups:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        _check_head_data(x, y)
        arrays.append((x, y))
    c, params = _fit_groups([(np.log(x), y) for x, y in arrays])
    curves, diags = [], []
    for (x, y), (logA, k) in zip(arrays, params):
        curve = HeadLawCurve(math.exp(logA), k, c, axis)
        curves.append(curve)
        diags.append(_diagnostics(y, curve.predict(x)))
    return JointHeadFit(tuple(curves), tuple(diags), threshold)


def joint_fit_shared_constant(groups: Sequence[Sequence[LossRecord]],
                              axis: HeadAxis = "n_h") -> JointHeadFit:
    return joint_fit_arrays([_head_xy(g, axis) for g in groups], axis)


# -- context-length diagnostics --------------------------------------------

def relative_delta_series(series: Mapping[int, float], baseline: Mapping[int, float],
                          baseline_id: str = "baseline",
                          flat_from: int = FLATNESS_FROM) -> ContextDeltaSeries:
    """Relative loss difference to a baseline at every shared context length."""
    shared = sorted(set(series) & set(baseline))
    if not shared:
        raise GQAOptError("series and baseline share no context lengths")
    deltas = tuple((series[t] - baseline[t]) / baseline[t] for t in shared)
    tail = [d for t, d in zip(shared, deltas) if t >= flat_from]
    flatness = (max(tail) - min(tail)) if tail else None
    return ContextDeltaSeries(baseline_id, tuple(shared), deltas, flatness)
