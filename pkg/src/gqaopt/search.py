"""Cost-optimal head-configuration search, sweeps, and a grid-scan cross-check."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import (AttentionHeads, FamilyTable, FfnMode, ModelShape, SizeField, count_params,
                     fixed_heads, nearest_concrete_config, param_terms, resolve_arrays,
                     resolve_shape_from_size)
from .costs import (HardwareCostParams, InferenceCost, Objective, inference_cost,
                    objective_values, tokens_under_budget)
from .errors import AllInfeasibleError, GQAOptError, InfeasibleTargetError, OutOfRangeError
from .scaling import CHINCHILLA_RATIO, ScalingCurve, invert_curve, predict_loss

EXTRAPOLATION_FACTOR = 100.0


@dataclass(frozen=True)
class OptimizationQuery:
    target_loss: float
    context_length: int
    cost_params: HardwareCostParams = HardwareCostParams()
    objective: Objective = Objective.HARDWARE

    def __post_init__(self):
        if not math.isfinite(self.target_loss):
            raise GQAOptError(f"target loss must be finite, got {self.target_loss}")
        if self.context_length < 0:
            raise GQAOptError(f"context length must be >= 0, got {self.context_length}")
        object.__setattr__(self, "objective", Objective(self.objective))


@dataclass(frozen=True)
class CandidateRow:
    heads: AttentionHeads
    n_params: float | None = None
    cost_params_count: float | None = None
    shape: ModelShape | None = None
    cost: InferenceCost | None = None
    z: float = math.inf
    status: str = "ok"
    extrapolated: bool = False
    gap: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == "ok"

    def sort_key(self):
        return (self.z, self.heads.n_kv, self.heads.n_h, self.n_params or math.inf)


@dataclass(frozen=True)
class OptimalChoice:
    heads: AttentionHeads
    n_params: float
    fractional_shape: ModelShape
    concrete_shape: ModelShape
    cost: InferenceCost
    z_value: float
    candidates: tuple
    query: OptimizationQuery

    def ranked(self) -> list[CandidateRow]:
        return sorted(self.candidates, key=CandidateRow.sort_key)


def _select(curves: Sequence[ScalingCurve], candidates) -> list[ScalingCurve]:
    if candidates is None:
        return list(curves)
    by_heads = {c.heads: c for c in curves}
    chosen = []
    for h in candidates:
        if h in by_heads:
            chosen.append(by_heads[h])
        else:
            warnings.warn(f"no scaling curve for candidate {h}; skipping", stacklevel=3)
    return chosen


def _evaluate(curve, n_star, query, family, mode, cost_size_field):
    heads = curve.heads
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        shape = resolve_shape_from_size(n_star, family, fixed_heads(heads), mode,
                                        curve.size_field)
    n_cost = count_params(shape, heads, mode).size(cost_size_field)
    cost = inference_cost(n_cost, shape, heads, query.context_length)
    z = float(objective_values(cost.mem_total, cost.flops_total, query.cost_params,
                               query.objective))
    return shape, n_cost, cost, z


def _is_extrapolated(curve, n):
    lo, hi = curve.fit_domain
    return n > hi * EXTRAPOLATION_FACTOR or n < lo / EXTRAPOLATION_FACTOR


def _choose(rows, query, mode_note="") -> OptimalChoice:
    feasible = [r for r in rows if r.feasible]
    if not feasible:
        gaps = [r.gap for r in rows if r.gap is not None]
        if gaps and all(g <= 0 for g in gaps) and len(gaps) == len(rows):
            best = max(gaps)
            raise AllInfeasibleError(
                f"no candidate reaches loss {query.target_loss}; smallest gap to an "
                f"asymptote is {best:.6g} (lowest reachable loss is above "
                f"{query.target_loss - best:.6g})", gap=best)
        raise AllInfeasibleError(
            f"no candidate reaches loss {query.target_loss} within the supported size range"
            f"{mode_note}", gap=max(gaps) if gaps else None)
    win = min(feasible, key=CandidateRow.sort_key)
    return OptimalChoice(win.heads, win.n_params, win.shape, nearest_concrete_config(win.shape),
                         win.cost, win.z, tuple(rows), query)


def optimize(query: OptimizationQuery, curves: Sequence[ScalingCurve], family: FamilyTable,
             mode: FfnMode = FfnMode.TABLE2, cost_size_field: SizeField = "total",
             candidates: Sequence[AttentionHeads] | None = None,
             loss_offset: float = 0.0) -> OptimalChoice:
    """Pick the head configuration and size reaching ``query.target_loss`` at least cost.

    Each curve is inverted for its smallest sufficient size, the size is resolved
    to a fractional shape under that curve's heads, and costs are evaluated at
    the query context length. ``loss_offset`` is added to every predicted loss
    (e.g. a measured shift between the fitting and deployment context lengths).
    """
    selected = _select(curves, candidates)
    if not selected:
        raise GQAOptError("no scaling curves to search over")
    target = query.target_loss - loss_offset
    rows = []
    for curve in selected:
        try:
            n_star = invert_curve(curve, target)
        except InfeasibleTargetError as exc:
            rows.append(CandidateRow(curve.heads, status="infeasible-target", gap=exc.gap))
            continue
        gap = target - curve.E
        try:
            shape, n_cost, cost, z = _evaluate(curve, n_star, query, family, mode,
                                               cost_size_field)
        except OutOfRangeError as exc:
            rows.append(CandidateRow(curve.heads, n_star, status=f"out-of-range-{exc.bound}",
                                     gap=gap))
            continue
        rows.append(CandidateRow(curve.heads, n_star, n_cost, shape, cost, z, "ok",
                                 _is_extrapolated(curve, n_star), gap))
    return _choose(rows, query)


def _grid_bounds(curve: ScalingCurve, family: FamilyTable, span: float):
    lo, hi = curve.fit_domain
    flo, fhi = family.size_bounds()
    lo = lo / span if math.isfinite(lo) and lo > 0 else flo
    hi = hi * span if math.isfinite(hi) else fhi
    # cover every size the family can resolve, not only the widened fit range
    return min(lo, flo), max(hi, fhi)


def _scan(curve, grid, target, query, family, mode, cost_size_field):
    loss = predict_loss(curve, grid, warn=False)
    L, d, dff = resolve_arrays(grid, family, fixed_heads(curve.heads), mode, curve.size_field)
    h = curve.heads
    terms = param_terms(L, d, dff, h.n_h, h.n_kv, family.head_dim, family.vocab_size, mode)
    n_cost = terms.size(cost_size_field)
    T = query.context_length
    mem = n_cost + 2 * T * L * family.head_dim * h.n_kv
    flops = 2 * n_cost + 4 * T * L * family.head_dim * h.n_h
    z = objective_values(mem, flops, query.cost_params, query.objective)
    ok = (loss <= target) & np.isfinite(z)
    return np.where(ok, z, np.inf)


def brute_force_check(query: OptimizationQuery, curves: Sequence[ScalingCurve],
                      family: FamilyTable, mode: FfnMode = FfnMode.TABLE2,
                      cost_size_field: SizeField = "total", n_points: int = 1024,
                      span: float = 10.0, zoom: bool = True,
                      candidates: Sequence[AttentionHeads] | None = None,
                      loss_offset: float = 0.0) -> OptimalChoice:
    """Exhaustive scan of candidates x log-spaced sizes, minimizing cost subject to loss.

    Does not invert curves. The grid spans each curve's fitted size range widened
    by ``span`` on both sides, joined with the family's supported size range; with
    ``zoom`` a second grid of the same density is laid over the two cells around
    each candidate's best point.
    """
    selected = _select(curves, candidates)
    if not selected:
        raise GQAOptError("no scaling curves to search over")
    target = query.target_loss - loss_offset
    rows = []
    for curve in selected:
        lo, hi = _grid_bounds(curve, family, span)
        grid = np.geomspace(lo, hi, n_points)
        z = _scan(curve, grid, target, query, family, mode, cost_size_field)
        i = int(np.argmin(z))
        if not np.isfinite(z[i]):
            gap = target - curve.E
            status = "infeasible-target" if gap <= 0 else "no-feasible-grid-point"
            rows.append(CandidateRow(curve.heads, status=status, gap=gap))
            continue
        n_best = grid[i]
        if zoom:
            fine = np.geomspace(grid[max(i - 1, 0)], grid[min(i + 1, n_points - 1)], n_points)
            zf = _scan(curve, fine, target, query, family, mode, cost_size_field)
            j = int(np.argmin(zf))
            if zf[j] <= z[i]:
                n_best = fine[j]
        n_best = float(n_best)
        shape, n_cost, cost, zv = _evaluate(curve, n_best, query, family, mode, cost_size_field)
        rows.append(CandidateRow(curve.heads, n_best, n_cost, shape, cost, zv, "ok",
                                 _is_extrapolated(curve, n_best), target - curve.E))
    return _choose(rows, query, " of the scanned grid")


# -- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    losses: tuple
    contexts: tuple
    cells: tuple  # rows of OptimalChoice or None (infeasible)
    errors: tuple = ()

    def heads_matrix(self):
        return [[c.heads if c else None for c in row] for row in self.cells]

    def size_matrix(self):
        return [[c.n_params if c else None for c in row] for row in self.cells]


def sweep(loss_axis: Sequence[float], context_axis: Sequence[int],
          curves: Sequence[ScalingCurve], family: FamilyTable,
          cost_params: HardwareCostParams = HardwareCostParams(),
          objective: Objective = Objective.HARDWARE, mode: FfnMode = FfnMode.TABLE2,
          cost_size_field: SizeField = "total") -> SweepGrid:
    """Optimize every (target loss, context length) cell.

    Axes are normalized: losses descending (rows), contexts ascending (columns).
    Infeasible cells hold ``None`` and their messages are kept in ``errors``.
    """
    if not loss_axis or not context_axis:
        raise GQAOptError("sweep axes must be non-empty")
    losses = tuple(sorted(set(float(x) for x in loss_axis), reverse=True))
    contexts = tuple(sorted(set(int(t) for t in context_axis)))
    cells, errors = [], []
    for loss in losses:
        row, err_row = [], []
        for T in contexts:
            q = OptimizationQuery(loss, T, cost_params, objective)
            try:
                row.append(optimize(q, curves, family, mode, cost_size_field))
                err_row.append(None)
            except AllInfeasibleError as exc:
                row.append(None)
                err_row.append(str(exc))
        cells.append(tuple(row))
        errors.append(tuple(err_row))
    return SweepGrid(losses, contexts, tuple(cells), tuple(errors))


def monotone_violations(grid: SweepGrid) -> list[str]:
    """Cells where the winning heads grow with context length or shrink as the target tightens."""
    out = []
    H = grid.heads_matrix()
    for i, row in enumerate(H):
        for j in range(len(row) - 1):
            a, b = row[j], row[j + 1]
            if a and b and (b.n_h > a.n_h or b.n_kv > a.n_kv):
                out.append(f"L*={grid.losses[i]}: {a} at T={grid.contexts[j]} -> "
                           f"{b} at T={grid.contexts[j + 1]}")
    for j in range(len(grid.contexts)):
        for i in range(len(H) - 1):
            a, b = H[i][j], H[i + 1][j]
            if a and b and (b.n_h < a.n_h or b.n_kv < a.n_kv):
                out.append(f"T={grid.contexts[j]}: {a} at L*={grid.losses[i]} -> "
                           f"{b} at L*={grid.losses[i + 1]}")
    return out


# -- training-budget alignment ---------------------------------------------

@dataclass(frozen=True)
class AlignmentRow:
    label: str
    heads: AttentionHeads
    n_params: float
    train_tokens: float
    chinchilla_tokens: float

    @property
    def chinchilla_ratio(self) -> float:
        return self.train_tokens / self.chinchilla_tokens


def aligned_budget_report(configs: Sequence[tuple], flops_budget: float, train_context: int,
                          mode: FfnMode = FfnMode.TABLE2, size_field: SizeField = "total",
                          labels: Sequence[str] | None = None) -> list[AlignmentRow]:
    """Training tokens each (shape, heads) config may use under one FLOPs budget."""
    if not train_context > 0:
        raise GQAOptError(f"train_context must be positive, got {train_context}")
    rows = []
    for i, (shape, heads) in enumerate(configs):
        n = count_params(shape, heads, mode).size(size_field)
        D = tokens_under_budget(flops_budget, n, shape, heads, train_context)
        label = labels[i] if labels else f"L{shape.n_layers}-d{shape.hidden_size}-{heads}"
        rows.append(AlignmentRow(label, heads, n, D, CHINCHILLA_RATIO * n))
    return rows
