"""Readers and writers for records, family tables, curve documents, sweeps and series.

Tabular inputs are delimited text (comma, or tab for ``.tsv``); structured outputs
are JSON. Floats are written with ``repr`` precision so documents round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

from .config import Anchor, AttentionHeads, FamilyTable, ModelShape
from .costs import CostBreakdown, InferenceCost
from .errors import GQAOptError, RecordFormatError
from .scaling import FitDiagnostics, LossRecord, ScalingCurve
from .search import CandidateRow, OptimalChoice, SweepGrid

RECORD_COLUMNS = ("model_id", "n_layers", "hidden_size", "head_dim", "vocab_size", "n_heads",
                  "n_kv_heads", "n_params_total", "n_params_nonemb", "context_length",
                  "train_tokens", "loss")
CURVES_FORMAT = "gqaopt-curves"
SWEEP_FORMAT = "gqaopt-sweep"
SERIES_FORMAT = "gqaopt-series"
INFEASIBLE_CELL = "-"

_SUFFIX = {"k": 1024, "m": 1024 ** 2}


def parse_count(text: str) -> int:
    """Integer with an optional binary K/M suffix: '8K' -> 8192."""
    s = str(text).strip().lower()
    m = re.fullmatch(r"(\d+(?:\.\d+)?)([km]?)", s)
    if m:
        value = float(m.group(1)) * _SUFFIX.get(m.group(2), 1)
    else:
        try:
            value = float(s)
        except ValueError:
            raise GQAOptError(f"not a count: {text!r}") from None
    if not value.is_integer():
        raise GQAOptError(f"not an integer count: {text!r}")
    return int(value)


def parse_list(text: str, conv=float) -> list:
    return [conv(t) for t in re.split(r"[,\s]+", text.strip()) if t]


def _delimiter(path: Path) -> str:
    return "\t" if path.suffix.lower() in (".tsv", ".tab") else ","


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _field(x) -> str:
    """Shortest exact text for a number: integral values without a trailing '.0'."""
    x = float(x)
    if x.is_integer() and abs(x) < 2 ** 53:
        return str(int(x))
    return repr(x)


def _num(x):
    """JSON-safe number: ints stay ints, non-finite become null."""
    if x is None:
        return None
    if isinstance(x, int):
        return x
    x = float(x)
    return x if math.isfinite(x) else None


# -- loss records ----------------------------------------------------------

def read_records(path) -> list[LossRecord]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader((ln for ln in fh if not ln.startswith("#")),
                                delimiter=_delimiter(path))
        if reader.fieldnames is None:
            raise RecordFormatError(f"{path}: no records (empty file)")
        missing = [c for c in RECORD_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise RecordFormatError(f"{path}: missing columns {missing}")
        out = []
        for row in reader:
            line = reader.line_num
            try:
                out.append(LossRecord(
                    heads=AttentionHeads(int(row["n_heads"]), int(row["n_kv_heads"])),
                    n_params_non_embedding=float(row["n_params_nonemb"]),
                    n_params_total=float(row["n_params_total"]),
                    context_length=int(row["context_length"]),
                    train_tokens=float(row["train_tokens"]),
                    loss=float(row["loss"]),
                    model_id=row["model_id"],
                    n_layers=int(row["n_layers"]),
                    hidden_size=int(row["hidden_size"]),
                    head_dim=int(row["head_dim"]),
                    vocab_size=int(row["vocab_size"]),
                ))
            except (TypeError, ValueError) as exc:
                raise RecordFormatError(f"{path}, line {line}: malformed record: {exc}") from None
    if not out:
        raise RecordFormatError(f"{path}: no records")
    return out


def write_records(path, records: Iterable[LossRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter=_delimiter(path), lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.model_id, r.n_layers, r.hidden_size, r.head_dim, r.vocab_size,
                        r.heads.n_h, r.heads.n_kv, _field(r.n_params_total),
                        _field(r.n_params_non_embedding), r.context_length,
                        _field(r.train_tokens), repr(float(r.loss))])


# -- family tables ---------------------------------------------------------

def read_family(path, head_dim: int = 64, vocab_size: int = 50304) -> FamilyTable:
    """One anchor per line: param_count, n_layers, hidden_size[, label].

    Fields may be separated by commas or whitespace; '#' starts a comment and a
    leading non-numeric header line is skipped.
    """
    path = Path(path)
    anchors = []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p for p in re.split(r"[,\s]+", line) if p]
        try:
            size = float(parts[0])
        except ValueError:
            if not anchors:
                continue  # header
            raise RecordFormatError(f"{path}:{lineno}: bad param_count {parts[0]!r}") from None
        if len(parts) < 3:
            raise RecordFormatError(f"{path}:{lineno}: expected param_count, n_layers, hidden_size")
        try:
            anchors.append(Anchor(size, int(parts[1]), int(parts[2]),
                                  parts[3] if len(parts) > 3 else ""))
        except ValueError:
            raise RecordFormatError(f"{path}:{lineno}: malformed anchor {line!r}") from None
    return FamilyTable(tuple(anchors), head_dim, vocab_size)


def write_family(path, family: FamilyTable) -> None:
    lines = ["# param_count n_layers hidden_size label"]
    lines += [f"{a.param_count!r} {a.n_layers} {a.hidden_size} {a.label}".rstrip()
              for a in family.anchors]
    Path(path).write_text("\n".join(lines) + "\n")


# -- curve documents -------------------------------------------------------

def curve_to_dict(c: ScalingCurve) -> dict:
    d = {
        "heads": [c.heads.n_h, c.heads.n_kv] if c.heads else None,
        "a": c.a, "b": c.b, "E": c.E,
        "fit_domain": [_num(c.fit_domain[0]), _num(c.fit_domain[1])],
        "size_field": c.size_field,
        "context_length": c.context_length,
    }
    if c.diagnostics:
        g = c.diagnostics
        d["diagnostics"] = {"r_squared": g.r_squared, "rmse": g.rmse,
                            "n_points": g.n_points, "residuals": list(g.residuals)}
    return d


def curve_from_dict(d: dict) -> ScalingCurve:
    diag = None
    if d.get("diagnostics"):
        g = d["diagnostics"]
        diag = FitDiagnostics(g["r_squared"], g["rmse"], g["n_points"], tuple(g["residuals"]))
    lo, hi = d.get("fit_domain") or (None, None)
    return ScalingCurve(
        float(d["a"]), float(d["b"]), float(d["E"]),
        AttentionHeads(*d["heads"]) if d.get("heads") else None,
        (0.0 if lo is None else lo, math.inf if hi is None else hi),
        d.get("size_field", "nonemb"), d.get("context_length"), diag)


def dump_curves(curves: Sequence[ScalingCurve]) -> str:
    return _dump({"format": CURVES_FORMAT, "version": 1,
                  "curves": [curve_to_dict(c) for c in curves]})


def write_curves(path, curves: Sequence[ScalingCurve]) -> None:
    Path(path).write_text(dump_curves(curves))


def read_curves(path) -> list[ScalingCurve]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RecordFormatError(f"{path}: not a curve document ({exc})") from None
    if doc.get("format") != CURVES_FORMAT:
        raise RecordFormatError(f"{path}: not a curve document")
    curves = [curve_from_dict(d) for d in doc["curves"]]
    if not curves:
        raise RecordFormatError(f"{path}: curve document is empty")
    return curves


# -- reports ---------------------------------------------------------------

def shape_to_dict(s: ModelShape | None):
    if s is None:
        return None
    return {"n_layers": s.n_layers, "hidden_size": s.hidden_size, "ffn_size": s.ffn_size,
            "head_dim": s.head_dim, "vocab_size": s.vocab_size}


def cost_to_dict(c: InferenceCost | None):
    if c is None:
        return None
    return {"context_length": c.context_length,
            "flops_invariant": c.flops_invariant, "flops_variant": c.flops_variant,
            "flops_total": c.flops_total, "mem_invariant": c.mem_invariant,
            "mem_variant": c.mem_variant, "mem_total": c.mem_total}


def row_to_dict(r: CandidateRow) -> dict:
    return {"heads": [r.heads.n_h, r.heads.n_kv], "status": r.status,
            "n_params": _num(r.n_params), "cost_params_count": _num(r.cost_params_count),
            "z": _num(r.z), "extrapolated": r.extrapolated, "gap": _num(r.gap),
            "shape": shape_to_dict(r.shape), "cost": cost_to_dict(r.cost)}


def choice_to_dict(ch: OptimalChoice) -> dict:
    q = ch.query
    return {
        "query": {"target_loss": q.target_loss, "context_length": q.context_length,
                  "objective": q.objective.value,
                  "cost_params": {"lambda": q.cost_params.lam, "alpha": q.cost_params.alpha,
                                  "beta": q.cost_params.beta}},
        "heads": [ch.heads.n_h, ch.heads.n_kv],
        "n_params": ch.n_params,
        "z": ch.z_value,
        "fractional_shape": shape_to_dict(ch.fractional_shape),
        "concrete_shape": shape_to_dict(ch.concrete_shape),
        "cost": cost_to_dict(ch.cost),
        "candidates": [row_to_dict(r) for r in ch.ranked()],
    }


def breakdown_to_dict(b: CostBreakdown) -> dict:
    return {"flops": dict(b.flops), "flops_fractions": b.flops_fractions,
            "memory_values": dict(b.memory), "memory_bytes": b.memory_bytes,
            "memory_fractions": b.memory_fractions,
            "bytes_per_value": b.precision.bytes_per_value}


def dump_json(obj) -> str:
    return _dump(obj)


# -- sweep matrices --------------------------------------------------------

def sweep_to_dict(grid: SweepGrid) -> dict:
    cells = []
    for row, errs in zip(grid.cells, grid.errors):
        out = []
        for c, e in zip(row, errs):
            if c is None:
                out.append({"feasible": False, "error": e})
            else:
                out.append({"feasible": True, "heads": [c.heads.n_h, c.heads.n_kv],
                            "n_params": c.n_params, "z": c.z_value,
                            "mem_total": c.cost.mem_total, "flops_total": c.cost.flops_total,
                            "concrete_shape": shape_to_dict(c.concrete_shape)})
        cells.append(out)
    return {"format": SWEEP_FORMAT, "version": 1, "target_losses": list(grid.losses),
            "context_lengths": list(grid.contexts), "cells": cells}


def render_matrix(doc: dict, sep: str = "\t") -> str:
    """Human-readable heads matrix: rows are target losses, columns context lengths."""
    lines = [sep.join(["L*"] + [str(t) for t in doc["context_lengths"]])]
    for loss, row in zip(doc["target_losses"], doc["cells"]):
        cells = [f"{c['heads'][0]},{c['heads'][1]}" if c["feasible"] else INFEASIBLE_CELL
                 for c in row]
        lines.append(sep.join([f"{loss:.6g}"] + cells))
    return "\n".join(lines) + "\n"


def render_size_matrix(doc: dict, sep: str = "\t") -> str:
    lines = [sep.join(["L*"] + [str(t) for t in doc["context_lengths"]])]
    for loss, row in zip(doc["target_losses"], doc["cells"]):
        cells = [f"{c['n_params']:.6g}" if c["feasible"] else INFEASIBLE_CELL for c in row]
        lines.append(sep.join([f"{loss:.6g}"] + cells))
    return "\n".join(lines) + "\n"


def read_matrix(path) -> tuple[list[float], list[int], list[list]]:
    """Parse a rendered heads matrix back into (losses, contexts, cells)."""
    rows = [ln.split("\t") for ln in Path(path).read_text().splitlines() if ln.strip()]
    contexts = [int(t) for t in rows[0][1:]]
    losses, cells = [], []
    for r in rows[1:]:
        losses.append(float(r[0]))
        cells.append([None if c == INFEASIBLE_CELL else AttentionHeads(*map(int, c.split(",")))
                      for c in r[1:]])
    return losses, contexts, cells


# -- series documents ------------------------------------------------------

def series_document(axis: str, unit: str, x: Sequence, series: dict, metric: str) -> dict:
    """Plot-ready stacked series sharing one strictly increasing x axis."""
    xs = list(x)
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise GQAOptError("series x values must be strictly increasing")
    return {"format": SERIES_FORMAT, "version": 1,
            "axis": {"name": axis, "unit": unit},
            "series": [{"label": k, "metric": metric, "x": xs, "y": list(v)}
                       for k, v in series.items()]}


# -- align configs ---------------------------------------------------------

def read_configs(path) -> list[tuple[str, ModelShape, AttentionHeads]]:
    """Configs for budget alignment: label, n_layers, hidden_size, n_heads, n_kv_heads."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.DictReader((ln for ln in fh if not ln.startswith("#")),
                                delimiter=_delimiter(path))
        for row in reader:
            try:
                shape = ModelShape.concrete(int(row["n_layers"]), int(row["hidden_size"]),
                                            int(row.get("head_dim") or 64),
                                            int(row.get("vocab_size") or 50304))
                heads = AttentionHeads(int(row["n_heads"]), int(row["n_kv_heads"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise RecordFormatError(f"{path}:{reader.line_num}: malformed config: {exc}") from None
            out.append((row.get("label") or f"config{len(out)}", shape, heads))
    if not out:
        raise RecordFormatError(f"{path}: no configs")
    return out
