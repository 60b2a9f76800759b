"""Command-line entry point: ``gqaopt {cost,fit,optimize,sweep,breakdown,align}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

from . import io
from .config import (AttentionHeads, FfnMode, ModelShape, candidate_set, count_params,
                     default_family, derive_ffn_width, fixed_heads, nearest_concrete_config,
                     resolve_shape_from_size)
from .costs import (HardwareCostParams, Objective, Precision, component_breakdown,
                    hardware_cost, inference_cost, training_cost)
from .errors import GQAOptError
from .scaling import fit_all, fit_head_law
from .search import OptimizationQuery, aligned_budget_report, optimize, sweep

FAMILY_ENV = "GQAOPT_FAMILY"
DEFAULT_REFERENCE_CONTEXT = 8192

log = logging.getLogger("gqaopt")


def g6(x) -> str:
    return "-" if x is None else f"{x:.6g}"


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
        log.info("wrote %s", args.out)
    else:
        sys.stdout.write(text)


# -- shared argument groups --------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", help=f"family table file (default: ${FAMILY_ENV} or built-in)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=1.0 / 3.0)
    p.add_argument("--precision-bytes", type=float, default=2.0)
    p.add_argument("--ffn-mode", choices=[m.value for m in FfnMode], default="table2")
    p.add_argument("--size-field", choices=["total", "nonemb"], default="nonemb",
                   help="parameter count used for fitting and size resolution")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=["table", "machine"], default="table")
    p.add_argument("-v", "--verbose", action="store_true")


def _shape_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--ffn", type=int, help="FFN width (default: 8/3 d rounded to 32)")
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--kv-heads", type=int, help="KV heads (default: --heads, i.e. MHA)")
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--vocab", type=int, default=50304)


def _shape(args) -> tuple[ModelShape, AttentionHeads]:
    ffn = args.ffn if args.ffn is not None else derive_ffn_width(args.hidden)
    shape = ModelShape(args.layers, args.hidden, ffn, args.head_dim, args.vocab)
    heads = AttentionHeads(args.heads, args.kv_heads if args.kv_heads is not None else args.heads)
    return shape, heads


def _cost_params(args) -> HardwareCostParams:
    return HardwareCostParams(args.lam, args.alpha, args.beta)


def _family(args):
    path = args.family or os.environ.get(FAMILY_ENV)
    if path:
        if not Path(path).is_file():
            raise GQAOptError(f"family table not found: {path}")
        return io.read_family(path)
    return default_family(FfnMode(args.ffn_mode), args.size_field)


def _require_file(path, what):
    if not path:
        raise GQAOptError(f"--{what} is required")
    if not Path(path).is_file():
        raise GQAOptError(f"{what} file not found: {path}")


# -- subcommands -----------------------------------------------------------

def cmd_cost(args) -> int:
    shape, heads = _shape(args)
    mode = FfnMode(args.ffn_mode)
    pc = count_params(shape, heads, mode)
    n = args.params if args.params is not None else pc.size(args.cost_size_field)
    cost = inference_cost(n, shape, heads, args.ctx)
    z = hardware_cost(cost, _cost_params(args))
    prec = Precision(args.precision_bytes)
    br = component_breakdown(shape, heads, args.ctx, mode, prec)
    doc = {"shape": io.shape_to_dict(shape), "heads": [heads.n_h, heads.n_kv],
           "ffn_mode": mode.value, "n_params": n,
           "param_count": {"embedding": pc.embedding,
                           "attention_projections": pc.attention_projections,
                           "ffn": pc.ffn, "total": pc.total, "non_embedding": pc.non_embedding},
           "cost": io.cost_to_dict(cost),
           "mem_total_bytes": prec.to_bytes(cost.mem_total),
           "z": z, "breakdown": io.breakdown_to_dict(br)}
    if args.train_tokens:
        tc = training_cost(n, shape, heads, args.train_tokens, args.train_ctx)
        doc["training"] = {"flops": tc.flops, "memory": tc.memory,
                           "train_tokens": tc.train_tokens, "mean_context": tc.mean_context}
    if args.format == "machine":
        _emit(args, io.dump_json(doc))
        return 0
    lines = [f"shape L={shape.n_layers} d={shape.hidden_size} d_ff={shape.ffn_size} "
             f"heads={heads} T={args.ctx} ffn-mode={mode.value}",
             f"N (params used for costs): {g6(n)}", "",
             _table(["", "time-invariant", "time-variant", "total"], [
                 ["FLOPs", g6(cost.flops_invariant), g6(cost.flops_variant), g6(cost.flops_total)],
                 ["memory (values)", g6(cost.mem_invariant), g6(cost.mem_variant),
                  g6(cost.mem_total)],
                 [f"memory (bytes @{g6(prec.bytes_per_value)})",
                  g6(prec.to_bytes(cost.mem_invariant)), g6(prec.to_bytes(cost.mem_variant)),
                  g6(prec.to_bytes(cost.mem_total))],
             ]), "", f"hardware-aware cost Z: {g6(z)}", "",
             _table(["FLOPs component", "value", "fraction"],
                    [[k, g6(v), g6(br.flops_fractions[k])] for k, v in br.flops.items()]),
             "",
             _table(["memory component", "values", "fraction"],
                    [[k, g6(v), g6(br.memory_fractions[k])] for k, v in br.memory.items()])]
    if "training" in doc:
        t = doc["training"]
        lines += ["", f"training FLOPs: {g6(t['flops'])}  training memory: {g6(t['memory'])}"]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def _fit_head_laws(args, records) -> int:
    groups = {}
    for r in records:
        groups.setdefault(r.context_length, []).append(r)
    out, rows = [], []
    for ctx in sorted(groups):
        curve, diag = fit_head_law(groups[ctx], args.head_axis)
        out.append({"context_length": ctx, "axis": curve.axis, "a": curve.a, "b": curve.b,
                    "c": curve.c, "r_squared": diag.r_squared, "rmse": diag.rmse,
                    "n_points": diag.n_points})
        rows.append([ctx, g6(curve.a), g6(curve.b), g6(curve.c), g6(diag.r_squared),
                     diag.n_points])
    text = io.dump_json({"format": "gqaopt-headlaw", "version": 1, "curves": out})
    if args.out:
        Path(args.out).write_text(text)
    if args.format == "machine" and not args.out:
        sys.stdout.write(text)
    else:
        print(_table(["T", "a", "b", "c", "R^2", "n"], rows))
    return 0


def cmd_fit(args) -> int:
    _require_file(args.records, "records")
    records = io.read_records(args.records)
    if args.context is not None:
        records = [r for r in records if r.context_length == args.context]
        if not records:
            raise GQAOptError(f"no records at context length {args.context}")
    if args.head_axis:
        return _fit_head_laws(args, records)
    curves, failures = fit_all(records, args.size_field, args.chinchilla)
    for (heads, ctx), exc in failures.items():
        log.warning("skipped heads %s @ T=%s: %s", heads, ctx, exc)
    if not curves:
        raise GQAOptError("no group could be fitted")
    text = io.dump_curves(curves)
    if args.out:
        Path(args.out).write_text(text)
    rows = [[str(c.heads), c.context_length, g6(c.a), g6(c.b), g6(c.E),
             g6(c.diagnostics.r_squared), c.diagnostics.n_points] for c in curves]
    table = _table(["heads", "T", "a", "b", "E", "R^2", "n"], rows)
    if args.format == "machine" and not args.out:
        sys.stdout.write(text)
    else:
        print(table)
        if failures:
            print(f"{len(failures)} group(s) skipped")
    return 0


def _load_curves(args):
    _require_file(args.curves, "curves")
    curves = io.read_curves(args.curves)
    candidates = None
    if args.max_hidden:
        candidates = candidate_set(args.max_hidden, args.head_dim)
    return curves, candidates


def cmd_optimize(args) -> int:
    curves, candidates = _load_curves(args)
    query = OptimizationQuery(args.loss, args.ctx, _cost_params(args), Objective(args.objective))
    choice = optimize(query, curves, _family(args), FfnMode(args.ffn_mode),
                      args.cost_size_field, candidates)
    if args.format == "machine":
        _emit(args, io.dump_json(io.choice_to_dict(choice)))
        return 0
    c = choice.concrete_shape
    f = choice.fractional_shape
    rows = [[str(r.heads), r.status, g6(r.n_params),
             g6(r.shape.n_layers) if r.shape else "-", g6(r.shape.hidden_size) if r.shape else "-",
             g6(r.cost.mem_total) if r.cost else "-", g6(r.cost.flops_total) if r.cost else "-",
             g6(r.z) if r.feasible else "-", "yes" if r.extrapolated else ""]
            for r in choice.ranked()]
    text = "\n".join([
        f"target loss {args.loss} at T={args.ctx} (objective {query.objective.value})",
        f"winner: heads {choice.heads}  N* = {g6(choice.n_params)}  "
        f"objective = {g6(choice.z_value)}",
        f"fractional shape: L={g6(f.n_layers)} d={g6(f.hidden_size)} d_ff={g6(f.ffn_size)}",
        f"nearest concrete: L={c.n_layers} d={c.hidden_size} d_ff={c.ffn_size}",
        "",
        _table(["heads", "status", "N*", "L", "d", "mem", "FLOPs", "objective", "extrap"], rows),
    ]) + "\n"
    _emit(args, text)
    return 0


def cmd_sweep(args) -> int:
    curves, candidates = _load_curves(args)
    if candidates is not None:
        wanted = set(candidates)
        curves = [c for c in curves if c.heads in wanted]
    losses = io.parse_list(args.losses, float)
    contexts = io.parse_list(args.ctxs, io.parse_count)
    grid = sweep(losses, contexts, curves, _family(args), _cost_params(args),
                 Objective(args.objective), FfnMode(args.ffn_mode), args.cost_size_field)
    doc = io.sweep_to_dict(grid)
    matrix = io.render_matrix(doc)
    if args.out:
        base = Path(args.out)
        base.with_suffix(".tsv").write_text(matrix)
        base.with_suffix(".sizes.tsv").write_text(io.render_size_matrix(doc))
        base.with_suffix(".json").write_text(io.dump_json(doc))
    if args.format == "machine" and not args.out:
        sys.stdout.write(io.dump_json(doc))
    else:
        sys.stdout.write(matrix)
    return 0


def cmd_breakdown(args) -> int:
    shape, heads = _shape(args)
    mode = FfnMode(args.ffn_mode)
    prec = Precision(args.precision_bytes)
    if bool(args.ctxs) == bool(args.sizes):
        raise GQAOptError("give exactly one of --ctxs or --sizes")
    if args.ctxs:
        xs = sorted(set(io.parse_list(args.ctxs, io.parse_count)))
        items = [(T, component_breakdown(shape, heads, T, mode, prec)) for T in xs]
        axis, unit = "context_length", "tokens"
    else:
        family = _family(args)
        xs = sorted(set(io.parse_list(args.sizes, float)))
        items = []
        for n in xs:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                frac = resolve_shape_from_size(n, family, fixed_heads(heads), mode,
                                               args.size_field)
            items.append((n, component_breakdown(nearest_concrete_config(frac), heads, args.ctx,
                                                 mode, prec)))
        axis, unit = "n_params", "parameters"
    mem = {k: [b.memory_fractions[k] for _, b in items] for k in items[0][1].memory}
    flops = {k: [b.flops_fractions[k] for _, b in items] for k in items[0][1].flops}
    doc = {"memory": io.series_document(axis, unit, xs, mem, "memory_fraction"),
           "flops": io.series_document(axis, unit, xs, flops, "flops_fraction")}
    if args.format == "machine" or args.out:
        _emit(args, io.dump_json(doc))
    else:
        rows = [[x] + [g6(b.memory_fractions[k]) for k in mem]
                + [g6(b.flops_fractions[k]) for k in flops] for x, b in items]
        print(_table([axis] + [f"mem:{k}" for k in mem] + [f"flops:{k}" for k in flops], rows))
    return 0


def cmd_align(args) -> int:
    _require_file(args.configs, "configs")
    configs = io.read_configs(args.configs)
    mode = FfnMode(args.ffn_mode)
    budget = args.budget
    if args.budget_chinchilla:
        match = [c for c in configs if c[0] == args.budget_chinchilla]
        if not match:
            raise GQAOptError(f"no config labelled {args.budget_chinchilla!r}")
        _, shape, heads = match[0]
        n = count_params(shape, heads, mode).total
        budget = training_cost(n, shape, heads, 20 * n, args.train_ctx).flops
    if budget is None:
        raise GQAOptError("give --budget or --budget-chinchilla")
    rows = aligned_budget_report([(s, h) for _, s, h in configs], budget, args.train_ctx,
                                 mode, "total", [lbl for lbl, _, _ in configs])
    if args.format == "machine":
        _emit(args, io.dump_json({"flops_budget": budget, "train_context": args.train_ctx,
                                  "rows": [{"label": r.label, "heads": [r.heads.n_h, r.heads.n_kv],
                                            "n_params": r.n_params,
                                            "train_tokens": r.train_tokens,
                                            "chinchilla_tokens": r.chinchilla_tokens,
                                            "chinchilla_ratio": r.chinchilla_ratio}
                                           for r in rows]}))
        return 0
    text = _table(["config", "heads", "N", "train tokens", "tokens / 20N"],
                  [[r.label, str(r.heads), g6(r.n_params), g6(r.train_tokens),
                    g6(r.chinchilla_ratio)] for r in rows])
    _emit(args, f"FLOPs budget {g6(budget)} at training context {args.train_ctx}\n{text}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gqaopt", description=(
        "Cost models and cost-optimal head-configuration search for GQA Transformers."))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="per-token inference cost report")
    _common(p)
    _shape_args(p)
    p.add_argument("--ctx", type=io.parse_count, required=True)
    p.add_argument("--params", type=float, help="override the parameter count N used for costs")
    p.add_argument("--cost-size-field", choices=["total", "nonemb"], default="total")
    p.add_argument("--train-tokens", type=float, help="also report training cost")
    p.add_argument("--train-ctx", type=io.parse_count, default=DEFAULT_REFERENCE_CONTEXT)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("fit", help="fit per-configuration scaling curves")
    _common(p)
    p.add_argument("--records", required=False)
    p.add_argument("--context", type=io.parse_count,
                   help="only fit records at this context length")
    p.add_argument("--head-axis", choices=["n_h", "n_kv"],
                   help="fit loss vs. this head count (a*n**b + c) per context length "
                        "instead of loss vs. model size")
    p.add_argument("--chinchilla", action="store_true",
                   help="records follow a fixed tokens-per-parameter ratio")
    p.set_defaults(func=cmd_fit)

    for name, func, helptext in (("optimize", cmd_optimize, "solve one (target loss, T) query"),
                                 ("sweep", cmd_sweep, "solve a grid of queries")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--curves")
        p.add_argument("--objective", choices=[o.value for o in Objective], default="z")
        p.add_argument("--cost-size-field", choices=["total", "nonemb"], default="total")
        p.add_argument("--max-hidden", type=int,
                       help="restrict to the candidate set for this largest fitted width")
        p.add_argument("--head-dim", type=int, default=64)
        if name == "optimize":
            p.add_argument("--loss", type=float, required=True)
            p.add_argument("--ctx", type=io.parse_count, required=True)
        else:
            p.add_argument("--losses", required=True, help="comma-separated target losses")
            p.add_argument("--ctxs", required=True, help="comma-separated context lengths")
        p.set_defaults(func=func)

    p = sub.add_parser("breakdown", help="component fractions over context length or size")
    _common(p)
    _shape_args(p)
    p.add_argument("--ctxs", help="comma-separated context lengths")
    p.add_argument("--sizes", help="comma-separated parameter counts")
    p.add_argument("--ctx", type=io.parse_count, default=131072,
                   help="context length for a --sizes sweep")
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("align", help="training tokens per config under one FLOPs budget")
    _common(p)
    p.add_argument("--configs")
    p.add_argument("--budget", type=float)
    p.add_argument("--budget-chinchilla", metavar="LABEL",
                   help="use this config's 20-tokens-per-parameter training cost as the budget")
    p.add_argument("--train-ctx", type=io.parse_count, required=True)
    p.set_defaults(func=cmd_align)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "train_ctx", 1) is not None and getattr(args, "train_ctx", 1) <= 0:
        print("error: training context must be positive", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except GQAOptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
