"""Acceptance suite: ten end-to-end criteria, each timed against its budget.

Every criterion prints one ``PASS``/``FAIL`` line. Run under pytest (lines are
repeated in the terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

import json
import math
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import enumerate_weights  # noqa: E402
from gqaopt import io  # noqa: E402
from gqaopt.config import (BUILTIN_ANCHORS, AttentionHeads, FfnMode, ModelShape,  # noqa: E402
                           candidate_set, count_params, default_family)
from gqaopt.costs import (component_breakdown, inference_cost, inference_terms,  # noqa: E402
                          training_cost)
from gqaopt.scaling import (ScalingCurve, fit_head_law_arrays, invert_curve,  # noqa: E402
                            joint_fit_arrays, predict_loss)
from gqaopt.search import (OptimizationQuery, brute_force_check, monotone_violations,  # noqa: E402
                           optimize, sweep)
from gqaopt.synthetic import (REFERENCE_HEADS, REFERENCE_LOSS, REFERENCE_SIZE,  # noqa: E402
                              calibrated_curves, random_curves)

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
SWEEP_LOSSES = [3.0, 2.9, 2.8, 2.7, 2.6, 2.5, 2.4, 2.35]
SWEEP_CONTEXTS = [8192, 16384, 32768, 65536, 131072]

RESULTS: list[str] = []


def _timed(fn, repeat=1):
    """Run ``fn`` and return (result, best wall time in seconds)."""
    best, out = math.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def _report(num, title, ok, elapsed, budget, detail=""):
    within = elapsed < budget
    status = "PASS" if ok and within else "FAIL"
    line = (f"[{status}] criterion {num:2d}: {title} ({elapsed * 1e3:.1f} ms / "
            f"budget {budget * 1e3:.0f} ms){' - ' + detail if detail else ''}")
    RESULTS.append(line)
    print(line)
    return ok and within


# -- criteria ------------------------------------------------------------------

def criterion_1():
    cands, t = _timed(lambda: candidate_set(1536, 64), repeat=5)
    ok = len(cands) == 21 and max(h.n_h for h in cands) == 32 and max(h.n_kv for h in cands) == 32
    return _report(1, "candidate enumeration", ok, t, 1e-3, f"{len(cands)} configs")


def criterion_2():
    def check():
        bad = []
        for label, L, d in BUILTIN_ANCHORS:
            shape = ModelShape.concrete(L, d)
            n = d // 64
            for mode in FfnMode:
                pc = count_params(shape, AttentionHeads(n, n), mode)
                emb, rest = enumerate_weights(L, d, shape.ffn_size, 64, 50304, n, n, mode.matrices)
                if (pc.embedding, pc.non_embedding, pc.total) != (emb, rest, emb + rest):
                    bad.append((label, mode.value))
        return bad
    bad, t = _timed(check)
    return _report(2, "parameter-count oracle", not bad, t, 1.0,
                   f"{len(BUILTIN_ANCHORS)} anchors x 2 modes" + (f", mismatches {bad}" if bad else ""))


def criterion_3():
    rng = np.random.default_rng(3)

    def check():
        mismatches = 0
        for _ in range(1000):
            N = int(rng.integers(10**6, 10**11))
            L = int(rng.integers(1, 129))
            dh = int(rng.choice([32, 64, 128]))
            e_h = int(rng.integers(0, 8))
            n_h, n_kv = 2 ** e_h, 2 ** int(rng.integers(0, e_h + 1))
            d = dh * n_h
            T = int(rng.integers(0, 2**20))
            D = int(rng.integers(10**6, 10**13))
            T_train = int(rng.integers(1, 2**17))
            shape, heads = ModelShape(L, d, 4 * d, dh), AttentionHeads(n_h, n_kv)
            c = inference_cost(N, shape, heads, T)
            tc = training_cost(N, shape, heads, D, T_train)
            t_bar = Fraction(T_train, 2)
            ref = (2 * N + 4 * T * L * dh * n_h, N + 2 * T * L * dh * n_kv,
                   6 * D * (N + 2 * L * t_bar * dh * n_h), 4 * N + T_train * d * L)
            got = (c.flops_total, c.mem_total, tc.flops, tc.memory)
            if any(Fraction(g) != r for g, r in zip(got, ref)) or not all(isinstance(g, int) for g in got):
                mismatches += 1
        return mismatches
    mismatches, t = _timed(check)
    return _report(3, "cost-formula oracle", mismatches == 0, t, 5.0,
                   f"1000 integer configs, {mismatches} mismatches")


def criterion_4():
    shape, heads = ModelShape(36, 1536, 4096), AttentionHeads(24, 24)
    br, t = _timed(lambda: component_breakdown(shape, heads, 131072), repeat=5)
    frac = br.memory_fractions["kv_cache"]
    return _report(4, "KV-cache memory fraction", 0.88 <= frac <= 0.95, t, 1e-3, f"fraction {frac:.4f}")


def criterion_5():
    grid = 2.0 ** np.arange(8)
    singles = [(0.579, -0.124, 2.473), (0.398, -0.177, 2.583), (0.301, -0.227, 2.622)]
    shared = [(1.513, -0.039), (1.436, -0.041), (1.356, -0.044)]

    def check():
        worst, r2 = 0.0, 1.0
        for a, b, c in singles:
            curve, diag = fit_head_law_arrays(grid, a * grid ** b + c)
            worst = max(worst, *(abs(g / w - 1) for g, w in zip((curve.a, curve.b, curve.c), (a, b, c))))
            r2 = min(r2, diag.r_squared)
        joint = joint_fit_arrays([(grid, a * grid ** b + 1.53) for a, b in shared])
        for curve, diag, (a, b) in zip(joint.curves, joint.diagnostics, shared):
            worst = max(worst, abs(curve.a / a - 1), abs(curve.b / b - 1), abs(curve.c / 1.53 - 1))
            r2 = min(r2, diag.r_squared)
        return worst, r2
    (worst, r2), t = _timed(check)
    return _report(5, "head-law fit recovery", worst <= 0.01 and r2 >= 0.999, t, 10.0,
                   f"worst rel. error {worst:.2e}, min R^2 {r2:.9f}")


def criterion_6():
    rng = np.random.default_rng(6)

    def check():
        worst = 0.0
        for _ in range(1000):
            curve = ScalingCurve(10 ** rng.uniform(3, 12), rng.uniform(0.05, 1.5), rng.uniform(0, 4))
            target = curve.E + 10 ** rng.uniform(-4, 1)
            got = predict_loss(curve, invert_curve(curve, target), warn=False)
            worst = max(worst, abs(got / target - 1))
        return worst
    worst, t = _timed(check)
    return _report(6, "inversion round trip", worst <= 1e-12, t, 1.0, f"worst rel. error {worst:.2e}")


def criterion_7():
    family = default_family()

    def check():
        heads_mismatch, worst = [], 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            curves = random_curves(rng)
            q = OptimizationQuery(curves[0].E + rng.uniform(0.3, 1.0),
                                  int(rng.choice(SWEEP_CONTEXTS)))
            got = optimize(q, curves, family)
            ref = brute_force_check(q, curves, family)
            if got.heads != ref.heads:
                heads_mismatch.append(seed)
            worst = max(worst, abs(got.n_params / ref.n_params - 1))
        return heads_mismatch, worst
    (mismatch, worst), t = _timed(check)
    return _report(7, "optimizer vs brute force", not mismatch and worst <= 5e-3, t, 30.0,
                   f"50 families, winner mismatches {mismatch}, worst N* gap {worst:.2e}")


def criterion_8():
    family = default_family()

    def check():
        curves = calibrated_curves()
        ref = next(c for c in curves if c.heads == REFERENCE_HEADS)
        calib = abs(predict_loss(ref, REFERENCE_SIZE, warn=False) / REFERENCE_LOSS - 1)
        grid = sweep(SWEEP_LOSSES, SWEEP_CONTEXTS, curves, family)
        H = grid.heads_matrix()
        full = all(h is not None for row in H for h in row)
        return calib, full, monotone_violations(grid), H
    (calib, full, violations, H), t = _timed(check)
    corners = f"{H[0][0]}@(3.0,8K) .. {H[-1][0]}@(2.35,8K) .. {H[0][-1]}@(3.0,128K)"
    return _report(8, "monotone sweep structure", calib < 1e-12 and full and not violations, t, 10.0,
                   f"8x5 grid, {len(violations)} violations, {corners}")


def criterion_9():
    rng = np.random.default_rng(9)

    def check():
        T = rng.integers(0, 2**17, size=10_000).astype(float)
        worst = 0.0
        for n_h, n_kv, N, L in [(32, 8, 1.2e9, 36.0), (8, 1, 1.8e9, 46.5), (64, 64, 3.3e10, 72.0)]:
            each = inference_terms(N, L, 64, n_h, n_kv, T)
            mean = inference_terms(N, L, 64, n_h, n_kv, float(T.mean()))
            for a, b in ((each.flops_total, mean.flops_total), (each.mem_total, mean.mem_total)):
                worst = max(worst, abs(float(np.mean(a)) / b - 1))
        return worst
    worst, t = _timed(check)
    return _report(9, "cost affine in context length", worst <= 1e-9, t, 1.0,
                   f"10000 samples, worst rel. gap {worst:.2e}")


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "gqaopt", *map(str, args)],
                          capture_output=True, text=True, cwd=ROOT)


def criterion_10(workdir: Path):
    def check():
        problems = []
        steps = [
            ("fit", _cli("fit", "--records", FIXTURES / "records_synthetic.csv", "--chinchilla",
                         "--out", workdir / "curves.json")),
            ("optimize", _cli("optimize", "--curves", workdir / "curves.json", "--loss", 2.6,
                              "--ctx", "32K", "--format", "machine", "--out",
                              workdir / "choice.json")),
            ("sweep", _cli("sweep", "--curves", workdir / "curves.json",
                           "--losses", ",".join(map(str, SWEEP_LOSSES)),
                           "--ctxs", "8K,16K,32K,64K,128K", "--out", workdir / "table")),
        ]
        for name, proc in steps:
            if proc.returncode != 0:
                problems.append(f"{name} exited {proc.returncode}: {proc.stderr.strip()}")
        if problems:
            return problems
        curves_text = (workdir / "curves.json").read_text()
        curves = io.read_curves(workdir / "curves.json")
        if io.dump_curves(curves) != curves_text:
            problems.append("curve document does not re-serialize identically")
        again = io.read_curves(workdir / "curves.json")
        ns = np.geomspace(1e6, 1e11, 64)
        if any(not np.array_equal(predict_loss(a, ns, warn=False), predict_loss(b, ns, warn=False))
               for a, b in zip(curves, again)):
            problems.append("re-ingested curves predict differently")
        for name in ("choice.json", "table.json"):
            text = (workdir / name).read_text()
            if io.dump_json(json.loads(text)) != text:
                problems.append(f"{name} does not re-serialize identically")
        sweep_doc = json.loads((workdir / "table.json").read_text())
        if io.render_matrix(sweep_doc) != (workdir / "table.tsv").read_text():
            problems.append("matrix file differs from its machine-readable companion")
        losses, ctxs, cells = io.read_matrix(workdir / "table.tsv")
        if (len(cells), len(cells[0])) != (8, 5) or ctxs != SWEEP_CONTEXTS:
            problems.append("matrix shape/axes unexpected")
        # the same pipeline on the same inputs is deterministic
        rerun = _cli("fit", "--records", FIXTURES / "records_synthetic.csv", "--chinchilla",
                     "--format", "machine")
        if rerun.stdout != curves_text:
            problems.append("refit is not bit-identical")
        return problems
    problems, t = _timed(check)
    return _report(10, "end-to-end CLI round trip", not problems, t, 60.0,
                   "; ".join(problems) if problems else "fit -> optimize -> sweep, all artifacts identical")


# -- pytest wrappers -----------------------------------------------------------

@pytest.mark.parametrize("num", range(1, 10))
def test_criterion(num):
    assert globals()[f"criterion_{num}"](), RESULTS[-1]


def test_criterion_10(tmp_path):
    assert criterion_10(tmp_path), RESULTS[-1]


if __name__ == "__main__":
    import tempfile

    outcomes = [globals()[f"criterion_{n}"]() for n in range(1, 10)]
    with tempfile.TemporaryDirectory() as tmp:
        outcomes.append(criterion_10(Path(tmp)))
    print(f"{sum(outcomes)}/10 criteria passed")
    sys.exit(0 if all(outcomes) else 1)
