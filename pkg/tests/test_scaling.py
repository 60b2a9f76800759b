import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gqaopt.config import AttentionHeads
from gqaopt.errors import DegenerateDataError, GQAOptError, InfeasibleTargetError
from gqaopt.scaling import (LossRecord, ScalingCurve, fit_all, fit_head_law, fit_head_law_arrays,
                            fit_power_law, fit_power_plus_constant, invert_curve, joint_fit_arrays,
                            joint_fit_shared_constant, predict_loss, relative_delta_series)

H = AttentionHeads(8, 2)
HEAD_GRID = 2.0 ** np.arange(8)  # 1 .. 128

HEAD_LAWS = [(0.579, -0.124, 2.473), (0.398, -0.177, 2.583), (0.301, -0.227, 2.622)]
SHARED_LAWS = [(1.513, -0.039), (1.436, -0.041), (1.356, -0.044)]
SHARED_C = 1.53


def size_records(a, b, E, sizes, heads=H, ctx=8192, tokens=1e10, noise=None):
    out = []
    for i, n in enumerate(sizes):
        loss = (a / n) ** b + E
        if noise is not None:
            loss *= 1 + noise[i]
        out.append(LossRecord(heads, n, n * 1.2, ctx, tokens, float(loss), f"m{i}"))
    return out


def head_records(a, b, c, ctx=8192, axis="n_h"):
    out = []
    for h in HEAD_GRID.astype(int):
        heads = AttentionHeads(int(h), int(h)) if axis == "n_h" else AttentionHeads(128, int(h))
        out.append(LossRecord(heads, 4.7e8, 5e8, ctx, 1e10, a * h ** b + c))
    return out


SIZES = np.geomspace(1e7, 2e9, 8)


class TestSizeFit:
    def test_recovers_generator(self):
        curve, diag = fit_power_law(size_records(2e8, 0.5, 1.5, SIZES))
        assert curve.a == pytest.approx(2e8, rel=1e-3)
        assert curve.b == pytest.approx(0.5, rel=1e-3)
        assert curve.E == pytest.approx(1.5, rel=1e-3)
        assert diag.r_squared >= 0.999999
        assert curve.fit_domain == (1e7, 2e9)
        assert curve.heads == H and curve.context_length == 8192

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(0.5, 3.0), st.floats(math.log(1e6), math.log(1e10)),
           st.integers(6, 12))
    def test_recovery_property(self, b, E, log_a, n):
        a = math.exp(log_a)
        sizes = np.geomspace(1e6, 1e10, n)
        # keep the power term visible above float resolution over the sampled range
        if (a / sizes[-1]) ** b < 1e-3 or (a / sizes[0]) ** b > 1e3:
            return
        curve, diag = fit_power_law(size_records(a, b, E, sizes))
        assert curve.b == pytest.approx(b, rel=1e-3)
        assert curve.E == pytest.approx(E, rel=1e-3)
        assert curve.a == pytest.approx(a, rel=1e-3)
        assert diag.r_squared >= 0.999999

    def test_identical_sizes(self):
        with pytest.raises(DegenerateDataError):
            fit_power_law(size_records(2e8, 0.5, 1.5, [1e8] * 6))

    def test_too_few_points(self):
        with pytest.raises(DegenerateDataError):
            fit_power_law(size_records(2e8, 0.5, 1.5, [1e7, 1e8, 1e9]))

    def test_narrow_span(self):
        with pytest.raises(DegenerateDataError):
            fit_power_law(size_records(2e8, 0.5, 1.5, np.geomspace(1e8, 9e8, 6)))

    def test_increasing_losses(self):
        recs = size_records(2e8, 0.5, 1.5, SIZES)
        flipped = [LossRecord(r.heads, r.n_params_non_embedding, r.n_params_total, r.context_length,
                              r.train_tokens, 10 - r.loss) for r in recs]
        with pytest.raises(DegenerateDataError):
            fit_power_law(flipped)

    def test_mixed_groups_and_tokens(self):
        recs = size_records(2e8, 0.5, 1.5, SIZES)
        other = size_records(2e8, 0.5, 1.5, SIZES, heads=AttentionHeads(8, 8))
        with pytest.raises(GQAOptError):
            fit_power_law(recs[:4] + other[:4])
        varied = size_records(2e8, 0.5, 1.5, SIZES)
        varied = [LossRecord(r.heads, r.n_params_non_embedding, r.n_params_total, r.context_length,
                             20 * r.n_params_total, r.loss) for r in varied]
        with pytest.raises(GQAOptError, match="chinchilla"):
            fit_power_law(varied)
        curve, _ = fit_power_law(varied, chinchilla=True)
        assert curve.E == pytest.approx(1.5, rel=1e-6)

    def test_fit_all_groups_and_failures(self):
        good = size_records(2e8, 0.5, 1.5, SIZES)
        bad = size_records(2e8, 0.5, 1.5, [1e8] * 5, heads=AttentionHeads(4, 4))
        curves, failures = fit_all(good + bad)
        assert [c.heads for c in curves] == [H]
        assert list(failures) == [(AttentionHeads(4, 4), 8192)]

    def test_size_field(self):
        curve, _ = fit_power_law(size_records(2e8, 0.5, 1.5, SIZES), size_field="total")
        assert curve.size_field == "total"
        assert curve.fit_domain[0] == pytest.approx(1.2e7)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        recs = size_records(2e8, 0.4, 1.7, SIZES, noise=rng.normal(0, 0.002, len(SIZES)))
        assert fit_power_law(recs) == fit_power_law(recs)

    def test_noise_robustness(self):
        rng = np.random.default_rng(2024)
        sizes = np.geomspace(1e7, 2e9, 8)
        E_true = 1.5
        worst = 0.0
        for _ in range(100):
            noise = rng.normal(0, 0.002, len(sizes))
            curve, _ = fit_power_law(size_records(2e8, 0.5, E_true, sizes, noise=noise))
            worst = max(worst, abs(curve.E - E_true) / E_true)
        assert worst < 0.02


class TestPredictInvert:
    CURVE = ScalingCurve(2e8, 0.5, 1.5, fit_domain=(1e7, 2e9))

    def test_examples(self):
        assert predict_loss(self.CURVE, 2e8) == 2.5
        assert predict_loss(self.CURVE, 8e8) == pytest.approx(2.0, rel=1e-15)
        assert invert_curve(self.CURVE, 2.5) == 2e8
        assert invert_curve(self.CURVE, 2.0) == pytest.approx(8e8, rel=1e-15)

    def test_infeasible(self):
        with pytest.raises(InfeasibleTargetError) as e:
            invert_curve(self.CURVE, 1.5)
        assert e.value.gap == 0
        with pytest.raises(InfeasibleTargetError) as e:
            invert_curve(self.CURVE, 1.4)
        assert e.value.gap == pytest.approx(-0.1)

    def test_warns_outside_domain(self):
        with pytest.warns(UserWarning):
            predict_loss(self.CURVE, 1e12)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            predict_loss(self.CURVE, 1e8)

    def test_rejects_nonpositive(self):
        with pytest.raises(GQAOptError):
            predict_loss(self.CURVE, 0)

    def test_asymptote_from_above(self):
        n = np.geomspace(1e6, 1e20, 100)
        y = predict_loss(self.CURVE, n, warn=False)
        assert np.all(np.diff(y) < 0)
        assert np.all(y > 1.5)

    @given(st.floats(1e3, 1e12), st.floats(0.05, 1.5), st.floats(0, 4), st.floats(1e-4, 10))
    def test_round_trip(self, a, b, E, gap):
        curve = ScalingCurve(a, b, E)
        n = invert_curve(curve, E + gap)
        assert predict_loss(curve, n, warn=False) == pytest.approx(E + gap, rel=1e-12)

    def test_rejects_bad_curve(self):
        with pytest.raises(GQAOptError):
            ScalingCurve(-1, 0.5, 1.5)


class TestHeadLaw:
    @pytest.mark.parametrize("a,b,c", HEAD_LAWS)
    def test_published_curves(self, a, b, c):
        curve, diag = fit_head_law(head_records(a, b, c))
        assert (curve.a, curve.b, curve.c) == pytest.approx((a, b, c), rel=1e-6)
        assert diag.r_squared >= 0.999

    def test_flat_asymptote_curve(self):
        curve, _ = fit_head_law_arrays(HEAD_GRID, 1.513 * HEAD_GRID ** -0.039 + SHARED_C)
        assert curve.c == pytest.approx(SHARED_C, rel=0.01)

    def test_kv_axis(self):
        curve, _ = fit_head_law(head_records(0.4, -0.2, 2.5, axis="n_kv"), axis="n_kv")
        assert curve.axis == "n_kv"
        assert curve.c == pytest.approx(2.5, rel=1e-6)

    def test_constant_series(self):
        with pytest.raises(DegenerateDataError):
            fit_head_law_arrays(HEAD_GRID, np.full(8, 2.5))

    def test_two_distinct_counts(self):
        with pytest.raises(DegenerateDataError):
            fit_head_law_arrays([1, 1, 2, 2], [3.0, 3.0, 2.9, 2.9])

    def test_mixed_context(self):
        recs = head_records(0.579, -0.124, 2.473)
        recs[0] = LossRecord(recs[0].heads, 4.7e8, 5e8, 1024, 1e10, recs[0].loss)
        with pytest.raises(GQAOptError):
            fit_head_law(recs)

    def test_shared_constant(self):
        groups = [head_records(a, b, SHARED_C, ctx=t) for (a, b), t in zip(SHARED_LAWS, (1024, 2048, 8192))]
        joint = joint_fit_shared_constant(groups)
        assert joint.c == pytest.approx(SHARED_C, rel=0.01)
        for curve, (a, b) in zip(joint.curves, SHARED_LAWS):
            assert curve.a == pytest.approx(a, rel=0.02)
            assert curve.b == pytest.approx(b, rel=0.02)
        assert all(d.r_squared >= 0.999 for d in joint.diagnostics)
        assert not joint.flagged

    def test_identical_groups(self):
        y = 0.579 * HEAD_GRID ** -0.124 + 2.473
        joint = joint_fit_arrays([(HEAD_GRID, y), (HEAD_GRID, y.copy())])
        a, b = joint.curves
        assert (a.a, a.b, a.c) == pytest.approx((b.a, b.b, b.c), rel=1e-9)

    def test_incompatible_asymptotes_flagged(self):
        y1 = 0.5 * HEAD_GRID ** -0.3 + 1.0
        y2 = 0.5 * HEAD_GRID ** -0.3 + 2.0
        joint = joint_fit_arrays([(HEAD_GRID, y1), (HEAD_GRID, y2)])
        assert min(d.r_squared for d in joint.diagnostics) < 0.999
        assert joint.flagged

    def test_needs_two_groups(self):
        with pytest.raises(DegenerateDataError):
            joint_fit_arrays([(HEAD_GRID, 0.5 * HEAD_GRID ** -0.3 + 1.0)])

    def test_generic_core(self):
        x = np.geomspace(1, 1000, 10)
        A, k, c, diag = fit_power_plus_constant(x, 3 * x ** -0.7 + 0.2)
        assert (A, k, c) == pytest.approx((3, -0.7, 0.2), rel=1e-6)


class TestContextDelta:
    BASE = {1024: 2.9, 2048: 2.8, 8192: 2.7, 16384: 2.68, 32768: 2.66}

    def test_identity(self):
        s = relative_delta_series(self.BASE, self.BASE)
        assert set(s.deltas) == {0.0}
        assert s.flatness == 0

    def test_constant_ratio(self):
        series = {t: v / 1.1 for t, v in self.BASE.items()}
        s = relative_delta_series(series, self.BASE, "gqa-ref")
        assert s.deltas == pytest.approx([-0.1 / 1.1] * 5, rel=1e-12)
        assert s.flatness == pytest.approx(0, abs=1e-15)
        assert s.baseline_id == "gqa-ref"

    def test_overlap_only(self):
        s = relative_delta_series({1024: 3.0, 4096: 2.0}, self.BASE)
        assert s.contexts == (1024,)
        assert s.flatness is None

    def test_disjoint(self):
        with pytest.raises(GQAOptError):
            relative_delta_series({3: 1.0}, self.BASE)
