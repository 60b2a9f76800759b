"""Synthetic scaling-curve families and loss records for tests and demos.

Curves follow ``(a_H / N)**b + E`` with a common exponent and asymptote; the
amplitude grows as heads shrink, ``a_H = a_ref * (n_h/h_ref)**-p * (n_kv/kv_ref)**-q``,
so fewer heads need a larger model for the same loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (BUILTIN_ANCHORS, AttentionHeads, FfnMode, ModelShape, candidate_set,
                     count_params)
from .scaling import CHINCHILLA_RATIO, LossRecord, ScalingCurve

# 1B-class grouped-query reference point the calibrated family passes through
REFERENCE_HEADS = AttentionHeads(32, 8)
REFERENCE_SIZE = 1.2e9
REFERENCE_LOSS = 2.615

# ladder shapes used for fitting (the sub-1.2B anchors)
LADDER = BUILTIN_ANCHORS[:8]


@dataclass(frozen=True)
class FamilySpec:
    b: float = 0.25
    E: float = 1.8
    p: float = 0.5
    q: float = 0.25
    ref_heads: AttentionHeads = REFERENCE_HEADS
    ref_size: float = REFERENCE_SIZE
    ref_loss: float = REFERENCE_LOSS

    @property
    def a_ref(self) -> float:
        return self.ref_size * (self.ref_loss - self.E) ** (1.0 / self.b)

    def amplitude(self, heads: AttentionHeads) -> float:
        return (self.a_ref * (heads.n_h / self.ref_heads.n_h) ** -self.p
                * (heads.n_kv / self.ref_heads.n_kv) ** -self.q)


def calibrated_curves(spec: FamilySpec = FamilySpec(), d_max: int = 1536, head_dim: int = 64,
                      fit_domain=(2e6, 1.2e9), context_length: int = 8192) -> list[ScalingCurve]:
    return [ScalingCurve(spec.amplitude(h), spec.b, spec.E, h, fit_domain, "nonemb",
                         context_length)
            for h in candidate_set(d_max, head_dim)]


def random_curves(rng: np.random.Generator, heads=None, fit_domain=(2e6, 1.2e9),
                  context_length: int = 8192) -> list[ScalingCurve]:
    """A random family with the same monotone structure: fewer heads, larger amplitude."""
    spec = FamilySpec(b=rng.uniform(0.2, 0.5), E=rng.uniform(1.5, 2.2),
                      p=rng.uniform(0.1, 1.0), q=rng.uniform(0.05, 0.5),
                      ref_loss=0.0)
    spec = FamilySpec(spec.b, spec.E, spec.p, spec.q, ref_loss=spec.E + rng.uniform(0.5, 1.2))
    heads = heads or candidate_set(1536, 64)
    return [ScalingCurve(spec.amplitude(h) * np.exp(rng.normal(0, 0.05)), spec.b, spec.E, h,
                         fit_domain, "nonemb", context_length)
            for h in heads]


def ladder_records(curves, mode: FfnMode = FfnMode.TABLE2, ladder=LADDER,
                   noise: float = 0.0, seed: int = 0) -> list[LossRecord]:
    """Loss records for every curve at every ladder shape, trained on 20 tokens/param."""
    rng = np.random.default_rng(seed)
    out = []
    for curve in curves:
        h = curve.heads
        for label, L, d in ladder:
            shape = ModelShape.concrete(L, d)
            pc = count_params(shape, h, mode)
            n = pc.size(curve.size_field)
            loss = (curve.a / n) ** curve.b + curve.E
            if noise:
                loss *= 1.0 + noise * rng.standard_normal()
            out.append(LossRecord(h, pc.non_embedding, pc.total, curve.context_length,
                                  CHINCHILLA_RATIO * pc.total, float(loss),
                                  f"{label}-h{h.n_h}-kv{h.n_kv}", L, d, shape.head_dim,
                                  shape.vocab_size))
    return out
