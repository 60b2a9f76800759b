"""Per-token inference and training cost accounting for GQA Transformers.

Memory is counted in stored values; multiply by a ``Precision`` to get bytes.
All functions accept fractional shapes and broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .config import AttentionHeads, FfnMode, ModelShape, count_params
from .errors import GQAOptError


@dataclass(frozen=True)
class HardwareCostParams:
    lam: float = 0.9
    alpha: float = 0.5
    beta: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise GQAOptError(f"lambda must lie in [0, 1], got {self.lam}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise GQAOptError(f"{name} must be finite and positive, got {v}")


class Objective(str, enum.Enum):
    HARDWARE = "z"
    MEMORY = "memory"
    FLOPS = "flops"


@dataclass(frozen=True)
class Precision:
    bytes_per_value: float = 2.0

    def __post_init__(self):
        if not self.bytes_per_value > 0:
            raise GQAOptError(f"bytes_per_value must be positive, got {self.bytes_per_value}")

    def to_bytes(self, values):
        return values * self.bytes_per_value


BF16 = Precision(2.0)


@dataclass(frozen=True)
class InferenceCost:
    flops_invariant: float
    flops_variant: float
    mem_invariant: float
    mem_variant: float
    context_length: int

    @property
    def flops_total(self):
        return self.flops_invariant + self.flops_variant

    @property
    def mem_total(self):
        return self.mem_invariant + self.mem_variant


def inference_terms(n_params, n_layers, head_dim, n_h, n_kv, T) -> InferenceCost:
    """Raw per-token cost terms; every argument may be a scalar or an array."""
    if np.any(np.asarray(T) < 0):
        raise GQAOptError("context length must be >= 0")
    return InferenceCost(
        flops_invariant=2 * n_params,
        flops_variant=4 * T * n_layers * head_dim * n_h,
        mem_invariant=n_params,
        mem_variant=2 * T * n_layers * head_dim * n_kv,
        context_length=T,
    )


def inference_cost(n_params, shape: ModelShape, heads: AttentionHeads, T: int) -> InferenceCost:
    """FLOPs and memory (values) needed to process one token after ``T`` context tokens."""
    return inference_terms(n_params, shape.n_layers, shape.head_dim, heads.n_h, heads.n_kv, T)


def hardware_values(mem_total, flops_total, params: HardwareCostParams):
    return params.lam * mem_total ** params.alpha + (1 - params.lam) * flops_total ** params.beta


def hardware_cost(cost: InferenceCost, params: HardwareCostParams = HardwareCostParams()) -> float:
    """Scalar cost blending memory and compute with a convex weight and power transforms."""
    if cost.mem_total <= 0 or cost.flops_total <= 0:
        raise GQAOptError("cost totals must be positive")
    try:
        z = hardware_values(cost.mem_total, cost.flops_total, params)
    except OverflowError:
        z = math.inf
    if not math.isfinite(z):
        raise GQAOptError(f"hardware cost is not finite ({z})")
    return z


def objective_values(mem_total, flops_total, params: HardwareCostParams,
                     objective: Objective = Objective.HARDWARE):
    objective = Objective(objective)
    if objective is Objective.HARDWARE:
        return hardware_values(mem_total, flops_total, params)
    if objective is Objective.MEMORY:
        return mem_total
    return flops_total


@dataclass(frozen=True)
class TrainingCost:
    flops: float
    memory: float
    train_tokens: float
    mean_context: float


def training_cost(n_params, shape: ModelShape, heads: AttentionHeads,
                  train_tokens, train_context: int) -> TrainingCost:
    """Training FLOPs (backward = 2x forward) and memory for fixed-length sequences.

    The mean preceding context is half the training length; the attention term is
    written with ``train_context`` directly so integer inputs stay exact.
    """
    if not train_tokens > 0:
        raise GQAOptError(f"train_tokens must be positive, got {train_tokens}")
    if not train_context > 0:
        raise GQAOptError(f"train_context must be positive, got {train_context}")
    attention = shape.n_layers * train_context * shape.head_dim * heads.n_h
    return TrainingCost(
        flops=6 * train_tokens * n_params + 6 * train_tokens * attention,
        memory=4 * n_params + train_context * shape.hidden_size * shape.n_layers,
        train_tokens=train_tokens,
        mean_context=train_context / 2,
    )


def tokens_under_budget(flops_budget, n_params, shape: ModelShape, heads: AttentionHeads,
                        train_context: int) -> float:
    """Training tokens affordable under ``flops_budget``; inverse of ``training_cost``."""
    if not flops_budget > 0:
        raise GQAOptError(f"flops budget must be positive, got {flops_budget}")
    if not train_context > 0:
        raise GQAOptError(f"train_context must be positive, got {train_context}")
    per_token = 6 * (n_params + shape.n_layers * train_context * shape.head_dim * heads.n_h)
    return flops_budget / per_token


FLOPS_COMPONENTS = ("input_embedding", "attention_projections", "attention_computation",
                    "ffn", "output_embedding")
MEMORY_COMPONENTS = ("parameters", "kv_cache")


@dataclass(frozen=True)
class CostBreakdown:
    flops: dict
    memory: dict
    precision: Precision = BF16

    @staticmethod
    def _fractions(parts: dict) -> dict:
        total = sum(parts.values())
        if total == 0:
            return {k: 0.0 for k in parts}
        return {k: v / total for k, v in parts.items()}

    @property
    def flops_fractions(self) -> dict:
        return self._fractions(self.flops)

    @property
    def memory_fractions(self) -> dict:
        return self._fractions(self.memory)

    @property
    def memory_bytes(self) -> dict:
        return {k: self.precision.to_bytes(v) for k, v in self.memory.items()}

    @property
    def flops_total(self):
        return sum(self.flops.values())

    @property
    def memory_total(self):
        return sum(self.memory.values())


def component_breakdown(shape: ModelShape, heads: AttentionHeads, T: int,
                        mode: FfnMode = FfnMode.TABLE2,
                        precision: Precision = BF16) -> CostBreakdown:
    if T < 0:
        raise GQAOptError("context length must be >= 0")
    mode = FfnMode(mode)
    L, d, dh = shape.n_layers, shape.hidden_size, shape.head_dim
    flops = {
        "input_embedding": 0,
        "attention_projections": 4 * L * d * dh * (heads.n_h + heads.n_kv),
        "attention_computation": 4 * L * T * heads.n_h * dh,
        "ffn": 2 * mode.matrices * L * d * shape.ffn_size,
        "output_embedding": 2 * d * shape.vocab_size,
    }
    memory = {
        "parameters": count_params(shape, heads, mode).total,
        "kv_cache": 2 * T * L * dh * heads.n_kv,
    }
    return CostBreakdown(flops, memory, precision)
