"""Model shapes, head configurations, parameter counts and size resolution.

Shapes may be fractional while searching over model size; every formula here
is written with plain arithmetic so it accepts Python ints (exact), floats, or
numpy arrays (vectorized) interchangeably.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .errors import GQAOptError, OutOfRangeError

DEFAULT_HEAD_DIM = 64
DEFAULT_VOCAB = 50304
FFN_MULTIPLE = 32
WIDTH_MULTIPLE = 128
EXTRAPOLATION_LIMIT = 4.0

SizeField = Literal["total", "nonemb"]


class FfnMode(str, enum.Enum):
    """How many projection matrices an FFN block carries."""

    TABLE2 = "table2"
    GATED = "gated"

    @property
    def matrices(self) -> int:
        return 2 if self is FfnMode.TABLE2 else 3


@dataclass(frozen=True, order=True)
class AttentionHeads:
    n_h: int
    n_kv: int

    def __post_init__(self):
        for name in ("n_h", "n_kv"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise GQAOptError(f"{name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.n_h < 1 or self.n_kv < 1:
            raise GQAOptError(f"head counts must be >= 1, got {self}")
        if self.n_kv > self.n_h:
            raise GQAOptError(f"n_kv ({self.n_kv}) exceeds n_h ({self.n_h})")
        if self.n_h % self.n_kv:
            raise GQAOptError(f"n_h ({self.n_h}) is not a multiple of n_kv ({self.n_kv})")

    @property
    def group_size(self) -> int:
        return self.n_h // self.n_kv

    def __str__(self) -> str:
        return f"({self.n_h}, {self.n_kv})"


@dataclass(frozen=True)
class ModelShape:
    n_layers: float
    hidden_size: float
    ffn_size: float
    head_dim: int = DEFAULT_HEAD_DIM
    vocab_size: int = DEFAULT_VOCAB

    def __post_init__(self):
        for name in ("n_layers", "hidden_size", "ffn_size", "head_dim", "vocab_size"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise GQAOptError(f"{name} must be positive and finite, got {v!r}")

    @property
    def is_concrete(self) -> bool:
        return all(
            float(v).is_integer() for v in (self.n_layers, self.hidden_size, self.ffn_size)
        ) and self.ffn_size % FFN_MULTIPLE == 0

    @property
    def aspect_ratio(self) -> float:
        return self.hidden_size / self.n_layers

    @classmethod
    def concrete(cls, n_layers: int, hidden_size: int, head_dim: int = DEFAULT_HEAD_DIM,
                 vocab_size: int = DEFAULT_VOCAB) -> "ModelShape":
        """Integral shape with the FFN width derived from the hidden size."""
        return cls(int(n_layers), int(hidden_size), derive_ffn_width(hidden_size),
                   head_dim, vocab_size)


@dataclass(frozen=True)
class ParamCount:
    embedding: float
    attention_projections: float
    ffn: float

    @property
    def total(self):
        return self.embedding + self.attention_projections + self.ffn

    @property
    def non_embedding(self):
        return self.attention_projections + self.ffn

    def size(self, size_field: SizeField = "total"):
        if size_field == "total":
            return self.total
        if size_field == "nonemb":
            return self.non_embedding
        raise GQAOptError(f"unknown size field {size_field!r}")


def derive_ffn_width(hidden_size: int) -> int:
    """Multiple of 32 closest to 8/3 of ``hidden_size``; exact ties go down."""
    if int(hidden_size) != hidden_size:
        raise GQAOptError(f"hidden_size must be an integer, got {hidden_size!r}")
    d = int(hidden_size)
    if d < FFN_MULTIPLE:
        raise GQAOptError(f"hidden_size must be >= {FFN_MULTIPLE}, got {d}")
    # compare distances scaled by 3 to stay in integers
    k = (8 * d) // (3 * FFN_MULTIPLE)
    below = 8 * d - 3 * FFN_MULTIPLE * k
    above = 3 * FFN_MULTIPLE * (k + 1) - 8 * d
    return FFN_MULTIPLE * (k + 1) if above < below else FFN_MULTIPLE * k


def param_terms(n_layers, hidden_size, ffn_size, n_h, n_kv,
                head_dim=DEFAULT_HEAD_DIM, vocab_size=DEFAULT_VOCAB,
                mode: FfnMode = FfnMode.TABLE2) -> ParamCount:
    """Component counts from raw hyperparameters (scalars or arrays, heads may be real)."""
    mode = FfnMode(mode)
    return ParamCount(
        embedding=hidden_size * vocab_size,
        attention_projections=2 * n_layers * hidden_size * head_dim * (n_h + n_kv),
        ffn=mode.matrices * n_layers * hidden_size * ffn_size,
    )


def count_params(shape: ModelShape, heads: AttentionHeads,
                 mode: FfnMode = FfnMode.TABLE2) -> ParamCount:
    """Parameter counts with tied input/output embeddings; norms and rotary ignored."""
    return param_terms(shape.n_layers, shape.hidden_size, shape.ffn_size,
                       heads.n_h, heads.n_kv, shape.head_dim, shape.vocab_size, mode)


def nearest_power_of_two(x) -> int:
    """Power of two closest to ``x`` on a linear scale; ties round up."""
    x = Fraction(x)
    if x < 1:
        raise GQAOptError(f"need x >= 1, got {x}")
    lo = 1 << (math.floor(x).bit_length() - 1)
    hi = lo * 2
    return lo if x - lo < hi - x else hi


def candidate_set(d_max: int, head_dim: int = DEFAULT_HEAD_DIM) -> list[AttentionHeads]:
    """All power-of-two (n_h, n_kv) pairs with n_kv <= n_h up to round(d_max/head_dim)."""
    if head_dim <= 0 or d_max < head_dim:
        raise GQAOptError(f"d_max ({d_max}) must be >= head_dim ({head_dim})")
    k = nearest_power_of_two(Fraction(d_max) / Fraction(head_dim))
    values = [1 << i for i in range(k.bit_length())]
    return [AttentionHeads(h, kv) for h in values for kv in values if kv <= h]


# -- head-assignment rules -------------------------------------------------

HeadsRule = Callable[[object], tuple]


def fixed_heads(heads: AttentionHeads) -> HeadsRule:
    def rule(hidden_size):
        return heads.n_h, heads.n_kv
    rule.heads = heads
    return rule


def mha_heads(head_dim: int = DEFAULT_HEAD_DIM) -> HeadsRule:
    """n_h = n_kv = d / d_h (possibly fractional)."""
    def rule(hidden_size):
        n = hidden_size / head_dim
        return n, n
    return rule


def grouped_heads(n_kv: float, head_dim: int = DEFAULT_HEAD_DIM) -> HeadsRule:
    """n_h = d / d_h with a fixed number of KV heads, as in Llama-3."""
    def rule(hidden_size):
        return hidden_size / head_dim, n_kv
    return rule


def as_rule(heads) -> HeadsRule:
    if isinstance(heads, AttentionHeads):
        return fixed_heads(heads)
    if callable(heads):
        return heads
    raise GQAOptError(f"cannot build a heads rule from {heads!r}")


# -- family tables ---------------------------------------------------------

@dataclass(frozen=True)
class Anchor:
    param_count: float
    n_layers: int
    hidden_size: int
    label: str = ""

    @property
    def aspect_ratio(self) -> float:
        return self.hidden_size / self.n_layers


# (label, L, d) for the MHA scaling-law ladder and the larger aspect-ratio anchors
BUILTIN_ANCHORS = (
    ("3M", 4, 256),
    ("19M", 6, 512),
    ("85M", 12, 768),
    ("150M", 12, 1024),
    ("200M", 16, 1024),
    ("470M", 24, 1280),
    ("680M", 24, 1536),
    ("1.2B", 36, 1536),
    ("1.8B", 36, 2048),
    ("4B", 48, 2560),
    ("6B", 54, 3072),
    ("13B", 64, 4096),
    ("33B", 72, 6144),
    ("64B", 80, 8192),
)


@dataclass(frozen=True)
class FamilyTable:
    anchors: tuple
    head_dim: int = DEFAULT_HEAD_DIM
    vocab_size: int = DEFAULT_VOCAB
    _log_sizes: np.ndarray = field(init=False, repr=False, compare=False)
    _ratios: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        anchors = tuple(self.anchors)
        object.__setattr__(self, "anchors", anchors)
        if len(anchors) < 2:
            raise GQAOptError("a family table needs at least two anchors")
        sizes = [a.param_count for a in anchors]
        if any(s <= 0 for s in sizes):
            raise GQAOptError("anchor param counts must be positive")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise GQAOptError("anchors must be strictly increasing in param_count")
        shapes = [(a.n_layers, a.hidden_size) for a in anchors]
        if len(set(shapes)) != len(shapes):
            raise GQAOptError("anchors must have distinct (n_layers, hidden_size)")
        object.__setattr__(self, "_log_sizes", np.log(np.asarray(sizes, dtype=float)))
        object.__setattr__(self, "_ratios",
                           np.asarray([a.aspect_ratio for a in anchors], dtype=float))

    @classmethod
    def from_shapes(cls, shapes: Iterable[tuple], mode: FfnMode = FfnMode.TABLE2,
                    size_field: SizeField = "nonemb", head_dim: int = DEFAULT_HEAD_DIM,
                    vocab_size: int = DEFAULT_VOCAB) -> "FamilyTable":
        """Anchors from (label, L, d) triples, sized by exact MHA parameter counts."""
        anchors = []
        for label, n_layers, hidden in shapes:
            shape = ModelShape.concrete(n_layers, hidden, head_dim, vocab_size)
            n = hidden // head_dim
            size = count_params(shape, AttentionHeads(n, n), mode).size(size_field)
            anchors.append(Anchor(size, n_layers, hidden, label))
        return cls(tuple(anchors), head_dim, vocab_size)

    @property
    def min_size(self) -> float:
        return self.anchors[0].param_count

    @property
    def max_size(self) -> float:
        return self.anchors[-1].param_count

    @property
    def max_hidden(self) -> int:
        return max(a.hidden_size for a in self.anchors)

    def size_bounds(self) -> tuple[float, float]:
        return self.min_size / EXTRAPOLATION_LIMIT, self.max_size * EXTRAPOLATION_LIMIT

    def _ratio_array(self, n_params):
        """Aspect ratio for an array of sizes; NaN outside the extrapolation clamp."""
        x = np.log(np.asarray(n_params, dtype=float))
        xs, ys = self._log_sizes, self._ratios
        a = np.interp(x, xs, ys)
        lo_slope = (ys[1] - ys[0]) / (xs[1] - xs[0])
        hi_slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        a = np.where(x < xs[0], ys[0] + lo_slope * (x - xs[0]), a)
        a = np.where(x > xs[-1], ys[-1] + hi_slope * (x - xs[-1]), a)
        lo, hi = self.size_bounds()
        n = np.exp(x)
        ok = (n >= lo * (1 - 1e-12)) & (n <= hi * (1 + 1e-12)) & (a > 0)
        return np.where(ok, a, np.nan)

    def aspect_ratio(self, n_params: float) -> float:
        """Width-to-depth ratio for an arbitrary size, interpolated in log-size."""
        self._check_range(n_params)
        return float(self._ratio_array(n_params))

    def _check_range(self, n_params):
        lo, hi = self.size_bounds()
        if n_params < lo * (1 - 1e-12):
            raise OutOfRangeError(
                f"size {n_params:.6g} is below the supported floor {lo:.6g} "
                f"(smallest anchor / {EXTRAPOLATION_LIMIT:g})", bound="lower")
        if n_params > hi * (1 + 1e-12):
            raise OutOfRangeError(
                f"size {n_params:.6g} is above the supported ceiling {hi:.6g} "
                f"(largest anchor x {EXTRAPOLATION_LIMIT:g})", bound="upper")
        if n_params < self.min_size or n_params > self.max_size:
            warnings.warn(f"size {n_params:.6g} extrapolates the family table", stacklevel=3)


def default_family(mode: FfnMode = FfnMode.TABLE2, size_field: SizeField = "nonemb",
                   head_dim: int = DEFAULT_HEAD_DIM,
                   vocab_size: int = DEFAULT_VOCAB) -> FamilyTable:
    return FamilyTable.from_shapes(BUILTIN_ANCHORS, mode, size_field, head_dim, vocab_size)


# -- size resolution -------------------------------------------------------

def _size_of(n_layers, ratio, rule, mode, size_field, head_dim, vocab_size):
    d = ratio * n_layers
    n_h, n_kv = rule(d)
    terms = param_terms(n_layers, d, 8.0 * d / 3.0, n_h, n_kv, head_dim, vocab_size, mode)
    return terms.size(size_field)


def solve_layers(n_params, ratio, heads_rule, mode=FfnMode.TABLE2,
                 size_field: SizeField = "nonemb", head_dim=DEFAULT_HEAD_DIM,
                 vocab_size=DEFAULT_VOCAB, iterations: int = 200):
    """Bisection for the (real) layer count whose size matches ``n_params``.

    Works elementwise on arrays; size must be increasing in L at fixed aspect ratio.
    """
    n = np.asarray(n_params, dtype=float)
    a = np.asarray(ratio, dtype=float)
    n, a = np.broadcast_arrays(n, a)

    def f(L):
        return _size_of(L, a, heads_rule, mode, size_field, head_dim, vocab_size) - n

    lo = np.zeros_like(n)
    hi = np.ones_like(n)
    for _ in range(64):
        short = f(hi) < 0
        if not short.any():
            break
        hi = np.where(short, hi * 2, hi)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        below = f(mid) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-15 * hi):
            break
    return 0.5 * (lo + hi)


def resolve_shape_from_size(n_params: float, family: FamilyTable, heads_rule,
                            mode: FfnMode = FfnMode.TABLE2,
                            size_field: SizeField = "nonemb") -> ModelShape:
    """Fractional (L, d, d_ff) whose parameter count equals ``n_params``."""
    rule = as_rule(heads_rule)
    ratio = family.aspect_ratio(n_params)
    L = float(solve_layers(n_params, ratio, rule, mode, size_field,
                           family.head_dim, family.vocab_size))
    d = ratio * L
    return ModelShape(L, d, 8.0 * d / 3.0, family.head_dim, family.vocab_size)


def resolve_arrays(n_params, family: FamilyTable, heads_rule,
                   mode: FfnMode = FfnMode.TABLE2, size_field: SizeField = "nonemb"):
    """Vectorized resolution: returns (L, d, d_ff) arrays, NaN where out of range."""
    rule = as_rule(heads_rule)
    n = np.asarray(n_params, dtype=float)
    ratio = family._ratio_array(n)
    valid = np.isfinite(ratio)
    L = np.full(n.shape, np.nan)
    if valid.any():
        L[valid] = solve_layers(n[valid], ratio[valid], rule, mode, size_field,
                                family.head_dim, family.vocab_size)
    d = ratio * L
    return L, d, 8.0 * d / 3.0


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def nearest_concrete_config(fractional: ModelShape, heads: AttentionHeads | None = None,
                            width_multiple: int = WIDTH_MULTIPLE) -> ModelShape:
    """Round L to an integer and d to a multiple of ``width_multiple``; d_ff re-derived.

    ``heads`` are carried unchanged by the caller; accepted here for symmetry.
    """
    L = max(1, _round_half_up(fractional.n_layers))
    d = max(width_multiple,
            width_multiple * _round_half_up(fractional.hidden_size / width_multiple))
    return ModelShape(L, d, derive_ffn_width(d), fractional.head_dim, fractional.vocab_size)


def heads_from_pairs(pairs: Sequence[Sequence[int]]) -> list[AttentionHeads]:
    return [AttentionHeads(int(h), int(kv)) for h, kv in pairs]
