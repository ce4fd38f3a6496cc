"""Parameter accounting and attention-cost scaling benchmarks."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import encoder
from .config import ModelConfig
from .model import ModelState, Sizes, param_shapes
from .numerics import ag
from .numerics.autograd import Tensor
from .numerics.rng import stream, xavier_init

COMPONENTS = {"emb": "embedding", "pos": "positional", "ea": "ea", "ch2": "channel2", "head": "prediction"}


@dataclass
class ParamReport:
    rows: list[tuple[str, tuple[int, ...], int]]
    dim: int | None = None
    ea_count: int = 0
    self_attention_count: int = 0
    totals: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(count for _, _, count in self.rows)

    @property
    def ea_smaller(self) -> bool:
        return self.ea_count < self.self_attention_count

    def to_tsv(self) -> str:
        lines = [f"{name}\t{'x'.join(map(str, shape))}\t{count}" for name, shape, count in self.rows]
        lines += [f"component:{c}\t-\t{n}" for c, n in self.totals.items()]
        lines.append(f"total\t-\t{self.total}")
        if self.dim is not None:
            lines.append(f"compare:ea_channel1\t-\t{self.ea_count}")
            lines.append(f"compare:self_attention\t-\t{self.self_attention_count}")
        return "\n".join(lines) + "\n"


def _report(shapes: Mapping[str, tuple[int, ...]], dim: int | None) -> ParamReport:
    rows = [(name, tuple(shape), math.prod(shape)) for name, shape in shapes.items()]
    totals: dict[str, int] = {}
    for name, _, count in rows:
        comp = COMPONENTS.get(name.split(".", 1)[0], "other")
        totals[comp] = totals.get(comp, 0) + count
    report = ParamReport(rows, dim, totals=totals)
    if dim is not None:
        report.ea_count = totals.get("ea", 0)
        report.self_attention_count = self_attention_param_count(dim)
    return report


def count_parameters(model: ModelState | tuple[ModelConfig, Sizes]) -> ParamReport:
    """Per-tensor counts from a built model, or from (config, sizes) without building one."""
    if isinstance(model, ModelState):
        return _report({n: t.data.shape for n, t in model.params.items()}, model.config.dim)
    config, sizes = model
    return _report(param_shapes(config, sizes), config.dim)


def report_from_arrays(arrays: Mapping[str, np.ndarray]) -> ParamReport:
    """Report rebuilt from checkpoint tensors alone."""
    shapes = {n: a.shape for n, a in arrays.items()}
    dim = shapes["emb.user"][1] if "emb.user" in shapes else None
    return _report(shapes, dim)


def analytic_counts(config: ModelConfig, sizes: Sizes) -> dict[str, int]:
    """Closed-form per-component parameter counts."""
    d, s, h = config.dim, config.slots, config.hidden_dim
    counts = {"embedding": (sizes.users + sizes.items_a + sizes.items_b) * d}
    if config.variant in ("full", "pos-off"):
        counts["positional"] = sizes.max_len * d
        counts["ea"] = ea_param_count(d, s, config.heads)
    if config.variant != "all-off":
        counts["channel2"] = 2 * d * h + 2 * h
    counts["prediction"] = (sizes.items_a + sizes.items_b) * (4 * d + 1)
    return counts


def ea_param_count(dim: int, slots: int, heads: int) -> int:
    """Memories (two S x d/heads per head) plus the d x d output map: 2*S*d + d^2."""
    return heads * 2 * slots * (dim // heads) + dim * dim


def self_attention_param_count(dim: int) -> int:
    return 4 * dim * dim


# ---------------------------------------------------------------- reference encoder

def self_attention_params(dim: int, seed: int) -> dict[str, Tensor]:
    return {name: Tensor(xavier_init((dim, dim), seed, name), requires_grad=True, name=name)
            for name in ("sa.Wq", "sa.Wk", "sa.Wv", "sa.Wo")}


def self_attention_reference(e_seq: Tensor, v_seq: Tensor | None, alpha: float,
                             params: Mapping[str, Tensor]) -> Tensor:
    """Single-layer scaled dot-product self-attention with output map, mean-pooled to (1, d)."""
    x = e_seq if (v_seq is None or alpha == 0.0) else ag.add(e_seq, ag.scale(v_seq, alpha))
    d = x.shape[1]
    q = ag.matmul(x, params["sa.Wq"])
    k = ag.matmul(x, params["sa.Wk"])
    v = ag.matmul(x, params["sa.Wv"])
    attn = ag.softmax_rows(ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(d)))
    out = ag.matmul(ag.matmul(attn, v), params["sa.Wo"])
    n = x.shape[0]
    return ag.segment_mean(out, np.zeros(n, dtype=np.int64), 1)


def ea_params(dim: int, slots: int, heads: int, seed: int) -> dict[str, Tensor]:
    width = dim // heads
    params = {}
    for h in range(heads):
        for kind in ("Mk", "Mv"):
            name = f"ea.head{h}.{kind}"
            params[name] = Tensor(xavier_init((slots, width), seed, name), requires_grad=True, name=name)
    params["ea.W1"] = Tensor(xavier_init((dim, dim), seed, "ea.W1"), requires_grad=True, name="ea.W1")
    return params


# ---------------------------------------------------------------- scaling benchmark

@dataclass
class ScalingReport:
    times: dict[str, list[tuple[int, float]]]
    exponents: dict[str, float]

    def to_tsv(self) -> str:
        lines = [f"{enc}\t{t}\t{sec!r}" for enc, pts in self.times.items() for t, sec in pts]
        lines += [f"{enc}\t{exp!r}" for enc, exp in self.exponents.items()]
        return "\n".join(lines) + "\n"


def power_law_exponent(lengths: Sequence[int], seconds: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(seconds, float)), 1)
    return float(slope)


def _timed(fn, repeats: int, min_ticks: int = 10) -> float:
    """Median seconds per call; each repeat loops until it spans ``min_ticks`` clock ticks."""
    tick = time.get_clock_info("perf_counter").resolution
    fn()
    inner = 1
    while True:
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        if time.perf_counter() - start >= min_ticks * tick:
            break
        inner *= 2
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - start) / inner)
    return statistics.median(samples)


def _encoder_fn(kind: str, length: int, dim: int, slots: int, heads: int, alpha: float, seed: int):
    rng = stream(seed, "bench", kind, length)
    e = ag.constant(rng.standard_normal((length, dim)))
    v = ag.constant(rng.standard_normal((length, dim)))
    batch = encoder.RaggedBatch(np.arange(length), np.arange(length), np.zeros(length, dtype=np.int64),
                                1, np.array([length - 1]))
    if kind == "ea":
        raw = ea_params(dim, slots, heads, seed)
        p = {n: ag.constant(t.data) for n, t in raw.items()}
        pairs = [(p[f"ea.head{h}.Mk"], p[f"ea.head{h}.Mv"]) for h in range(heads)]
        return lambda: encoder.ea_channel1(e, v, pairs, p["ea.W1"], alpha, batch)
    if kind == "self_attention":
        p = {n: ag.constant(t.data) for n, t in self_attention_params(dim, seed).items()}
        return lambda: self_attention_reference(e, v, alpha, p)
    raise ValueError(f"unknown encoder {kind!r}")


def time_scaling(encoders: Sequence[str] = ("ea", "self_attention"),
                 lengths: Sequence[int] = (64, 128, 256, 512, 1024, 2048, 4096),
                 repeats: int = 5, dim: int = 16, slots: int = 16, heads: int = 4,
                 alpha: float = 0.3, seed: int = 0) -> ScalingReport:
    """Median forward time per sequence length and the fitted log-log slope per encoder."""
    lengths = list(lengths)
    if len(lengths) < 2 or any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError("lengths must be strictly increasing with at least two points")
    if lengths[-1] < 16 * lengths[0]:
        raise ValueError("lengths must span at least a factor of 16")
    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    times: dict[str, list[tuple[int, float]]] = {}
    for kind in encoders:
        times[kind] = [(t, _timed(_encoder_fn(kind, t, dim, slots, heads, alpha, seed), repeats))
                       for t in lengths]
    exps = {k: power_law_exponent([t for t, _ in pts], [s for _, s in pts]) for k, pts in times.items()}
    return ScalingReport(times, exps)
