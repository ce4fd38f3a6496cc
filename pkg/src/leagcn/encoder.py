"""Dual-channel external-attention sequence encoder.

Sequences in a batch are stored ragged: all positions of all sequences are
stacked into one (N, d) block and ``segments[r]`` says which sequence row r
belongs to. Every per-sequence reduction is a segment op, so a batch of
variable-length prefixes costs one pass with no padding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .numerics import ag
from .numerics.autograd import Tensor

POOLINGS = ("mean", "last")


@dataclass(frozen=True)
class RaggedBatch:
    items: np.ndarray       # (N,) item index per row
    positions: np.ndarray   # (N,) hybrid position per row
    segments: np.ndarray    # (N,) sequence id per row, non-decreasing
    n_segments: int
    last: np.ndarray        # (n_segments,) row index of each sequence's final position

    @classmethod
    def from_views(cls, views: Sequence[tuple[Sequence[int], Sequence[int]]]) -> "RaggedBatch":
        """Build from per-sequence (items, positions) pairs; every sequence must be non-empty."""
        lengths = np.array([len(items) for items, _ in views], dtype=np.int64)
        if len(views) == 0 or np.any(lengths == 0):
            raise ValueError("every sequence in a batch needs at least one position")
        items = np.fromiter((i for its, _ in views for i in its), dtype=np.int64, count=int(lengths.sum()))
        positions = np.fromiter((p for _, ps in views for p in ps), dtype=np.int64, count=int(lengths.sum()))
        return cls(items, positions, np.repeat(np.arange(len(views)), lengths), len(views),
                   np.cumsum(lengths) - 1)


def ea_attention_map(e_seq: Tensor, v_seq: Tensor | None, m_k: Tensor, alpha: float,
                     segments: np.ndarray, n_segments: int) -> Tensor:
    """(N, S) external-attention map with double normalization.

    Scores (E + alpha V) M_k^T get a softmax over memory slots per row, then
    each slot column is L1-normalized over the rows of its own sequence.
    The second step is done as a per-segment column softmax of the row
    log-softmax: the same map, but a slot whose mass underflows at every
    position still gets a proper column instead of 0/0.
    """
    if e_seq.shape[0] == 0:
        raise ValueError("ea_attention_map: empty sequence")
    query = e_seq
    if alpha != 0.0 and v_seq is not None:
        query = ag.add(e_seq, ag.scale(v_seq, alpha))
    scores = ag.matmul(query, ag.transpose(m_k))
    return ag.segment_softmax(ag.log_softmax_rows(scores), segments, n_segments)


def pool(rows: Tensor, batch: RaggedBatch, pooling: str) -> Tensor:
    if pooling == "mean":
        return ag.segment_mean(rows, batch.segments, batch.n_segments)
    if pooling == "last":
        return ag.gather(rows, batch.last)
    raise ValueError(f"unknown pooling {pooling!r}; expected one of {POOLINGS}")


def ea_channel1(e_seq: Tensor, v_seq: Tensor | None, heads: Sequence[tuple[Tensor, Tensor]], w1: Tensor,
                alpha: float, batch: RaggedBatch, pooling: str = "last") -> Tensor:
    """Multi-head external attention, one (M_k, M_v) pair per head of width d / heads."""
    d = e_seq.shape[1]
    n_heads = len(heads)
    if n_heads == 0 or d % n_heads:
        raise ValueError(f"head count {n_heads} must divide model dimension {d}")
    width = d // n_heads
    outputs = []
    for h, (m_k, m_v) in enumerate(heads):
        lo, hi = h * width, (h + 1) * width
        e_h = ag.slice_cols(e_seq, lo, hi) if n_heads > 1 else e_seq
        v_h = None
        if v_seq is not None:
            v_h = ag.slice_cols(v_seq, lo, hi) if n_heads > 1 else v_seq
        attn = ea_attention_map(e_h, v_h, m_k, alpha, batch.segments, batch.n_segments)
        outputs.append(ag.matmul(attn, m_v))
    merged = ag.concat(outputs) if n_heads > 1 else outputs[0]
    return pool(ag.matmul(merged, w1), batch, pooling)


def mlp_channel2(e_seq: Tensor, w2: Tensor, b: Tensor, w3: Tensor, batch: RaggedBatch) -> Tensor:
    """Score every position against its sequence's last item with a one-hidden-layer MLP,
    softmax the scores within each sequence, and return the weighted item sum."""
    anchors = ag.gather(ag.gather(e_seq, batch.last), batch.segments)
    hidden = ag.relu(ag.add(ag.matmul(ag.concat([e_seq, anchors]), w2), b))
    weights = ag.segment_softmax(ag.matmul(hidden, w3), batch.segments, batch.n_segments)
    return ag.segment_sum(ag.scale_rows(e_seq, weights), batch.segments, batch.n_segments)


def fuse(h1: Tensor | None, h2: Tensor, e_user: Tensor) -> Tensor:
    if e_user.shape != h2.shape or (h1 is not None and h1.shape != h2.shape):
        shapes = [t.shape for t in (h1, h2, e_user) if t is not None]
        raise ag.ShapeError(f"shape mismatch in fuse: {shapes}")
    first = h2 if h1 is None else ag.add(h1, h2)
    return ag.concat([first, e_user])


def encode(params: Mapping[str, Tensor], items_table: Tensor, batch: RaggedBatch, *,
           alpha: float, n_heads: int, pooling: str, use_ea: bool, use_mlp: bool) -> Tensor:
    """Sequence vectors (n_segments, d) before fusion with the user embedding.

    With both channels off this degrades to a plain mean of the item embeddings.
    """
    e_seq = ag.gather(items_table, batch.items)
    if not use_ea and not use_mlp:
        return ag.segment_mean(e_seq, batch.segments, batch.n_segments)
    out = None
    if use_ea:
        v_seq = ag.gather(params["pos.table"], batch.positions) if alpha != 0.0 else None
        heads = [(params[f"ea.head{h}.Mk"], params[f"ea.head{h}.Mv"]) for h in range(n_heads)]
        out = ea_channel1(e_seq, v_seq, heads, params["ea.W1"], alpha, batch, pooling)
    if use_mlp:
        h2 = mlp_channel2(e_seq, params["ch2.W2"], params["ch2.b"], params["ch2.W3"], batch)
        out = h2 if out is None else ag.add(out, h2)
    return out
