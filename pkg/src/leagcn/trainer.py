from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DatasetSplit, HybridSequence, TrainingExample, training_examples
from .graph import CdsGraph
from .model import ModelState, compute_loss, propagate
from .numerics import ag
from .numerics.autograd import NumericalError
from .numerics.optim import adam_step
from .numerics.rng import stream

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochLog:
    epoch: int
    loss_a: float
    loss_b: float
    metrics: dict[str, float] = field(default_factory=dict)

    def to_tsv(self) -> str:
        cols = [str(self.epoch), repr(self.loss_a), repr(self.loss_b)]
        cols += [f"{k}={v!r}" for k, v in self.metrics.items()]
        return "\t".join(cols)


def dataset_loss(state: ModelState, graph: CdsGraph, train: Sequence[HybridSequence],
                 examples: Sequence[TrainingExample], chunk: int = 1024) -> tuple[float, float]:
    """Inference-mode (no dropout) mean losses over every example, weighted by domain counts."""
    tables = propagate(state, graph)
    sums = {"A": 0.0, "B": 0.0}
    counts = {"A": 0, "B": 0}
    for start in range(0, len(examples), chunk):
        part = examples[start:start + chunk]
        l_a, l_b = compute_loss(state, graph, train, part, tables=tables)
        for dom, loss in (("A", l_a), ("B", l_b)):
            n = sum(ex.domain == dom for ex in part)
            if n:
                sums[dom] += float(loss.data) * n
                counts[dom] += n
    return tuple(sums[d] / counts[d] if counts[d] else 0.0 for d in ("A", "B"))


def train_step(state: ModelState, graph: CdsGraph, train: Sequence[HybridSequence],
               batch: Sequence[TrainingExample], rng: np.random.Generator) -> tuple[float, float]:
    cfg = state.config
    l_a, l_b = compute_loss(state, graph, train, batch, training=True, rng=rng)
    grads = ag.backward(ag.add(l_a, l_b), state.params)
    if cfg.optimizer == "joint":
        adam_step(state.arrays(), grads, state.opt_a, cfg.lr_a)
    else:
        group_a, group_b = state.group("A"), state.group("B")
        adam_step(group_a, {n: grads[n] for n in group_a}, state.opt_a, cfg.lr_a)
        adam_step(group_b, {n: grads[n] for n in group_b}, state.opt_b, cfg.lr_b)
    return float(l_a.data), float(l_b.data)


def train(state: ModelState, graph: CdsGraph, split: DatasetSplit,
          on_epoch: Callable[[ModelState, int], dict[str, float]] | None = None) -> list[EpochLog]:
    """Run ``config.epochs`` epochs of shuffled minibatch Adam; returns one log row per epoch.

    The logged losses are recomputed over the whole training set after each
    epoch without dropout, so they are comparable across epochs.
    """
    cfg = state.config
    examples = training_examples(split.train, cfg.loss_mode)
    if not examples:
        raise TrainingError("training split yields no examples")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(examples))
        for b, start in enumerate(range(0, len(examples), cfg.batch_size)):
            batch = [examples[i] for i in order[start:start + cfg.batch_size]]
            try:
                train_step(state, graph, split.train, batch, stream(cfg.seed, "dropout", epoch, b))
            except NumericalError as exc:
                raise TrainingError(f"diverged at epoch {epoch}, batch {b}: {exc}") from exc
        try:
            loss_a, loss_b = dataset_loss(state, graph, split.train, examples)
        except NumericalError as exc:
            raise TrainingError(f"diverged at epoch {epoch} (loss evaluation): {exc}") from exc
        row = EpochLog(epoch, loss_a, loss_b, on_epoch(state, epoch) if on_epoch else {})
        log.info("epoch %d  loss_A=%.5f  loss_B=%.5f %s", epoch, loss_a, loss_b, row.metrics or "")
        history.append(row)
    return history
