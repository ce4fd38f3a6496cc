"""Full-catalog ranking metrics and the layer-depth sweep."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import DatasetSplit, TestCase
from .graph import CdsGraph, build_graph
from .model import ModelState, Sizes, init_model, predict_proba, propagate
from .config import ModelConfig

METRICS = ("RC", "MRR", "NDCG")


def rank_of(scores: np.ndarray, target: int) -> int:
    """1-based rank of ``target``; equal scores rank the lower item index first."""
    s = scores[target]
    return int(np.sum(scores > s) + np.sum(scores[:target] == s) + 1)


def metrics_at_k(ranks: Iterable[int], k: int = 10) -> tuple[float, float, float]:
    """Mean (RC@k, MRR@k, NDCG@k) for single-target rankings."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranks = np.asarray(list(ranks), dtype=np.int64)
    if ranks.size == 0:
        raise ValueError("metrics_at_k needs at least one rank")
    if ranks.min() < 1:
        raise ValueError("ranks are 1-based")
    # correctly rounded sums, so the result does not depend on case order
    hits = [int(r) for r in ranks if r <= k]
    n = ranks.size
    rc = len(hits) / n
    mrr = math.fsum(1.0 / r for r in hits) / n
    ndcg = math.fsum(1.0 / math.log2(r + 1) for r in hits) / n
    return rc, mrr, ndcg


@dataclass(frozen=True)
class RankResult:
    domain: str
    target: int
    rank: int


def rank_test_cases(state: ModelState, graph: CdsGraph, cases: Sequence[TestCase],
                    chunk: int = 512) -> list[RankResult]:
    if not cases:
        raise ValueError("empty test split")
    tables = propagate(state, graph)
    out: list[RankResult] = []
    for start in range(0, len(cases), chunk):
        part = cases[start:start + chunk]
        p_a, p_b = predict_proba(state, graph, [c.prefix for c in part], tables)
        for row, case in enumerate(part):
            out.append(RankResult("A", case.target_a, rank_of(p_a[row], case.target_a)))
            out.append(RankResult("B", case.target_b, rank_of(p_b[row], case.target_b)))
    return out


def evaluate(state: ModelState, graph: CdsGraph, cases: Sequence[TestCase], k: int = 10) -> dict[str, dict[str, float]]:
    """{domain: {metric: mean value}} over the test cases."""
    ranks = rank_test_cases(state, graph, cases)
    table = {}
    for domain in ("A", "B"):
        values = metrics_at_k([r.rank for r in ranks if r.domain == domain], k)
        table[domain] = dict(zip(METRICS, values))
    return table


def metric_rows(table: dict[str, dict[str, float]], k: int) -> list[str]:
    return [f"{dom}\t{name}\t{k}\t{value!r}" for dom, vals in table.items() for name, value in vals.items()]


def layer_sweep(split: DatasetSplit, config: ModelConfig, sizes: Sizes, layers: Sequence[int],
                k: int = 10) -> list[str]:
    """Train one model per propagation depth with identical seed and budget; TSV rows
    ``layers, domain, RC, MRR, NDCG``."""
    from .trainer import train

    if not layers:
        raise ValueError("layer list is empty")
    graph = build_graph(split.train, (sizes.users, sizes.items_a, sizes.items_b))
    rows = []
    for depth in layers:
        state = init_model(config.replace(layers=depth), sizes)
        train(state, graph, split)
        table = evaluate(state, graph, split.test, k)
        for dom in ("A", "B"):
            vals = table[dom]
            rows.append("\t".join([str(depth), dom] + [repr(vals[m]) for m in METRICS]))
    return rows


def expected_uniform_rc(catalog: int, k: int) -> float:
    return min(k, catalog) / catalog if catalog else math.nan
