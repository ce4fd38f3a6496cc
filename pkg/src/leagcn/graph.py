"""Cross-domain user-item graph and its normalized propagation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .data import HybridSequence
from .numerics import ag
from .numerics.autograd import Tensor


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CdsGraph:
    """Per-domain binary user-item incidences linked through shared users.

    ``edges_a`` rows are (user k, A-item i); ``edges_b`` rows are (user k, B-item j).
    Same-domain item transitions are recorded but never propagated over.
    """

    n_users: int
    n_items_a: int
    n_items_b: int
    edges_a: np.ndarray
    edges_b: np.ndarray
    transitions_a: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    transitions_b: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    @cached_property
    def deg_item_a(self) -> np.ndarray:
        return np.bincount(self.edges_a[:, 1], minlength=self.n_items_a)

    @cached_property
    def deg_item_b(self) -> np.ndarray:
        return np.bincount(self.edges_b[:, 1], minlength=self.n_items_b)

    @cached_property
    def deg_user_a(self) -> np.ndarray:
        return np.bincount(self.edges_a[:, 0], minlength=self.n_users)

    @cached_property
    def deg_user_b(self) -> np.ndarray:
        return np.bincount(self.edges_b[:, 0], minlength=self.n_users)

    def _norm(self, edges, n_items, deg_user, deg_item) -> sp.csr_matrix:
        k, i = edges[:, 0], edges[:, 1]
        du, di = deg_user[k], deg_item[i]
        if np.any(du == 0) or np.any(di == 0):
            raise GraphError("zero degree on an edge endpoint")
        coef = 1.0 / np.sqrt(du.astype(np.float64) * di)
        return sp.csr_matrix((coef, (k, i)), shape=(self.n_users, n_items))

    @cached_property
    def norm_a(self) -> sp.csr_matrix:
        """p x m matrix with 1/sqrt(deg_UA(k) deg_A(i)) on every edge (k, i)."""
        return self._norm(self.edges_a, self.n_items_a, self.deg_user_a, self.deg_item_a)

    @cached_property
    def norm_b(self) -> sp.csr_matrix:
        return self._norm(self.edges_b, self.n_items_b, self.deg_user_b, self.deg_item_b)

    @cached_property
    def norm_a_t(self) -> sp.csr_matrix:
        return self.norm_a.T.tocsr()

    @cached_property
    def norm_b_t(self) -> sp.csr_matrix:
        return self.norm_b.T.tocsr()

    def dump(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for k, i in self.edges_a:
                fh.write(f"{k}\t{i}\tA\n")
            for k, j in self.edges_b:
                fh.write(f"{k}\t{j}\tB\n")


def _unique_pairs(pairs: list[tuple[int, int]]) -> np.ndarray:
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.asarray(pairs, dtype=np.int64), axis=0)


def build_graph(train: Iterable[HybridSequence], sizes: tuple[int, int, int]) -> CdsGraph:
    """Graph over the training sequences only; repeat interactions collapse to one edge."""
    p, m, n = sizes
    bounds = {"A": m, "B": n}
    edges = {"A": [], "B": []}
    trans = {"A": [], "B": []}
    for seq in train:
        if not 0 <= seq.user < p:
            raise GraphError(f"user index {seq.user} outside vocabulary of size {p}")
        prev: dict[str, int] = {}
        for item, dom in zip(seq.items, seq.domains):
            if not 0 <= item < bounds[dom]:
                raise GraphError(f"domain-{dom} item index {item} outside vocabulary of size {bounds[dom]}")
            edges[dom].append((seq.user, item))
            if dom in prev:
                trans[dom].append((prev[dom], item))
            prev[dom] = item
    return CdsGraph(p, m, n, _unique_pairs(edges["A"]), _unique_pairs(edges["B"]),
                    _unique_pairs(trans["A"]), _unique_pairs(trans["B"]))


def slap_propagate(graph: CdsGraph, e_user: Tensor, e_a: Tensor, e_b: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """One round of symmetric-normalized user<->item aggregation in both domains.

    Users gather from their A- and B-items; items gather from their users only.
    Nodes without edges come out as zero rows.
    """
    if e_user.shape[0] != graph.n_users or e_a.shape[0] != graph.n_items_a or e_b.shape[0] != graph.n_items_b:
        raise ag.ShapeError(
            f"embedding tables {e_user.shape}, {e_a.shape}, {e_b.shape} do not match graph sizes "
            f"({graph.n_users}, {graph.n_items_a}, {graph.n_items_b})")
    users = ag.add(ag.spmm(graph.norm_a, e_a), ag.spmm(graph.norm_b, e_b))
    items_a = ag.spmm(graph.norm_a_t, e_user)
    items_b = ag.spmm(graph.norm_b_t, e_user)
    return users, items_a, items_b


def multilayer_propagate(graph: CdsGraph, e_user: Tensor, e_a: Tensor, e_b: Tensor,
                         layers: int, combine: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Stack ``layers`` propagation rounds; ``combine`` averages layers 0..L."""
    if layers < 1:
        raise ValueError(f"layers must be >= 1, got {layers}")
    history = [(e_user, e_a, e_b)]
    for _ in range(layers):
        history.append(slap_propagate(graph, *history[-1]))
    if not combine:
        return history[-1]
    w = 1.0 / (layers + 1)
    out = []
    for parts in zip(*history):
        acc = parts[0]
        for t in parts[1:]:
            acc = ag.add(acc, t)
        out.append(ag.scale(acc, w))
    return tuple(out)
