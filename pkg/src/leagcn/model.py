"""Full model: graph encoder, sequence encoder, dual prediction heads, losses."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import encoder
from .config import ConfigError, ModelConfig, read_flat, coerce, MODEL_KEYS
from .data import HybridSequence, TrainingExample
from .graph import CdsGraph, multilayer_propagate, slap_propagate
from .numerics import ag, checkpoint
from .numerics.autograd import Tensor
from .numerics.optim import AdamState
from .numerics.rng import xavier_init

log = logging.getLogger(__name__)

EMBEDDING_TABLES = ("emb.user", "emb.A", "emb.B")


@dataclass(frozen=True)
class Sizes:
    users: int
    items_a: int
    items_b: int
    max_len: int


def build_variant(config: ModelConfig, kind: str) -> ModelConfig:
    """Config for an ablation: pos-off zeroes the positional weight, the others
    drop the EA channel (ea-off) or both sequence channels (all-off)."""
    if kind == "pos-off":
        return config.replace(variant=kind, pos_weight=0.0)
    return config.replace(variant=kind)


def uses_ea(config: ModelConfig) -> bool:
    return config.variant in ("full", "pos-off")


def uses_mlp(config: ModelConfig) -> bool:
    return config.variant != "all-off"


def param_shapes(config: ModelConfig, sizes: Sizes) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor of a configuration, in registry order."""
    d = config.dim
    shapes: dict[str, tuple[int, ...]] = {
        "emb.user": (sizes.users, d),
        "emb.A": (sizes.items_a, d),
        "emb.B": (sizes.items_b, d),
    }
    if uses_ea(config):
        shapes["pos.table"] = (sizes.max_len, d)
        for h in range(config.heads):
            shapes[f"ea.head{h}.Mk"] = (config.slots, config.head_dim)
            shapes[f"ea.head{h}.Mv"] = (config.slots, config.head_dim)
        shapes["ea.W1"] = (d, d)
    if uses_mlp(config):
        shapes["ch2.W2"] = (2 * d, config.hidden_dim)
        shapes["ch2.b"] = (config.hidden_dim,)
        shapes["ch2.W3"] = (config.hidden_dim, 1)
    shapes["head.A.W"] = (sizes.items_a, 4 * d)
    shapes["head.A.b"] = (sizes.items_a,)
    shapes["head.B.W"] = (sizes.items_b, 4 * d)
    shapes["head.B.b"] = (sizes.items_b,)
    return shapes


@dataclass
class ModelState:
    config: ModelConfig
    sizes: Sizes
    params: dict[str, Tensor]
    opt_a: AdamState = field(default_factory=AdamState)
    opt_b: AdamState = field(default_factory=AdamState)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def group(self, domain: str) -> dict[str, np.ndarray]:
        """Optimizer group: the B head on its own, everything else with A."""
        in_b = lambda name: name.startswith("head.B.")
        return {n: t.data for n, t in self.params.items() if in_b(n) == (domain == "B")}

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())


def init_model(config: ModelConfig, sizes: Sizes) -> ModelState:
    # one stream per tensor name: a variant's shared tensors match the full model's
    params = {name: Tensor(xavier_init(shape, config.seed, name), requires_grad=True, name=name)
              for name, shape in param_shapes(config, sizes).items()}
    return ModelState(config, sizes, params)


def propagate(state: ModelState, graph: CdsGraph) -> tuple[Tensor, Tensor, Tensor]:
    p = state.params
    tables = (p["emb.user"], p["emb.A"], p["emb.B"])
    if state.config.layers == 1:
        return slap_propagate(graph, *tables)
    return multilayer_propagate(graph, *tables, layers=state.config.layers)


def _views(prefixes: Sequence[HybridSequence], domain: str):
    return [p.view(domain) for p in prefixes]


def sequence_reps(state: ModelState, tables, prefixes: Sequence[HybridSequence], *,
                  training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
    """(H_SA, H_SB): one 2d-wide row per prefix."""
    cfg = state.config
    e_user, e_a, e_b = tables
    users = np.array([p.user for p in prefixes], dtype=np.int64)
    user_rows = ag.gather(e_user, users)
    reps = []
    for domain, items in (("A", e_a), ("B", e_b)):
        views = _views(prefixes, domain)
        if any(len(v[0]) == 0 for v in views):
            raise ValueError(f"prefix without a domain-{domain} item; callers must filter these")
        batch = encoder.RaggedBatch.from_views(views)
        seq = encoder.encode(state.params, items, batch, alpha=cfg.pos_weight, n_heads=cfg.heads,
                             pooling=cfg.pooling, use_ea=uses_ea(cfg), use_mlp=uses_mlp(cfg))
        rep = ag.concat([seq, user_rows])
        reps.append(ag.dropout(rep, cfg.dropout, rng, training))
    return reps[0], reps[1]


def head_logits(state: ModelState, domain: str, own: Tensor, other: Tensor) -> Tensor:
    """Logits over one domain's catalog from [own rep, other rep]."""
    w = state.params[f"head.{domain}.W"]
    b = state.params[f"head.{domain}.b"]
    return ag.add(ag.matmul(ag.concat([own, other]), ag.transpose(w)), b)


def forward_logits(state: ModelState, graph: CdsGraph, prefixes: Sequence[HybridSequence],
                   tables=None) -> tuple[np.ndarray, np.ndarray]:
    tables = tables if tables is not None else propagate(state, graph)
    h_a, h_b = sequence_reps(state, tables, prefixes)
    return head_logits(state, "A", h_a, h_b).data, head_logits(state, "B", h_b, h_a).data


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def predict_proba(state: ModelState, graph: CdsGraph, prefixes: Sequence[HybridSequence],
                  tables=None) -> tuple[np.ndarray, np.ndarray]:
    logits_a, logits_b = forward_logits(state, graph, prefixes, tables)
    return _softmax(logits_a), _softmax(logits_b)


def forward_predict(state: ModelState, graph: CdsGraph, prefix: HybridSequence) -> tuple[np.ndarray, np.ndarray]:
    """(P_A, P_B) next-item distributions for a single prefix holding both domains."""
    if not prefix.has_both():
        raise ValueError("forward_predict needs a prefix with items from both domains")
    p_a, p_b = predict_proba(state, graph, [prefix])
    return p_a[0], p_b[0]


def l2_term(state: ModelState) -> Tensor:
    total = None
    for name in EMBEDDING_TABLES:
        t = ag.l2_penalty(state.params[name])
        total = t if total is None else ag.add(total, t)
    return ag.scale(total, state.config.l2)


def compute_loss(state: ModelState, graph: CdsGraph, train: Sequence[HybridSequence],
                 batch: Sequence[TrainingExample], *, training: bool = False,
                 rng: np.random.Generator | None = None, tables=None) -> tuple[Tensor, Tensor]:
    """(L_A, L_B): mean cross-entropy of each domain's targets plus the embedding L2 term."""
    tables = tables if tables is not None else propagate(state, graph)
    prefixes = [train[ex.sequence].prefix(ex.length) for ex in batch]
    h_a, h_b = sequence_reps(state, tables, prefixes, training=training, rng=rng)
    penalty = l2_term(state)
    losses = []
    for domain, own, other in (("A", h_a, h_b), ("B", h_b, h_a)):
        rows = np.array([i for i, ex in enumerate(batch) if ex.domain == domain], dtype=np.int64)
        if rows.size == 0:
            log.warning("batch has no domain-%s targets; L_%s contributes zero", domain, domain)
            losses.append(ag.constant(0.0))
            continue
        targets = np.array([batch[i].target for i in rows], dtype=np.int64)
        logits = head_logits(state, domain, ag.gather(own, rows), ag.gather(other, rows))
        losses.append(ag.add(ag.cross_entropy(logits, targets), penalty))
    return losses[0], losses[1]


# ---------------------------------------------------------------- persistence

def sidecar_path(path) -> Path:
    return Path(str(path) + ".cfg")


def save_model(state: ModelState, path) -> None:
    checkpoint.save(path, state.arrays())
    s = state.sizes
    text = state.config.to_text() + (
        f"users={s.users}\nitems_A={s.items_a}\nitems_B={s.items_b}\nmax_len={s.max_len}\n")
    sidecar_path(path).write_text(text, encoding="utf-8")


def load_model(path) -> ModelState:
    arrays = checkpoint.load(path)
    values = read_flat(sidecar_path(path))
    try:
        sizes = Sizes(*(int(values.pop(k)) for k in ("users", "items_A", "items_B", "max_len")))
    except KeyError as exc:
        raise ConfigError(f"checkpoint sidecar lacks {exc}") from None
    config = ModelConfig(**{k: coerce(k, v, MODEL_KEYS) for k, v in values.items()})
    expected = param_shapes(config, sizes)
    if set(arrays) != set(expected):
        raise ConfigError(f"checkpoint tensors {sorted(arrays)} do not match the configured model")
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ConfigError(f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {shape}")
    params = {n: Tensor(arrays[n], requires_grad=True, name=n) for n in expected}
    return ModelState(config, sizes, params)
