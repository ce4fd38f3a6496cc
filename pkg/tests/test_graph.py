import numpy as np
import pytest

from leagcn.data import HybridSequence
from leagcn.graph import GraphError, build_graph, multilayer_propagate, slap_propagate
from leagcn.numerics import ag
from leagcn.numerics.autograd import Tensor
from leagcn.numerics.rng import stream


def dense_block_oracle(r_items_users: np.ndarray, e_items: np.ndarray, e_users: np.ndarray):
    """D^-1/2 Adj D^-1/2 over one domain's (items + users) bipartite block."""
    m, p = r_items_users.shape
    adj = np.zeros((m + p, m + p))
    adj[:m, m:] = r_items_users
    adj[m:, :m] = r_items_users.T
    deg = adj.sum(axis=1)
    inv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    out = (inv[:, None] * adj * inv[None, :]) @ np.vstack([e_items, e_users])
    return out[:m], out[m:]


def dense_oracle(graph, e_u, e_a, e_b):
    r_a = np.zeros((graph.n_items_a, graph.n_users))
    r_a[graph.edges_a[:, 1], graph.edges_a[:, 0]] = 1
    r_b = np.zeros((graph.n_items_b, graph.n_users))
    r_b[graph.edges_b[:, 1], graph.edges_b[:, 0]] = 1
    out_a, users_from_a = dense_block_oracle(r_a, e_a, e_u)
    out_b, users_from_b = dense_block_oracle(r_b, e_b, e_u)
    return users_from_a + users_from_b, out_a, out_b


def random_graph(seed, max_nodes=20, d=3):
    rng = stream(seed, "graph-case")
    p = int(rng.integers(1, 7))
    m = int(rng.integers(1, 7))
    n = int(rng.integers(1, max_nodes - p - m + 1)) if max_nodes - p - m >= 1 else 1
    seqs = []
    for u in range(p):
        items = list(rng.integers(0, m, size=int(rng.integers(1, 5))))
        items_b = list(rng.integers(0, n, size=int(rng.integers(1, 5))))
        events = [(int(i), "A") for i in items] + [(int(j), "B") for j in items_b]
        order = rng.permutation(len(events))
        events = [events[k] for k in order]
        seqs.append(HybridSequence(u, tuple(e[0] for e in events), tuple(e[1] for e in events)))
    graph = build_graph(seqs, (p, m, n))
    tables = [rng.standard_normal((k, d)) for k in (p, m, n)]
    return graph, seqs, tables


def test_single_user_single_item_per_domain():
    seq = HybridSequence(0, (0, 0), ("A", "B"))
    g = build_graph([seq], (1, 1, 1))
    assert g.edges_a.tolist() == [[0, 0]] and g.edges_b.tolist() == [[0, 0]]
    assert g.deg_item_a.tolist() == g.deg_item_b.tolist() == g.deg_user_a.tolist() == [1]
    e_u, e_a, e_b = (Tensor([[v, -v]]) for v in (1.0, 2.0, 5.0))
    users, items_a, items_b = slap_propagate(g, e_u, e_a, e_b)
    assert users.data.tolist() == [[7.0, -7.0]]
    assert items_a.data.tolist() == items_b.data.tolist() == [[1.0, -1.0]]


def test_repeat_consumption_is_one_edge():
    g = build_graph([HybridSequence(0, (0, 0, 0), ("A", "A", "B"))], (1, 1, 1))
    assert len(g.edges_a) == 1 and g.deg_item_a[0] == 1 and g.deg_user_a[0] == 1


def test_edge_coefficient_four_neighbours():
    seq = HybridSequence(0, (0, 1, 2, 3, 0), ("A", "A", "A", "A", "B"))
    g = build_graph([seq], (1, 4, 1))
    assert g.norm_a[0, 2] == pytest.approx(0.5)


def test_out_of_vocab_rejected():
    with pytest.raises(GraphError, match="outside vocabulary"):
        build_graph([HybridSequence(0, (5, 0), ("A", "B"))], (1, 2, 2))


@pytest.mark.parametrize("seed", range(20))
def test_degrees_match_recount(seed):
    graph, seqs, _ = random_graph(seed)
    pairs_a = {(s.user, i) for s in seqs for i, d in zip(s.items, s.domains) if d == "A"}
    pairs_b = {(s.user, i) for s in seqs for i, d in zip(s.items, s.domains) if d == "B"}
    for i in range(graph.n_items_a):
        assert graph.deg_item_a[i] == sum(1 for _, ii in pairs_a if ii == i)
    for k in range(graph.n_users):
        assert graph.deg_user_a[k] == sum(1 for kk, _ in pairs_a if kk == k)
        assert graph.deg_user_b[k] == sum(1 for kk, _ in pairs_b if kk == k)
    assert len(graph.edges_a) == len(pairs_a) and len(graph.edges_b) == len(pairs_b)


@pytest.mark.parametrize("seed", range(25))
def test_slap_matches_dense_oracle(seed):
    graph, _, tables = random_graph(seed)
    got = slap_propagate(graph, *(Tensor(t) for t in tables))
    want = dense_oracle(graph, *tables)
    for g, w in zip(got, want):
        assert np.max(np.abs(g.data - w)) < 1e-10


def test_slap_is_linear():
    graph, _, x = random_graph(99)
    y = [stream(5, "other", i).standard_normal(t.shape) for i, t in enumerate(x)]
    a, b = 0.7, -1.3
    mixed = slap_propagate(graph, *(Tensor(a * xi + b * yi) for xi, yi in zip(x, y)))
    px = slap_propagate(graph, *(Tensor(t) for t in x))
    py = slap_propagate(graph, *(Tensor(t) for t in y))
    for m, u, v in zip(mixed, px, py):
        assert np.max(np.abs(m.data - (a * u.data + b * v.data))) < 1e-10


def test_user_permutation_equivariance():
    graph, seqs, tables = random_graph(7)
    perm = stream(0, "perm").permutation(graph.n_users)
    relabeled = [HybridSequence(int(perm[s.user]), s.items, s.domains) for s in seqs]
    g2 = build_graph(relabeled, (graph.n_users, graph.n_items_a, graph.n_items_b))
    e_u, e_a, e_b = tables
    e_u2 = np.empty_like(e_u)
    e_u2[perm] = e_u
    out1 = slap_propagate(graph, Tensor(e_u), Tensor(e_a), Tensor(e_b))
    out2 = slap_propagate(g2, Tensor(e_u2), Tensor(e_a), Tensor(e_b))
    np.testing.assert_allclose(out2[0].data[perm], out1[0].data, atol=1e-12)
    np.testing.assert_allclose(out2[1].data, out1[1].data, atol=1e-12)
    np.testing.assert_allclose(out2[2].data, out1[2].data, atol=1e-12)


def test_no_cross_domain_item_leakage():
    graph, _, (e_u, e_a, e_b) = random_graph(11)
    base = slap_propagate(graph, Tensor(e_u), Tensor(e_a), Tensor(e_b))
    poked = slap_propagate(graph, Tensor(e_u), Tensor(e_a), Tensor(e_b + 100.0))
    assert np.array_equal(base[1].data, poked[1].data)


def test_multilayer_one_layer_without_combination_is_slap():
    graph, _, tables = random_graph(3)
    ts = [Tensor(t) for t in tables]
    single = slap_propagate(graph, *ts)
    multi = multilayer_propagate(graph, *ts, layers=1, combine=False)
    for a, b in zip(single, multi):
        assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("seed", range(5))
def test_multilayer_two_layers_matches_dense_oracle(seed):
    graph, _, tables = random_graph(seed)
    once = dense_oracle(graph, *tables)
    twice = dense_oracle(graph, *once)
    got = multilayer_propagate(graph, *(Tensor(t) for t in tables), layers=2, combine=False)
    for g, w in zip(got, twice):
        assert np.max(np.abs(g.data - w)) < 1e-10
    combined = multilayer_propagate(graph, *(Tensor(t) for t in tables), layers=2)
    for g, l0, l1, l2 in zip(combined, tables, once, twice):
        assert np.max(np.abs(g.data - (l0 + l1 + l2) / 3)) < 1e-10


def test_multilayer_rejects_zero_layers():
    graph, _, tables = random_graph(0)
    with pytest.raises(ValueError):
        multilayer_propagate(graph, *(Tensor(t) for t in tables), layers=0)


def test_propagation_gradient():
    graph, _, tables = random_graph(5)
    ts = [Tensor(t, requires_grad=True) for t in tables]
    w = [ag.constant(stream(1, "w", i).standard_normal(t.shape)) for i, t in enumerate(tables)]

    def loss():
        outs = multilayer_propagate(graph, *ts, layers=2)
        total = ag.sum_(ag.mul(outs[0], w[0]))
        for o, wi in zip(outs[1:], w[1:]):
            total = ag.add(total, ag.sum_(ag.mul(o, wi)))
        return total

    grads = ag.backward(loss(), {str(i): t for i, t in enumerate(ts)})
    for i, t in enumerate(ts):
        fd = ag.numerical_gradient(loss, t)
        assert ag.relative_error(grads[str(i)], fd) < 1e-4


def test_graph_dump(tmp_path):
    g = build_graph([HybridSequence(0, (1, 0), ("A", "B"))], (1, 2, 1))
    g.dump(tmp_path / "g.tsv")
    assert (tmp_path / "g.tsv").read_text() == "0\t1\tA\n0\t0\tB\n"


def test_transitions_recorded_not_propagated():
    g = build_graph([HybridSequence(0, (0, 0, 1), ("A", "B", "A"))], (1, 2, 1))
    assert g.transitions_a.tolist() == [[0, 1]]
