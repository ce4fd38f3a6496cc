import itertools

import pytest
from hypothesis import given, settings, strategies as st

from leagcn import data
from leagcn.data import HybridSequence


def seq_from(tokens, user=0):
    """``["A1", "B1", "A2"]`` -> HybridSequence with item index = number."""
    return HybridSequence(user, tuple(int(t[1:]) for t in tokens), tuple(t[0] for t in tokens))


def write(tmp_path, lines):
    path = tmp_path / "log.tsv"
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_ingest_three_lines(tmp_path):
    log = data.ingest(write(tmp_path, ["u1\ti1\tA\t3", "u1\tj1\tB\t1", "u2\ti1\tA\t2"]))
    assert len(log) == 3
    # per user, by timestamp
    assert [r.item for r in log.by_user()["u1"]] == ["j1", "i1"]


def test_ingest_drops_duplicates(tmp_path):
    log = data.ingest(write(tmp_path, ["u1\ti1\tA\t3", "u1\ti1\tA\t3"]))
    assert len(log) == 1


def test_ingest_ties_broken_by_file_order(tmp_path):
    log = data.ingest(write(tmp_path, ["u\tx\tB\t5", "u\ty\tA\t5", "u\tz\tA\t4"]))
    assert [r.item for r in log.by_user()["u"]] == ["z", "x", "y"]


@pytest.mark.parametrize("line,msg", [
    ("u1\ti1\tC\t3", "bad domain tag 'C'"),
    ("u1\ti1\tA", "expected 4"),
    ("u1\ti1\tA\tnoon", "non-integer timestamp"),
])
def test_ingest_errors_name_the_line(tmp_path, line, msg):
    with pytest.raises(data.DataError, match=rf"log.tsv:2: .*{msg}"):
        data.ingest(write(tmp_path, ["u0\ti0\tA\t1", line]))


def _records(user, items, start_ts=0):
    return [f"{user}\t{item}\t{dom}\t{start_ts + t}" for t, (item, dom) in enumerate(items)]


def _log(lines):
    return data.parse_lines(lines)


def _base_users(n_users=6, per_user=10):
    """Overlapped users who each touch the five shared warm items in both domains."""
    lines = []
    for u in range(n_users):
        events = [(f"a{t % 5}", "A") for t in range(per_user // 2)] + \
                 [(f"b{t % 5}", "B") for t in range(per_user - per_user // 2)]
        lines += _records(f"u{u}", events)
    return lines


def test_item_threshold_four_removed_five_kept():
    lines = _base_users()
    lines += [f"u{u}\tcold\tA\t100" for u in range(4)]
    lines += [f"u{u}\twarm\tA\t100" for u in range(5)]
    out = data.filter_cold(_log(lines))
    items = {r.item for r in out.records}
    assert "warm" in items and "cold" not in items


def test_user_threshold_nine_removed_ten_kept():
    lines = _base_users()
    lines += _records("nine", [(f"a{t}", "A") for t in range(5)] + [(f"b{t}", "B") for t in range(4)])
    lines += _records("ten", [(f"a{t}", "A") for t in range(5)] + [(f"b{t}", "B") for t in range(5)])
    users = {r.user for r in data.filter_cold(_log(lines)).records}
    assert "ten" in users and "nine" not in users


def test_single_domain_user_removed():
    lines = _base_users() + _records("mono", [(f"a{t % 5}", "A") for t in range(12)])
    assert "mono" not in {r.user for r in data.filter_cold(_log(lines)).records}


def test_filter_cold_empty_result_is_fatal():
    with pytest.raises(data.DataError, match="removed everything"):
        data.filter_cold(_log(_records("u", [("a", "A"), ("b", "B")])))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 5), st.sampled_from("AB")), min_size=30, max_size=200))
def test_filter_cold_reaches_fixed_point(triples):
    lines = [f"u{u}\ti{i}\t{d}\t{n}" for n, (u, i, d) in enumerate(triples)]
    try:
        once = data.filter_cold(_log(lines), min_item=3, min_user=4)
    except data.DataError:
        return
    twice = data.filter_cold(once, min_item=3, min_user=4)
    assert once.records == twice.records


def test_build_sequences_views():
    s = seq_from(["A1", "B1", "A2"])
    assert (s.s_a, s.p_a, s.s_b, s.p_b) == ([1, 2], [0, 2], [1], [1])


def test_build_sequences_from_log_indices_in_range():
    lines = _base_users()
    filtered = data.filter_cold(_log(lines))
    vocab = data.Vocab.from_log(filtered)
    seqs = data.build_sequences(filtered, vocab)
    p, m, n = vocab.sizes
    assert len(seqs) == p
    for s in seqs:
        assert 0 <= s.user < p
        assert all(i < (m if d == "A" else n) for i, d in zip(s.items, s.domains))
        assert s.has_both()
    for ns in ("user", "A", "B"):
        for i, name in enumerate(vocab.namespace(ns)):
            assert vocab.index(ns, name) == i and vocab.lookup(ns, i) == name


def test_positions_partition_exhaustively():
    # every domain pattern up to length 8: positions are disjoint, cover 0..len-1, keep order
    for length in range(1, 9):
        for pattern in itertools.product("AB", repeat=length):
            s = HybridSequence(0, tuple(range(length)), pattern)
            assert sorted(s.p_a + s.p_b) == list(range(length))
            assert not set(s.p_a) & set(s.p_b)
            assert s.s_a == [s.items[t] for t in s.p_a]


def test_split_ten_sequences():
    seqs = [seq_from(["A1", "B1", "A2", "B2"], user=u) for u in range(10)]
    split = data.split_train_test(seqs, 0.8, seed=3)
    assert len(split.train) == 8 and len(split.test) == 2
    assert {s.user for s in split.train}.isdisjoint({c.sequence.user for c in split.test})
    again = data.split_train_test(seqs, 0.8, seed=3)
    assert [s.user for s in again.train] == [s.user for s in split.train]


def test_split_needs_two_sequences():
    with pytest.raises(data.DataError):
        data.split_train_test([seq_from(["A1", "B1"])], 0.8, 0)


def test_test_case_targets_and_prefix():
    case = data.make_test_case(seq_from(["A1", "B1", "A2", "B2"]))
    assert (case.target_a, case.target_b) == (2, 2)
    assert case.prefix.items == (1, 1) and case.prefix.domains == ("A", "B")


def test_test_case_dropped_when_prefix_loses_domain():
    assert data.make_test_case(seq_from(["A1", "A2", "B1"])) is None
    seqs = [seq_from(["A1", "A2", "B1"], u) for u in range(4)]
    split = data.split_train_test(seqs, 0.5, 0)
    assert split.test == [] and split.dropped_test == 2


def test_training_targets_all_mode_example():
    ex = data.make_training_targets(seq_from(["A1", "B1", "A2"]), "all")
    assert [(e.length, e.domain, e.target) for e in ex] == [(2, "A", 2)]


def test_training_targets_last_mode_example():
    ex = data.make_training_targets(seq_from(["A1", "B1", "A2", "B2"]), "last")
    assert [(e.length, e.domain, e.target) for e in ex] == [(2, "A", 2), (3, "B", 2)]


def _brute_force_examples(seq):
    out = []
    for t in range(1, len(seq)):
        prefix = seq.domains[:t]
        if "A" in prefix and "B" in prefix:
            out.append((t, seq.domains[t], seq.items[t]))
    return out


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.sampled_from("AB")), min_size=1, max_size=20))
def test_training_example_count_matches_brute_force(events):
    seq = HybridSequence(0, tuple(i for i, _ in events), tuple(d for _, d in events))
    got = [(e.length, e.domain, e.target) for e in data.make_training_targets(seq, "all")]
    assert got == _brute_force_examples(seq)


def test_cache_roundtrip(tmp_path):
    seqs = [seq_from(["A1", "B0", "A2", "B2", "A0"], user=u) for u in range(5)]
    split = data.split_train_test(seqs, 0.6, seed=1)
    vocab = data.Vocab(["u0", "u1", "u2", "u3", "u4"], ["x", "y", "z"], ["p", "q", "r"])
    data.write_cache(tmp_path, vocab, split)
    vocab2, split2 = data.read_cache(tmp_path)
    assert vocab2.sizes == vocab.sizes and vocab2.items_b == vocab.items_b
    assert split2.train == split.train and split2.test == split.test
    assert (tmp_path / "train.tsv").read_text().splitlines()[0].split("\t")[1].startswith("1:A,0:B")
