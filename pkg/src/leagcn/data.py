"""Interaction logs -> filtered hybrid sequences -> train/test splits."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .numerics.rng import stream

log = logging.getLogger(__name__)

DOMAINS = ("A", "B")
MIN_ITEM_COUNT = 5
MIN_USER_COUNT = 10


class DataError(ValueError):
    pass


class Interaction(NamedTuple):
    user: str
    item: str
    domain: str
    timestamp: int
    line: int


@dataclass
class InteractionLog:
    """Deduplicated records, sorted per user by (timestamp, file order)."""

    records: list[Interaction]

    def by_user(self) -> dict[str, list[Interaction]]:
        grouped: dict[str, list[Interaction]] = {}
        for rec in self.records:
            grouped.setdefault(rec.user, []).append(rec)
        return grouped

    def __len__(self) -> int:
        return len(self.records)


def _sorted_records(records: Iterable[Interaction]) -> list[Interaction]:
    return sorted(records, key=lambda r: (r.user, r.timestamp, r.line))


def parse_lines(lines: Iterable[str], source: str = "<input>") -> InteractionLog:
    seen: set[tuple[str, str, int, str]] = set()
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise DataError(f"{source}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
        user, item, domain, ts = cols
        if domain not in DOMAINS:
            raise DataError(f"{source}:{lineno}: bad domain tag {domain!r} (expected A or B)")
        try:
            timestamp = int(ts)
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-integer timestamp {ts!r}") from None
        key = (user, item, timestamp, domain)
        if key in seen:
            continue
        seen.add(key)
        records.append(Interaction(user, item, domain, timestamp, lineno))
    return InteractionLog(_sorted_records(records))


def ingest(path) -> InteractionLog:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        return parse_lines(fh, source=str(path))


def filter_cold(log_: InteractionLog, min_item: int = MIN_ITEM_COUNT,
                min_user: int = MIN_USER_COUNT) -> InteractionLog:
    """Drop cold items, then cold users, then non-overlapped users; repeat to a fixed point."""
    records = list(log_.records)
    before_users = len({r.user for r in records})
    before_items = len({(r.domain, r.item) for r in records})
    while True:
        size = len(records)
        item_counts = Counter((r.domain, r.item) for r in records)
        records = [r for r in records if item_counts[(r.domain, r.item)] >= min_item]
        user_counts = Counter(r.user for r in records)
        records = [r for r in records if user_counts[r.user] >= min_user]
        user_domains: dict[str, set[str]] = {}
        for r in records:
            user_domains.setdefault(r.user, set()).add(r.domain)
        records = [r for r in records if len(user_domains[r.user]) == 2]
        if len(records) == size:
            break
    if not records:
        raise DataError(
            f"filter_cold removed everything ({before_users} users, {before_items} items, "
            f"{len(log_.records)} interactions before filtering)")
    return InteractionLog(records)


@dataclass
class Vocab:
    users: list[str]
    items_a: list[str]
    items_b: list[str]
    _index: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self._index = {
            "user": {s: i for i, s in enumerate(self.users)},
            "A": {s: i for i, s in enumerate(self.items_a)},
            "B": {s: i for i, s in enumerate(self.items_b)},
        }

    @classmethod
    def from_log(cls, log_: InteractionLog) -> "Vocab":
        return cls(
            users=sorted({r.user for r in log_.records}),
            items_a=sorted({r.item for r in log_.records if r.domain == "A"}),
            items_b=sorted({r.item for r in log_.records if r.domain == "B"}),
        )

    @property
    def sizes(self) -> tuple[int, int, int]:
        """(p, m, n): users, domain-A items, domain-B items."""
        return len(self.users), len(self.items_a), len(self.items_b)

    def namespace(self, name: str) -> list[str]:
        return {"user": self.users, "A": self.items_a, "B": self.items_b}[name]

    def index(self, name: str, key: str) -> int:
        return self._index[name][key]

    def lookup(self, name: str, idx: int) -> str:
        return self.namespace(name)[idx]


@dataclass(frozen=True)
class HybridSequence:
    """One user's time-ordered cross-domain stream; position t is event t."""

    user: int
    items: tuple[int, ...]
    domains: tuple[str, ...]

    def __post_init__(self):
        if len(self.items) != len(self.domains):
            raise ValueError("items and domains differ in length")

    def __len__(self) -> int:
        return len(self.items)

    def view(self, domain: str) -> tuple[list[int], list[int]]:
        """(items, hybrid positions) of one domain, in order."""
        pos = [t for t, d in enumerate(self.domains) if d == domain]
        return [self.items[t] for t in pos], pos

    @property
    def s_a(self) -> list[int]:
        return self.view("A")[0]

    @property
    def p_a(self) -> list[int]:
        return self.view("A")[1]

    @property
    def s_b(self) -> list[int]:
        return self.view("B")[0]

    @property
    def p_b(self) -> list[int]:
        return self.view("B")[1]

    def prefix(self, length: int) -> "HybridSequence":
        return HybridSequence(self.user, self.items[:length], self.domains[:length])

    def has_both(self) -> bool:
        return "A" in self.domains and "B" in self.domains


def build_sequences(log_: InteractionLog, vocab: Vocab) -> list[HybridSequence]:
    out = []
    for user, recs in sorted(log_.by_user().items(), key=lambda kv: vocab.index("user", kv[0])):
        recs = sorted(recs, key=lambda r: (r.timestamp, r.line))
        out.append(HybridSequence(
            user=vocab.index("user", user),
            items=tuple(vocab.index(r.domain, r.item) for r in recs),
            domains=tuple(r.domain for r in recs),
        ))
    return out


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    sequence: HybridSequence
    prefix: HybridSequence
    target_a: int
    target_b: int


def make_test_case(seq: HybridSequence) -> TestCase | None:
    """Last A-item and last B-item become targets; None if the prefix loses a domain."""
    last = {d: max(t for t, dd in enumerate(seq.domains) if dd == d) for d in DOMAINS if d in seq.domains}
    if len(last) < 2:
        return None
    keep = [t for t in range(len(seq)) if t not in (last["A"], last["B"])]
    prefix = HybridSequence(seq.user, tuple(seq.items[t] for t in keep),
                            tuple(seq.domains[t] for t in keep))
    if not prefix.has_both():
        return None
    return TestCase(seq, prefix, seq.items[last["A"]], seq.items[last["B"]])


@dataclass
class DatasetSplit:
    train: list[HybridSequence]
    test: list[TestCase]
    dropped_test: int = 0


def split_train_test(sequences: list[HybridSequence], ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    if len(sequences) < 2:
        raise DataError(f"need at least 2 sequences to split, got {len(sequences)}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    order = stream(seed, "split").permutation(len(sequences))
    n_train = min(max(int(round(ratio * len(sequences))), 1), len(sequences) - 1)
    train = [sequences[i] for i in sorted(order[:n_train])]
    test, dropped = [], 0
    for i in sorted(order[n_train:]):
        case = make_test_case(sequences[i])
        if case is None:
            dropped += 1
        else:
            test.append(case)
    if dropped:
        log.warning("dropped %d test sequences whose prefix lacked a domain", dropped)
    return DatasetSplit(train, test, dropped)


class TrainingExample(NamedTuple):
    sequence: int       # index into the training list
    length: int         # prefix = events [0, length)
    domain: str
    target: int


def make_training_targets(seq: HybridSequence, mode: str = "all", seq_index: int = 0) -> list[TrainingExample]:
    if mode not in ("all", "last"):
        raise ValueError(f"loss mode must be 'all' or 'last', got {mode!r}")
    first = {d: next((t for t, dd in enumerate(seq.domains) if dd == d), None) for d in DOMAINS}
    if first["A"] is None or first["B"] is None:
        return []
    start = max(first.values()) + 1     # first t whose prefix [0, t) holds both domains
    if mode == "all":
        steps = range(start, len(seq))
    else:
        steps = sorted({max(t for t, d in enumerate(seq.domains) if d == dom) for dom in DOMAINS})
        steps = [t for t in steps if t >= start]
    return [TrainingExample(seq_index, t, seq.domains[t], seq.items[t]) for t in steps]


def training_examples(train: list[HybridSequence], mode: str = "all") -> list[TrainingExample]:
    out: list[TrainingExample] = []
    skipped = 0
    for i, seq in enumerate(train):
        ex = make_training_targets(seq, mode, i)
        if not ex:
            skipped += 1
        out.extend(ex)
    if skipped:
        log.info("%d training sequences yielded no examples", skipped)
    return out


def max_length(sequences: Iterable[HybridSequence]) -> int:
    return max((len(s) for s in sequences), default=1)


# ---------------------------------------------------------------- cache files

def _write_lines(path: Path, lines: Iterable[str]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def format_sequence(seq: HybridSequence) -> str:
    events = ",".join(f"{i}:{d}" for i, d in zip(seq.items, seq.domains))
    return f"{seq.user}\t{events}"


def parse_sequence(line: str, where: str = "") -> HybridSequence:
    try:
        user, events = line.rstrip("\n").split("\t")
        pairs = [e.split(":") for e in events.split(",")]
        return HybridSequence(int(user), tuple(int(i) for i, _ in pairs), tuple(d for _, d in pairs))
    except ValueError as exc:
        raise DataError(f"{where}: malformed sequence line: {exc}") from None


def write_cache(out_dir, vocab: Vocab, split: DatasetSplit) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ns in ("user", "A", "B"):
        _write_lines(out / f"vocab_{ns}.tsv", (f"{i}\t{s}" for i, s in enumerate(vocab.namespace(ns))))
    _write_lines(out / "train.tsv", (format_sequence(s) for s in split.train))
    _write_lines(out / "test.tsv", (format_sequence(c.sequence) for c in split.test))


def _read_vocab(path: Path) -> list[str]:
    names = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            idx, name = line.rstrip("\n").split("\t", 1)
            if int(idx) != len(names):
                raise DataError(f"{path}:{lineno}: vocabulary index {idx} out of order")
            names.append(name)
    return names


def read_cache(cache_dir) -> tuple[Vocab, DatasetSplit]:
    root = Path(cache_dir)
    if not root.is_dir():
        raise DataError(f"cache directory not found: {root}")
    vocab = Vocab(*(_read_vocab(root / f"vocab_{ns}.tsv") for ns in ("user", "A", "B")))

    def read(name):
        path = root / name
        with path.open(encoding="utf-8") as fh:
            return [parse_sequence(line, f"{path}:{n}") for n, line in enumerate(fh, 1) if line.strip()]

    train = read("train.tsv")
    cases = [make_test_case(s) for s in read("test.tsv")]
    return vocab, DatasetSplit(train, [c for c in cases if c is not None])


def stats(vocab: Vocab, split: DatasetSplit, log_: InteractionLog | None = None) -> dict[str, int]:
    p, m, n = vocab.sizes
    if log_ is not None:
        interactions = len(log_.records)
    else:
        interactions = sum(len(s) for s in split.train) + sum(len(c.sequence) for c in split.test)
    return {"users": p, "items_A": m, "items_B": n, "interactions": interactions,
            "train_sequences": len(split.train), "test_sequences": len(split.test)}


# Table 2 headline values of the two public datasets, for delta reports only
REFERENCE_STATS = {
    "douban": {"users": 6582, "items_A": 14636, "items_B": 2940, "interactions": 607523 + 360798,
               "train_sequences": 42062, "test_sequences": 10431},
    "amazon": {"users": 9204, "items_A": 126526, "items_B": 61362, "interactions": 1678006 + 978226,
               "train_sequences": 90574, "test_sequences": 14463},
}


def write_stats(path, values: dict[str, int], reference: str | None = None) -> None:
    lines = [f"{k}\t{v}" for k, v in values.items()]
    if reference:
        if reference not in REFERENCE_STATS:
            raise DataError(f"unknown reference dataset {reference!r}; choose from {sorted(REFERENCE_STATS)}")
        ref = REFERENCE_STATS[reference]
        lines += [f"delta_{k}\t{values[k] - ref[k]}" for k in values]
    _write_lines(Path(path), lines)

