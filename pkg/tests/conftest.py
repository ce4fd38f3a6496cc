import pytest

from leagcn import data, synthetic
from leagcn.config import ModelConfig
from leagcn.data import HybridSequence
from leagcn.graph import build_graph
from leagcn.model import Sizes, init_model


def micro_setup(**overrides):
    """p=3 users, 4 items per domain, d=4, S=2, two heads, prefixes of length <= 4."""
    train = [
        HybridSequence(0, (0, 1, 2, 3, 1), ("A", "B", "A", "B", "A")),
        HybridSequence(1, (1, 2, 3, 0, 2), ("B", "A", "A", "B", "B")),
        HybridSequence(2, (3, 0, 0, 1, 2), ("A", "B", "B", "A", "B")),
    ]
    cfg = ModelConfig(dim=4, slots=2, heads=2, seed=11).replace(**overrides)
    sizes = Sizes(3, 4, 4, 5)
    graph = build_graph(train, (3, 4, 4))
    examples = data.training_examples(train, cfg.loss_mode)
    return init_model(cfg, sizes), graph, train, examples


@pytest.fixture
def micro():
    return micro_setup()


def prepare_corpus(seed=0, **kwargs):
    log = data.filter_cold(data.parse_lines(synthetic.rule_corpus(seed=seed, **kwargs)))
    vocab = data.Vocab.from_log(log)
    seqs = data.build_sequences(log, vocab)
    split = data.split_train_test(seqs, 0.8, seed=seed)
    p, m, n = vocab.sizes
    sizes = Sizes(p, m, n, data.max_length(seqs))
    return vocab, split, sizes, build_graph(split.train, vocab.sizes)


@pytest.fixture(scope="session")
def corpus():
    return prepare_corpus()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
