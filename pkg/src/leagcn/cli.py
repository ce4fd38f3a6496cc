"""Command-line entry point: ``leagcn prepare|train|eval|bench``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data
from .bench import count_parameters, time_scaling
from .config import MODEL_KEYS, ConfigError, ModelConfig, coerce, read_flat
from .evaluation import METRICS, evaluate, layer_sweep, metric_rows
from .graph import GraphError, build_graph
from .model import Sizes, build_variant, init_model, load_model, save_model
from .numerics.autograd import NumericalError
from .numerics.checkpoint import CheckpointError
from .trainer import TrainingError, train

log = logging.getLogger("leagcn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

RUN_KEYS = {
    "data": "str", "cache": "str", "checkpoint": "str", "out": "str", "log": "str",
    "graph_dump": "str", "reference": "str", "ratio": "float", "k": "int", "mode": "str",
    "layer_list": "str", "lengths": "str", "repeats": "int",
}
ALL_KEYS = {**MODEL_KEYS, **RUN_KEYS}
RUN_DEFAULTS = {"ratio": 0.8, "k": 10, "mode": "params", "layer_list": "1,2,3",
                "lengths": "64,128,256,512,1024,2048,4096", "repeats": 5}
ALPHA_GRID = [round(0.1 * i, 1) for i in range(11)]
HEAD_GRID = [1, 2, 4, 8, 16]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, then the config file, then explicit flags."""
    values = {k: getattr(ModelConfig, k) for k in MODEL_KEYS} | dict(RUN_DEFAULTS)
    if args.config:
        for key, raw in read_flat(args.config).items():
            values[key] = coerce(key, raw, ALL_KEYS)
    for key in ALL_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def model_config(values: dict) -> ModelConfig:
    cfg = ModelConfig(**{k: values[k] for k in MODEL_KEYS if k != "variant"})
    return build_variant(cfg, values["variant"])


def _require(values: dict, key: str) -> str:
    if not values.get(key):
        raise ConfigError(f"missing required setting '{key}' (flag --{key.replace('_', '-')} or config file)")
    return values[key]


def _load_split(values):
    vocab, split = data.read_cache(_require(values, "cache"))
    lengths = [len(s) for s in split.train] + [len(c.sequence) for c in split.test]
    p, m, n = vocab.sizes
    return vocab, split, Sizes(p, m, n, max(lengths))


def cmd_prepare(values: dict) -> None:
    raw = data.ingest(_require(values, "data"))
    filtered = data.filter_cold(raw)
    vocab = data.Vocab.from_log(filtered)
    split = data.split_train_test(data.build_sequences(filtered, vocab), values["ratio"], values["seed"])
    out = Path(_require(values, "out"))
    data.write_cache(out, vocab, split)
    data.write_stats(out / "stats.tsv", data.stats(vocab, split, filtered), values.get("reference"))
    log.info("prepared %d train / %d test sequences in %s", len(split.train), len(split.test), out)


def cmd_train(values: dict) -> None:
    cfg = model_config(values)
    _, split, sizes = _load_split(values)
    graph = build_graph(split.train, (sizes.users, sizes.items_a, sizes.items_b))
    if values.get("graph_dump"):
        graph.dump(values["graph_dump"])
    state = init_model(cfg, sizes)
    history = train(state, graph, split)
    ckpt = _require(values, "checkpoint")
    save_model(state, ckpt)
    log_path = values.get("log") or ckpt + ".log.tsv"
    Path(log_path).write_text("".join(h.to_tsv() + "\n" for h in history), encoding="utf-8")


def cmd_eval(values: dict) -> None:
    state = load_model(_require(values, "checkpoint"))
    _, split, sizes = _load_split(values)
    if (sizes.users, sizes.items_a, sizes.items_b) != (state.sizes.users, state.sizes.items_a, state.sizes.items_b):
        raise ConfigError(f"checkpoint sizes {state.sizes} do not match cached vocabulary {sizes}")
    graph = build_graph(split.train, (sizes.users, sizes.items_a, sizes.items_b))
    k = values["k"]
    report = "\n".join(metric_rows(evaluate(state, graph, split.test, k), k)) + "\n"
    _emit(values, report)


def _emit(values: dict, text: str) -> None:
    if values.get("out"):
        Path(values["out"]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def sweep(values: dict, key: str, grid: list) -> list[str]:
    base = model_config(values)
    _, split, sizes = _load_split(values)
    graph = build_graph(split.train, (sizes.users, sizes.items_a, sizes.items_b))
    k = values["k"]
    rows = []
    for setting in grid:
        state = init_model(base.replace(**{key: setting}), sizes)
        train(state, graph, split)
        table = evaluate(state, graph, split.test, k)
        rows += [f"{key}\t{setting}\t{dom}\t{m}\t{k}\t{table[dom][m]!r}" for dom in ("A", "B") for m in METRICS]
    return rows


def cmd_bench(values: dict) -> None:
    mode = values["mode"]
    if mode == "params":
        cfg = model_config(values)
        if values.get("cache"):
            _, _, sizes = _load_split(values)
        else:
            sizes = Sizes(0, 0, 0, 0)
        text = count_parameters((cfg, sizes)).to_tsv()
    elif mode == "scaling":
        cfg = model_config(values)
        report = time_scaling(lengths=_ints(values["lengths"]), repeats=values["repeats"], dim=cfg.dim,
                              slots=cfg.slots, heads=cfg.heads, alpha=cfg.pos_weight, seed=cfg.seed)
        text = report.to_tsv()
    elif mode == "layers":
        _, split, sizes = _load_split(values)
        text = "\n".join(layer_sweep(split, model_config(values), sizes, _ints(values["layer_list"]), values["k"])) + "\n"
    elif mode == "sweep-alpha":
        text = "\n".join(sweep(values, "pos_weight", ALPHA_GRID)) + "\n"
    elif mode == "sweep-beta":
        text = "\n".join(sweep(values, "heads", HEAD_GRID)) + "\n"
    else:
        raise ConfigError(f"unknown bench mode {mode!r}")
    _emit(values, text)


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="leagcn", description="Cross-domain sequential recommender with external attention.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--verbose", action="store_true")
    casts = {"int": int, "float": float, "str": str}
    for key, kind in sorted(ALL_KEYS.items()):
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, type=casts[kind], default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"leagcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](resolve(args))
    except ConfigError as exc:
        print(f"leagcn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, GraphError, CheckpointError, OSError) as exc:
        print(f"leagcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericalError) as exc:
        print(f"leagcn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
