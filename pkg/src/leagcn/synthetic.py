"""Rule-generated interaction corpora for smoke tests and demos."""
from __future__ import annotations

from .numerics.rng import stream


def rule_corpus(n_users: int = 50, n_items: int = 20, per_domain: int = 12, seed: int = 0) -> list[str]:
    """TSV lines where every user walks both catalogs in lockstep.

    User u starts at a seeded offset o; its t-th A item is (o + t) mod n_items
    and its t-th B item is (o + t + n_items // 4) mod n_items. Events
    alternate A, B, A, B, ... in time, so the next item of either domain is a
    fixed function of the latest item of each domain.
    """
    rng = stream(seed, "synthetic")
    offsets = rng.integers(0, n_items, size=n_users)
    shift = n_items // 4
    lines = []
    for u, o in enumerate(offsets):
        ts = 0
        for t in range(per_domain):
            lines.append(f"u{u}\ta{(o + t) % n_items}\tA\t{ts}")
            lines.append(f"u{u}\tb{(o + t + shift) % n_items}\tB\t{ts + 1}")
            ts += 2
    return lines


def write_rule_corpus(path, **kwargs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rule_corpus(**kwargs)) + "\n")
