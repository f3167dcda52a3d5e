"""Display strategies: which item pairs to show the user each step.

Greedy pairs up the highest-probability candidates; diverse mixes the head of
the ranking with the tail of the top-n_display band. Both are pure functions of
(state snapshot, seed) and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from kisrf.session import top_indices

if TYPE_CHECKING:
    from kisrf.session import SessionState

# Head/tail band width for the diverse strategy; requires n_display >= 100 so
# the two 50-rank bands never overlap.
BAND = 50

GREEDY = "greedy"
DIVERSE = "diverse"
STRATEGIES = (GREEDY, DIVERSE)


@dataclass(frozen=True)
class Display:
    """An ordered list of item-index pairs plus the strategy that built it."""

    pairs: tuple[tuple[int, int], ...]
    strategy: str

    def __post_init__(self) -> None:
        flat = [i for pair in self.pairs for i in pair]
        if len(set(flat)) != len(flat):
            raise ValueError(f"display repeats an item: {self.pairs}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def items(self) -> tuple[int, ...]:
        return tuple(i for pair in self.pairs for i in pair)

    def to_dict(self) -> dict:
        return {
            "pairs": [{"a": int(a), "b": int(b)} for a, b in self.pairs],
            "strategy": self.strategy,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Display":
        return cls(
            pairs=tuple((int(p["a"]), int(p["b"])) for p in doc["pairs"]),
            strategy=str(doc["strategy"]),
        )


def greedy_display(state: "SessionState", num_pairs: int, rng_seed: int) -> Display:
    """Pair the top 2*num_pairs candidates by a seeded uniform random matching.

    The displayed multiset is exactly the probability top-2*num_pairs (ties by
    index); only the pairing and within-pair order vary with the seed.

    Raises:
        ValueError: active set smaller than 2*num_pairs.
    """
    need = 2 * num_pairs
    if state.n_active < need:
        raise ValueError(
            f"active set has {state.n_active} items, need {need}; lower num_pairs"
        )
    top = top_indices(state.probs, state.active, need)
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(need)
    pairs = tuple(
        (int(top[perm[2 * k]]), int(top[perm[2 * k + 1]])) for k in range(num_pairs)
    )
    return Display(pairs=pairs, strategy=GREEDY)


def diverse_display(
    state: "SessionState", num_pairs: int, n_display: int, rng_seed: int
) -> Display:
    """Pair head-band candidates (ranks 1-50) with tail-band ones.

    The tail band is ranks n_display-49 .. n_display; for n_display = 100 the
    bands partition the top 100. One member per band per pair, drawn without
    replacement across the whole display, random within-pair order.

    Raises:
        ValueError: n_display < 100, active set smaller than n_display, or
            num_pairs > 50.
    """
    if n_display < 2 * BAND:
        raise ValueError(f"n_display must be >= {2 * BAND}, got {n_display}")
    if state.n_active < n_display:
        raise ValueError(
            f"active set has {state.n_active} items, need n_display={n_display}"
        )
    if num_pairs > BAND:
        raise ValueError(f"num_pairs {num_pairs} exceeds band width {BAND}")
    ranked = top_indices(state.probs, state.active, n_display)
    head = ranked[:BAND]
    tail = ranked[n_display - BAND : n_display]
    rng = np.random.default_rng(rng_seed)
    head_pick = head[rng.permutation(BAND)[:num_pairs]]
    tail_pick = tail[rng.permutation(BAND)[:num_pairs]]
    pairs = []
    for h, t in zip(head_pick, tail_pick):
        if rng.integers(2) == 0:
            pairs.append((int(h), int(t)))
        else:
            pairs.append((int(t), int(h)))
    return Display(pairs=tuple(pairs), strategy=DIVERSE)


def make_display(
    state: "SessionState", strategy: str, params_num_pairs: int, n_display: int, rng_seed: int
) -> Display:
    """Dispatch on strategy name."""
    if strategy == GREEDY:
        return greedy_display(state, params_num_pairs, rng_seed)
    if strategy == DIVERSE:
        return diverse_display(state, params_num_pairs, n_display, rng_seed)
    raise ValueError(f"unknown strategy {strategy!r}")
