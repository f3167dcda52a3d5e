"""Oracle user: per-space pairwise choices, majority vote, alignment labels.

The simulated user judges each displayed pair once per embedding space by
similarity to the target; the reported label is the majority over spaces, and
the per-space alignment bits (choice == reported label) are the training
targets for the confidence predictor. Imperfection is emergent: spaces
disagree. An optional label-noise rate can additionally flip the reported
label; it defaults to 0 and is off in every evaluation here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from kisrf.corpus import Corpus, similarity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleVerdict:
    """Per-space choices, the reported majority label, and alignment bits.

    With zero label noise the majority is the mode of ``choices`` and at least
    ceil(F/2) alignment bits are 1.
    """

    choices: tuple[int, ...]
    majority: int
    alignment: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "choices": list(self.choices),
            "majority": self.majority,
            "alignment": list(self.alignment),
        }


def oracle_choice(corpus: Corpus, space_index: int, pair: tuple[int, int], target: int) -> int:
    """Which pair member is closer to the target in one space: 0 = a, 1 = b.

    The target itself, if displayed, is trivially chosen; exact similarity
    ties resolve to 0 (first item).
    """
    a, b = pair
    if a == target:
        return 0
    if b == target:
        return 1
    space = corpus.spaces[space_index]
    return 1 if similarity(space, a, target) < similarity(space, b, target) else 0


def judge(
    corpus: Corpus,
    pair: tuple[int, int],
    target: int,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> OracleVerdict:
    """Judge one pair in every space and majority-vote the reported label.

    Even space counts cannot produce a strict majority on a tie; the tie is
    broken toward space 0's choice with a logged warning. With ``noise`` > 0
    the reported label is flipped with that probability (``rng`` required) and
    alignment is computed against the flipped label, since alignment means
    agreement with what the user actually reported.
    """
    f = corpus.n_spaces
    choices = tuple(oracle_choice(corpus, s, pair, target) for s in range(f))
    ones = sum(choices)
    if 2 * ones == f:
        logger.warning(
            "majority tie on pair %s with F=%d; breaking toward space 0", pair, f
        )
        majority = choices[0]
    else:
        majority = 1 if 2 * ones > f else 0
    if noise > 0.0:
        if rng is None:
            raise ValueError("label noise requires an rng")
        if rng.random() < noise:
            majority = 1 - majority
    alignment = tuple(int(c == majority) for c in choices)
    return OracleVerdict(choices=choices, majority=majority, alignment=alignment)
