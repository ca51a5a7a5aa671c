"""Ensemble tagging: k independently sampled demonstrations per input,
Viterbi decoding, and per-token majority voting with BIO repair."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Instance, Markup, NIL, markups_from_tags, repair_bio
from .demo import DemoPool, EMPTY_DEMONSTRATION, PoolScorer, demonstrated_input, select_demonstration
from .errors import DataError
from .seeding import derive_seed
from .tagger import ReferenceTagger, TransitionMatrix, viterbi_decode


@dataclass(frozen=True)
class EnsembleConfig:
    k: int = 5
    seed: int = 0
    granularity: str = "token"  # "token" | "span"

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"ensemble size must be >= 1, got {self.k}")
        if self.granularity not in ("token", "span"):
            raise DataError(f"unknown voting granularity {self.granularity!r}")


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]
    markups: tuple[Markup, ...]
    member_tags: tuple[tuple[str, ...], ...]

    def to_record(self) -> dict:
        return {
            "id": self.instance_id,
            "tokens": list(self.tokens),
            "tags": list(self.tags),
            "markups": [
                {"start": m.start, "end": m.end, "text": m.text, "feature": m.feature}
                for m in self.markups
            ],
        }

    def to_conll_lines(self) -> list[str]:
        return [f"{tok} {tag}" for tok, tag in zip(self.tokens, self.tags)]


def _vote_tokens(
    member_tags: Sequence[Sequence[str]],
    member_scores: Sequence[np.ndarray],
    labels: Sequence[str],
) -> list[str]:
    label_index = {label: i for i, label in enumerate(labels)}
    summed = np.sum(member_scores, axis=0)  # (n, labels)
    n = len(member_tags[0])
    voted = []
    for t in range(n):
        counts = Counter(tags[t] for tags in member_tags)
        top = max(counts.values())
        tied = [label for label, c in counts.items() if c == top]
        # ties: highest summed probability across members, then label index
        tied.sort(key=lambda lab: (-summed[t, label_index[lab]], label_index[lab]))
        voted.append(tied[0])
    return voted


def _vote_spans(
    member_tags: Sequence[Sequence[str]],
    tokens: Sequence[str],
) -> list[str]:
    k = len(member_tags)
    counts: Counter = Counter()
    for tags in member_tags:
        for m in markups_from_tags(tokens, repair_bio(tags)):
            counts[(m.start, m.end, m.feature)] += 1
    winners = [span for span, c in counts.items() if c * 2 > k]
    # prefer better-supported spans, then earlier/shorter ones
    winners.sort(key=lambda s: (-counts[s], s[0], s[1], s[2]))
    taken: list[tuple[int, int, str]] = []
    occupied: set[int] = set()
    for start, end, feature in winners:
        if occupied.isdisjoint(range(start, end)):
            taken.append((start, end, feature))
            occupied.update(range(start, end))
    tags = [NIL] * len(tokens)
    for start, end, feature in taken:
        tags[start] = f"B-{feature}"
        for i in range(start + 1, end):
            tags[i] = f"I-{feature}"
    return tags


def ensemble_tag(
    model: ReferenceTagger,
    transitions: TransitionMatrix,
    input: Instance,
    pool: DemoPool | None,
    scorer: PoolScorer | None,
    config: EnsembleConfig = EnsembleConfig(),
) -> Prediction:
    """Tag one input by majority vote over k demonstration samples.

    Each member draws its demonstration from an independent seeded stream,
    so results are deterministic under (model, input, pool, seed, k) and
    invariant to member order. Voted tags are repaired to valid BIO before
    span extraction.
    """
    if pool is not None and scorer is None:
        raise DataError("a scorer is required when a pool is given")
    member_tags: list[tuple[str, ...]] = []
    member_scores: list[np.ndarray] = []
    for member in range(config.k):
        if pool is not None:
            rng = random.Random(derive_seed(config.seed, "member", member, input.id))
            demo = select_demonstration(pool, input, scorer, rng)
        else:
            demo = EMPTY_DEMONSTRATION
        d = demonstrated_input(input, demo)
        scores = model.token_scores(d)
        member_tags.append(tuple(viterbi_decode(scores, transitions)))
        member_scores.append(scores)

    if config.granularity == "span":
        voted = _vote_spans(member_tags, input.tokens)
    else:
        voted = _vote_tokens(member_tags, member_scores, model.labels)
    tags = repair_bio(voted)
    return Prediction(
        instance_id=input.id,
        tokens=input.tokens,
        tags=tags,
        markups=markups_from_tags(input.tokens, tags),
        member_tags=tuple(member_tags),
    )


def predictions_to_conll(predictions: Sequence[Prediction]) -> str:
    blocks = ["\n".join(p.to_conll_lines()) for p in predictions]
    return "\n\n".join(blocks) + ("\n" if blocks else "")
