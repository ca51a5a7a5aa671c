"""Demonstration selection and template rendering.

For each feature the candidate subset is ranked by the caller-supplied
scorer, the bottom half is filtered out, one survivor is drawn at random,
and the per-feature picks are concatenated (best first) into a demonstration
that is rendered next to the input sentence.
"""

from __future__ import annotations

import random
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Instance, feature_set_of
from .errors import DataError

#: Separator token between the input sentence and rendered example blocks.
SEPARATOR = "[SEP]"

PoolScorer = Callable[[str, Sequence[str]], np.ndarray]


@dataclass(frozen=True)
class DemoPool:
    """Labeled examples plus the per-feature candidate index."""

    examples: tuple[Instance, ...]
    per_feature: Mapping[str, tuple[int, ...]]

    @property
    def features(self) -> tuple[str, ...]:
        return tuple(sorted(self.per_feature))


@dataclass(frozen=True)
class DemoEntry:
    """One selected example: the instance, its score, and the feature it
    was drawn for (the instance may carry further features)."""

    instance: Instance
    score: float
    feature: str


@dataclass(frozen=True)
class Demonstration:
    entries: tuple[DemoEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


EMPTY_DEMONSTRATION = Demonstration(entries=())


@dataclass(frozen=True)
class DemonstratedInput:
    """An input sentence concatenated with its rendered demonstration.

    ``token_spans`` maps every input token to its character range inside
    ``rendered`` so a tagger can address original tokens in the combined
    string.
    """

    input: Instance
    demonstration: Demonstration
    rendered: str
    token_spans: tuple[tuple[int, int], ...]


def build_pool(
    examples: Sequence[Instance], feature_set: Iterable[str]
) -> DemoPool:
    """Index labeled examples by the features they carry.

    An example carrying m features lands in m subsets. A feature with a
    single carrier still works (filtering then removes nothing) but draws a
    warning; a feature with no carriers at all can never be demonstrated and
    is an error.
    """
    examples = tuple(examples)
    if not examples:
        raise DataError("cannot build a demonstration pool from zero examples")
    per_feature: dict[str, list[int]] = {f: [] for f in sorted(feature_set)}
    if not per_feature:
        raise DataError("cannot build a demonstration pool with no features")
    for idx, inst in enumerate(examples):
        if not inst.labeled:
            raise DataError(f"pool example {inst.id!r} is unlabeled")
        for f in feature_set_of(inst):
            if f in per_feature:
                per_feature[f].append(idx)
    for f, members in per_feature.items():
        if not members:
            raise DataError(f"feature {f!r} has no carrier in the pool")
        if len(members) < 2:
            warnings.warn(
                f"feature {f!r} has a single carrier; bottom-half filtering "
                "is a no-op for it"
            )
    return DemoPool(
        examples=examples,
        per_feature={f: tuple(v) for f, v in per_feature.items()},
    )


def rank_candidates(
    pool: DemoPool,
    feature: str,
    input: Instance,
    scorer: PoolScorer,
) -> list[tuple[int, float]]:
    """Candidates of one feature, best first.

    The input instance never ranks in its own candidate list. Ties break by
    ascending example id so rankings are deterministic for any scorer.
    """
    if feature not in pool.per_feature:
        raise DataError(f"unknown feature {feature!r}")
    indices = [
        idx for idx in pool.per_feature[feature]
        if pool.examples[idx].id != input.id
    ]
    scores = scorer(input.text, [pool.examples[idx].text for idx in indices])
    order = sorted(
        range(len(indices)),
        key=lambda i: (-float(scores[i]), pool.examples[indices[i]].id),
    )
    return [(indices[i], float(scores[i])) for i in order]


def select_demonstration(
    pool: DemoPool,
    input: Instance,
    scorer: PoolScorer,
    rng: random.Random,
) -> Demonstration:
    """Draw one example per feature and order the picks by score.

    Per feature: rank the candidates, drop the floor(n/2) lowest-scored, and
    pick uniformly among the survivors. The final entries are sorted by
    score descending (ties by example id).
    """
    picks: list[DemoEntry] = []
    for feature in pool.features:
        ranked = rank_candidates(pool, feature, input, scorer)
        if not ranked:
            raise DataError(
                f"no candidates left for feature {feature!r} after excluding "
                "the input itself"
            )
        survivors = ranked[: len(ranked) - len(ranked) // 2]
        idx, score = survivors[rng.randrange(len(survivors))]
        picks.append(DemoEntry(pool.examples[idx], score, feature))
    picks.sort(key=lambda e: (-e.score, e.instance.id))
    return Demonstration(entries=tuple(picks))


def render_template(demonstration: Demonstration) -> str:
    """Render example blocks: sentence, then one "<span> is [<FEATURE>]."
    clause per markup in span order, blocks joined by the separator."""
    blocks = []
    for entry in demonstration.entries:
        markups = sorted(entry.instance.markups, key=lambda m: m.start)
        if not any(m.feature == entry.feature for m in markups):
            raise DataError(
                f"example {entry.instance.id!r} has no markup for its "
                f"feature {entry.feature!r}"
            )
        clauses = [f"{m.text} is [{m.feature}]." for m in markups]
        blocks.append(" ".join([entry.instance.text, *clauses]))
    return f" {SEPARATOR} ".join(blocks)


def demonstrated_input(
    input: Instance, demonstration: Demonstration
) -> DemonstratedInput:
    """Concatenate the input sentence and the rendered demonstration."""
    sentence = input.text
    if demonstration.entries:
        rendered = f"{sentence} {SEPARATOR} {render_template(demonstration)}"
    else:
        rendered = sentence
    spans = []
    pos = 0
    for token in input.tokens:
        spans.append((pos, pos + len(token)))
        pos += len(token) + 1
    return DemonstratedInput(
        input=input,
        demonstration=demonstration,
        rendered=rendered,
        token_spans=tuple(spans),
    )
