"""Adversarial demonstration construction and the combined training loss.

Two perturbations of a demonstrated input: reordering the example blocks,
and bijectively renaming the feature labels in both the demonstration and
the expected output. Renaming operates on the structured demonstration (and
is re-rendered), never on rendered text, so sentence words that happen to
coincide with a label name are untouched.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import NIL, Instance, Markup
from .demo import Demonstration, DemonstratedInput, demonstrated_input
from .errors import DataError


@dataclass(frozen=True)
class LabelPermutation:
    """A bijection over the feature set; the NIL tag is always fixed."""

    mapping: Mapping[str, str]

    def __post_init__(self):
        domain = set(self.mapping)
        codomain = set(self.mapping.values())
        if domain != codomain:
            raise DataError("label permutation must be a bijection on one set")
        if NIL in domain:
            raise DataError(f"the {NIL!r} tag cannot be permuted")

    def feature(self, f: str) -> str:
        try:
            return self.mapping[f]
        except KeyError:
            raise DataError(f"feature {f!r} outside permutation domain") from None

    def tag(self, t: str) -> str:
        if t == NIL:
            return t
        prefix, _, feat = t.partition("-")
        if prefix not in ("B", "I") or not feat:
            raise DataError(f"tag {t!r} outside BIO grammar")
        return f"{prefix}-{self.feature(feat)}"

    def inverse(self) -> "LabelPermutation":
        return LabelPermutation({v: k for k, v in self.mapping.items()})

    @property
    def is_identity(self) -> bool:
        return all(k == v for k, v in self.mapping.items())


def compose(second: LabelPermutation, first: LabelPermutation) -> LabelPermutation:
    """second after first: compose(p2, p1).feature(f) == p2.feature(p1.feature(f))."""
    if set(second.mapping) != set(first.mapping):
        raise DataError("cannot compose permutations over different feature sets")
    return LabelPermutation(
        {f: second.feature(first.feature(f)) for f in first.mapping}
    )


def identity_permutation(features: Iterable[str]) -> LabelPermutation:
    return LabelPermutation({f: f for f in features})


def sample_label_permutation(
    feature_set: Iterable[str],
    rng: random.Random,
    two_cycle_only: bool = False,
) -> LabelPermutation:
    """Uniform non-identity permutation of the feature set.

    With ``two_cycle_only`` the sample is restricted to single swaps (the
    two-feature case is a swap either way).
    """
    features = sorted(feature_set)
    if len(features) < 2:
        raise DataError(
            f"need at least 2 features to permute, got {len(features)}"
        )
    if two_cycle_only:
        i, j = rng.sample(range(len(features)), 2)
        mapping = {f: f for f in features}
        mapping[features[i]], mapping[features[j]] = features[j], features[i]
        return LabelPermutation(mapping)
    target = list(features)
    while True:
        rng.shuffle(target)
        if any(f != t for f, t in zip(features, target)):
            return LabelPermutation(dict(zip(features, target)))


def permute_examples(
    demonstration: Demonstration, rng: random.Random
) -> Demonstration:
    """Uniformly random non-identity reordering of the example blocks.

    A single-entry demonstration has only one ordering and is returned
    unchanged; otherwise the identity ordering is rejected so the
    perturbation always changes something.
    """
    n = len(demonstration.entries)
    if n <= 1:
        return demonstration
    order = list(range(n))
    while True:
        rng.shuffle(order)
        if any(i != j for i, j in enumerate(order)):
            break
    return Demonstration(entries=tuple(demonstration.entries[i] for i in order))


def relabel_instance(instance: Instance, pi: LabelPermutation) -> Instance:
    """Copy of an instance with features renamed through the permutation."""
    if instance.tags is None:
        raise DataError(f"instance {instance.id!r} is unlabeled")
    return Instance(
        id=instance.id,
        tokens=instance.tokens,
        tags=tuple(pi.tag(t) for t in instance.tags),
        markups=tuple(
            Markup(m.start, m.end, m.text, pi.feature(m.feature))
            for m in instance.markups
        ),
        extras=instance.extras,
    )


def apply_label_permutation(
    d: DemonstratedInput,
    gold_tags: Sequence[str],
    pi: LabelPermutation,
) -> tuple[DemonstratedInput, tuple[str, ...]]:
    """Rename every demonstrated feature and every gold tag through ``pi``.

    Entry order and scores are untouched; the demonstration is re-rendered
    from the renamed markups. Applying ``pi`` then ``pi.inverse()`` restores
    the rendered string and the tags exactly.
    """
    if len(gold_tags) != len(d.input.tokens):
        raise DataError(
            f"{len(gold_tags)} gold tags for {len(d.input.tokens)} input tokens"
        )
    entries = tuple(
        type(e)(
            instance=relabel_instance(e.instance, pi),
            score=e.score,
            feature=pi.feature(e.feature),
        )
        for e in d.demonstration.entries
    )
    permuted = demonstrated_input(d.input, Demonstration(entries=entries))
    return permuted, tuple(pi.tag(t) for t in gold_tags)


@dataclass(frozen=True)
class ADLConfig:
    """Loss weights: alpha for the main task, beta for the label-permutation
    share inside the adversarial branch."""

    alpha: float = 0.9
    beta: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise DataError(f"beta must be in [0, 1], got {self.beta}")


def adl_loss(l_m: float, l_e: float, l_l: float, config: ADLConfig) -> float:
    """alpha * l_m + (1 - alpha) * ((1 - beta) * l_e + beta * l_l)."""
    for name, value in (("l_m", l_m), ("l_e", l_e), ("l_l", l_l)):
        if not math.isfinite(value) or value < 0.0:
            raise DataError(f"{name} must be finite and non-negative, got {value}")
    a, b = config.alpha, config.beta
    return a * l_m + (1.0 - a) * ((1.0 - b) * l_e + b * l_l)
