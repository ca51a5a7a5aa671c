"""Data model and CoNLL ingestion for labeled token sequences.

An instance is a pre-tokenized sentence with optional per-token BIO2 tags.
Contiguous tagged groups are materialized as markups (labeled spans); the
tags and the markups are always kept mutually consistent.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CorpusFormatError, DataError

#: Tag used for tokens that belong to no span. Never a valid feature name.
NIL = "O"


@dataclass(frozen=True)
class Markup:
    """A labeled token span: [start, end) over the owning instance's tokens."""

    start: int
    end: int
    text: str
    feature: str

    def __post_init__(self):
        if self.start < 0 or self.end <= self.start:
            raise DataError(f"bad markup bounds [{self.start}, {self.end})")
        if not self.feature or self.feature == NIL:
            raise DataError(f"bad markup feature {self.feature!r}")


@dataclass(frozen=True)
class Instance:
    """A token sequence with optional gold tags and derived markups.

    ``extras`` holds any middle CoNLL columns so files round-trip losslessly;
    the toolkit itself never looks at them.
    """

    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...] | None = None
    markups: tuple[Markup, ...] = ()
    extras: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self):
        if not self.tokens:
            raise DataError(f"instance {self.id!r} has no tokens")
        if self.tags is not None and len(self.tags) != len(self.tokens):
            raise DataError(
                f"instance {self.id!r}: {len(self.tags)} tags for "
                f"{len(self.tokens)} tokens"
            )
        previous_end = 0
        for m in sorted(self.markups, key=lambda m: m.start):
            if m.start < previous_end:
                raise DataError(f"instance {self.id!r}: overlapping markups")
            previous_end = m.end
            if m.end > len(self.tokens):
                raise DataError(f"instance {self.id!r}: markup exceeds length")
            if m.text != " ".join(self.tokens[m.start : m.end]):
                raise DataError(
                    f"instance {self.id!r}: markup text {m.text!r} does not "
                    "match its token span"
                )

    @classmethod
    def from_tags(
        cls,
        id: str,
        tokens: Sequence[str],
        tags: Sequence[str],
        extras: Sequence[Sequence[str]] | None = None,
    ) -> "Instance":
        tokens = tuple(tokens)
        tags = tuple(tags)
        return cls(
            id=id,
            tokens=tokens,
            tags=tags,
            markups=markups_from_tags(tokens, tags),
            extras=tuple(tuple(e) for e in extras) if extras is not None else None,
        )

    @property
    def labeled(self) -> bool:
        return self.tags is not None

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Corpus:
    instances: tuple[Instance, ...]
    feature_set: frozenset[str]

    def __post_init__(self):
        for inst in self.instances:
            for m in inst.markups:
                if m.feature not in self.feature_set:
                    raise DataError(
                        f"instance {inst.id!r} uses feature {m.feature!r} "
                        "outside the corpus feature set"
                    )

    def __len__(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class FewShotSplit:
    """A k-shot training set plus a size k*|features| validation set."""

    train: tuple[Instance, ...]
    validation: tuple[Instance, ...]
    k: int


def _split_tag(tag: str, line: int | None = None) -> tuple[str, str | None]:
    """Return (prefix, feature) for a BIO2 tag, validating the grammar."""
    if tag == NIL:
        return NIL, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise CorpusFormatError(f"tag {tag!r} outside BIO grammar", line)


def markups_from_tags(
    tokens: Sequence[str], tags: Sequence[str]
) -> tuple[Markup, ...]:
    """Group maximal contiguous BIO runs into markups.

    A span starts at every B- tag; I- tags extend the current span of the
    same feature. NIL tokens belong to no markup.
    """
    if len(tokens) != len(tags):
        raise DataError(f"{len(tokens)} tokens but {len(tags)} tags")
    markups: list[Markup] = []
    start = None
    feature = None

    def close(end: int) -> None:
        nonlocal start, feature
        if start is not None:
            markups.append(
                Markup(start, end, " ".join(tokens[start:end]), feature)
            )
            start, feature = None, None

    for i, tag in enumerate(tags):
        prefix, feat = _split_tag(tag)
        if prefix == "B":
            close(i)
            start, feature = i, feat
        elif prefix == "I":
            if feature != feat:
                raise DataError(
                    f"tag {tag!r} at position {i} continues no open {feat!r} span"
                )
        else:
            close(i)
    close(len(tags))
    return tuple(markups)


def repair_bio(tags: Sequence[str]) -> tuple[str, ...]:
    """Force a valid BIO sequence: an I-X with no open X span becomes B-X."""
    repaired = []
    open_feature = None
    for tag in tags:
        if tag == NIL:
            open_feature = None
            repaired.append(tag)
            continue
        prefix, _, feature = tag.partition("-")
        if prefix == "I" and feature != open_feature:
            tag = f"B-{feature}"
        open_feature = feature
        repaired.append(tag)
    return tuple(repaired)


def tags_from_markups(
    tokens: Sequence[str], markups: Iterable[Markup]
) -> tuple[str, ...]:
    """Inverse of markups_from_tags for non-overlapping markup sets."""
    tags = [NIL] * len(tokens)
    for m in sorted(markups, key=lambda m: m.start):
        if m.end > len(tokens):
            raise DataError("markup exceeds token count")
        for i in range(m.start, m.end):
            if tags[i] != NIL:
                raise DataError(f"overlapping markups at token {i}")
            tags[i] = ("B-" if i == m.start else "I-") + m.feature
    return tuple(tags)


def feature_set_of(instance: Instance) -> frozenset[str]:
    """Distinct features appearing in an instance's markups."""
    return frozenset(m.feature for m in instance.markups)


def feature_jaccard(a: Instance, b: Instance) -> float:
    """Intersection-over-union of two instances' feature sets.

    Returns 0 when both sets are empty (an entity-free pair carries no
    selection signal, and 0/0 is otherwise undefined).
    """
    if not a.labeled or not b.labeled:
        raise DataError("feature_jaccard requires labeled instances")
    fa, fb = feature_set_of(a), feature_set_of(b)
    union = fa | fb
    if not union:
        return 0.0
    return len(fa & fb) / len(union)


def parse_conll(text: str, lenient: bool = False) -> Corpus:
    """Parse whitespace-column CoNLL text into a Corpus.

    One token per line, last column is the BIO tag, blank line separates
    sentences. Extra middle columns are kept on the instance but ignored.
    In lenient mode an I-X tag with no open X span is repaired to B-X;
    strict mode (the default) raises.
    """
    instances: list[Instance] = []
    tokens: list[str] = []
    tags: list[str] = []
    extras: list[tuple[str, ...]] = []
    block_start_line = None
    n_columns = None

    def flush(line: int | None) -> None:
        nonlocal tokens, tags, extras
        if not tokens:
            return
        inst_id = f"s{len(instances):05d}"
        has_extras = any(extras)
        try:
            instances.append(
                Instance.from_tags(
                    inst_id, tokens, tags, extras if has_extras else None
                )
            )
        except DataError as exc:
            raise CorpusFormatError(str(exc), block_start_line) from exc
        tokens, tags, extras = [], [], []

    open_feature = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            flush(lineno)
            open_feature = None
            continue
        cols = line.split()
        if len(cols) < 2:
            raise CorpusFormatError(
                f"expected token and tag columns, got {len(cols)}", lineno
            )
        if n_columns is None:
            n_columns = len(cols)
        elif len(cols) != n_columns:
            raise CorpusFormatError(
                f"expected {n_columns} columns, got {len(cols)}", lineno
            )
        token, tag = cols[0], cols[-1]
        prefix, feat = _split_tag(tag, lineno)
        if prefix == "I" and feat != open_feature:
            if lenient:
                tag = "B-" + feat
            else:
                raise CorpusFormatError(
                    f"tag {tag!r} not preceded by B-{feat}/I-{feat}", lineno
                )
        open_feature = feat if prefix != NIL else None
        if not tokens:
            block_start_line = lineno
        tokens.append(token)
        tags.append(tag)
        extras.append(tuple(cols[1:-1]))
    flush(None)

    if not instances:
        raise CorpusFormatError("empty document")
    features = frozenset(
        m.feature for inst in instances for m in inst.markups
    )
    return Corpus(tuple(instances), features)


def render_conll(corpus: Corpus) -> str:
    """Render a fully labeled corpus back to CoNLL text.

    parse_conll(render_conll(c)) reproduces c's tokens, tags, markups, and
    extra columns exactly. Instances are separated by a single blank line.
    """
    blocks = []
    for inst in corpus.instances:
        if inst.tags is None:
            raise DataError(f"instance {inst.id!r} has no tags to render")
        lines = []
        for i, (token, tag) in enumerate(zip(inst.tokens, inst.tags)):
            mid = inst.extras[i] if inst.extras is not None else ()
            lines.append(" ".join((token, *mid, tag)))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def sample_few_shot(
    corpus: Corpus,
    k: int,
    seed: int,
    validation_source: Corpus | None = None,
) -> FewShotSplit:
    """Draw a deterministic k-shot training set plus a validation set.

    Features are visited in sorted name order; for each, instances carrying
    the feature are sampled until at least k chosen instances carry it (one
    instance may satisfy several features). The validation set holds exactly
    k * |features| instances drawn irrespective of entity type, from
    ``validation_source`` when given, otherwise from the unchosen remainder.
    """
    if k < 1:
        raise DataError(f"k must be positive, got {k}")
    rng = random.Random(seed)
    features = sorted(corpus.feature_set)
    if not features:
        raise DataError("corpus has no features to sample for")

    chosen: dict[str, Instance] = {}
    for feature in features:
        carriers = [
            inst for inst in corpus.instances if feature in feature_set_of(inst)
        ]
        have = sum(1 for inst in chosen.values() if feature in feature_set_of(inst))
        remaining = [inst for inst in carriers if inst.id not in chosen]
        need = k - have
        if need > len(remaining):
            raise DataError(
                f"feature {feature!r} has only {have + len(remaining)} carriers, "
                f"need {k}"
            )
        if need > 0:
            for inst in rng.sample(remaining, need):
                chosen[inst.id] = inst
    train = tuple(inst for inst in corpus.instances if inst.id in chosen)

    n_validation = k * len(features)
    if validation_source is not None:
        candidates = list(validation_source.instances)
    else:
        candidates = [inst for inst in corpus.instances if inst.id not in chosen]
    if len(candidates) < n_validation:
        raise DataError(
            f"need {n_validation} validation instances, have {len(candidates)}"
        )
    validation = tuple(rng.sample(candidates, n_validation))
    return FewShotSplit(train=train, validation=validation, k=k)
