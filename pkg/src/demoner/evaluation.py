"""Evaluation protocols: entity-level micro F1 for tagging, and binary /
ranking / correlation metrics for similarity predictors."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import Instance, feature_jaccard, feature_set_of
from .errors import DataError
from .inference import Prediction

ScoreFn = Callable[[Instance, Instance], float]


@dataclass(frozen=True)
class FeatureScore:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    support: int


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    per_feature: dict[str, FeatureScore] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "per_feature": {
                f: vars(s) for f, s in sorted(self.per_feature.items())
            },
        }

    def format_table(self) -> str:
        lines = [
            f"{'feature':<12} {'P':>7} {'R':>7} {'F1':>7} {'support':>8}",
            "-" * 44,
        ]
        for feature, s in sorted(self.per_feature.items()):
            lines.append(
                f"{feature:<12} {s.precision:>7.4f} {s.recall:>7.4f} "
                f"{s.f1:>7.4f} {s.support:>8}"
            )
        lines.append("-" * 44)
        lines.append(
            f"{'micro':<12} {self.precision:>7.4f} {self.recall:>7.4f} "
            f"{self.f1:>7.4f} {self.tp + self.fn:>8}"
        )
        return "\n".join(lines)


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


def entity_f1(gold: Sequence[Instance], pred: Sequence[Prediction]) -> F1Report:
    """Exact-span micro P/R/F1: a predicted markup is a true positive iff
    (start, end, feature) all match a gold markup of the same instance."""
    by_id = {p.instance_id: p for p in pred}
    if len(by_id) != len(pred):
        raise DataError("duplicate prediction ids")
    tp = fp = fn = 0
    per_feature: dict[str, dict[str, int]] = {}

    def bucket(feature: str) -> dict[str, int]:
        return per_feature.setdefault(feature, {"tp": 0, "fp": 0, "fn": 0})

    for inst in gold:
        if inst.id not in by_id:
            raise DataError(f"no prediction for instance {inst.id!r}")
        p = by_id[inst.id]
        if len(p.tags) != len(inst.tokens):
            raise DataError(
                f"instance {inst.id!r}: {len(p.tags)} predicted tags for "
                f"{len(inst.tokens)} tokens"
            )
        gold_spans = {(m.start, m.end, m.feature) for m in inst.markups}
        pred_spans = {(m.start, m.end, m.feature) for m in p.markups}
        for span in pred_spans & gold_spans:
            tp += 1
            bucket(span[2])["tp"] += 1
        for span in pred_spans - gold_spans:
            fp += 1
            bucket(span[2])["fp"] += 1
        for span in gold_spans - pred_spans:
            fn += 1
            bucket(span[2])["fn"] += 1

    precision, recall, f1 = _prf(tp, fp, fn)
    features = {}
    for feature, c in per_feature.items():
        fp_, fr_, ff_ = _prf(c["tp"], c["fp"], c["fn"])
        features[feature] = FeatureScore(
            precision=fp_,
            recall=fr_,
            f1=ff_,
            tp=c["tp"],
            fp=c["fp"],
            fn=c["fn"],
            support=c["tp"] + c["fn"],
        )
    return F1Report(
        precision=precision,
        recall=recall,
        f1=f1,
        tp=tp,
        fp=fp,
        fn=fn,
        per_feature=features,
    )


@dataclass(frozen=True)
class PredictorReport:
    binary_accuracy: float
    ranking_accuracy: float
    pearson: float
    trials: int

    def __post_init__(self):
        if self.trials <= 0:
            raise DataError("trial count must be positive")

    def to_dict(self) -> dict:
        return {
            "binary_accuracy": self.binary_accuracy,
            "ranking_accuracy": self.ranking_accuracy,
            "pearson": self.pearson,
            "trials": self.trials,
        }

    def format_table(self) -> str:
        return "\n".join(
            [
                f"{'metric':<18} {'value':>8}",
                "-" * 27,
                f"{'binary accuracy':<18} {self.binary_accuracy:>8.4f}",
                f"{'ranking accuracy':<18} {self.ranking_accuracy:>8.4f}",
                f"{'pearson':<18} {self.pearson:>8.4f}",
                f"{'trials':<18} {self.trials:>8}",
            ]
        )


def _labeled(instances: Sequence[Instance], role: str) -> list[Instance]:
    out = []
    for inst in instances:
        if not inst.labeled:
            raise DataError(f"{role} instance {inst.id!r} is unlabeled")
        out.append(inst)
    if not out:
        raise DataError(f"empty {role} set")
    return out


def binary_accuracy(
    score_fn: ScoreFn,
    test: Sequence[Instance],
    pool: Sequence[Instance],
    trials: int = 10_000,
    rng: random.Random | None = None,
) -> float:
    """Probability that the score orders a feature-sharing partner above a
    feature-disjoint one.

    Per trial: draw a test instance d, a pool partner with FJ(d, .) > 0 and
    one with FJ(d, .) = 0, and count success iff score(d, positive) strictly
    exceeds score(d, negative). Ties fail. Sampling is with replacement.
    """
    rng = rng or random.Random(0)
    test = _labeled(test, "test")
    pool = _labeled(pool, "pool")
    pool_features = [feature_set_of(p) for p in pool]

    valid: list[tuple[Instance, list[int], list[int]]] = []
    for d in test:
        fd = feature_set_of(d)
        positives = [i for i, fs in enumerate(pool_features) if fd & fs]
        negatives = [i for i, fs in enumerate(pool_features) if not fd & fs]
        if positives and negatives:
            valid.append((d, positives, negatives))
    if not valid:
        raise DataError(
            "no test instance admits both a feature-sharing and a "
            "feature-disjoint pool partner"
        )
    hits = 0
    for _ in range(trials):
        d, positives, negatives = valid[rng.randrange(len(valid))]
        d_i = pool[positives[rng.randrange(len(positives))]]
        d_j = pool[negatives[rng.randrange(len(negatives))]]
        if score_fn(d, d_i) > score_fn(d, d_j):
            hits += 1
    return hits / trials


def ranking_accuracy(
    score_fn: ScoreFn,
    test: Sequence[Instance],
    pool: Sequence[Instance],
    trials: int = 10_000,
    rng: random.Random | None = None,
) -> float:
    """Probability that the score agrees with the feature Jaccard order on
    pairs with FJ(d, d_i) > FJ(d, d_j) > 0. Ties fail."""
    rng = rng or random.Random(0)
    test = _labeled(test, "test")
    pool = _labeled(pool, "pool")
    pool_features = [feature_set_of(p) for p in pool]

    valid: list[tuple[Instance, list[tuple[int, float]]]] = []
    for d in test:
        fd = feature_set_of(d)
        positives = []
        for i, fs in enumerate(pool_features):
            union = fd | fs
            fj = len(fd & fs) / len(union) if union else 0.0
            if fj > 0.0:
                positives.append((i, fj))
        if len({fj for _, fj in positives}) >= 2:
            valid.append((d, positives))
    if not valid:
        raise DataError(
            "no test instance admits two strictly ordered positive partners"
        )
    hits = 0
    for _ in range(trials):
        d, positives = valid[rng.randrange(len(valid))]
        for _attempt in range(100):
            a = positives[rng.randrange(len(positives))]
            b = positives[rng.randrange(len(positives))]
            if a[1] != b[1]:
                break
        else:
            raise DataError("could not sample a strictly ordered pair")
        (hi, _), (lo, _) = (a, b) if a[1] > b[1] else (b, a)
        if score_fn(d, pool[hi]) > score_fn(d, pool[lo]):
            hits += 1
    return hits / trials


def pearson(
    score_fn: ScoreFn,
    test: Sequence[Instance],
    pool: Sequence[Instance],
    trials: int = 10_000,
    rng: random.Random | None = None,
) -> float:
    """Sample Pearson correlation between feature Jaccard similarity and the
    score over randomly drawn (test, pool) pairs."""
    if trials < 2:
        raise DataError("need at least 2 trials for a correlation")
    rng = rng or random.Random(0)
    test = _labeled(test, "test")
    pool = _labeled(pool, "pool")
    fj_series = np.empty(trials)
    score_series = np.empty(trials)
    for t in range(trials):
        d = test[rng.randrange(len(test))]
        d_i = pool[rng.randrange(len(pool))]
        fj_series[t] = feature_jaccard(d, d_i)
        score_series[t] = score_fn(d, d_i)
    if float(np.std(fj_series)) < 1e-12 or float(np.std(score_series)) < 1e-12:
        raise DataError("zero variance in one of the correlation series")
    return float(np.corrcoef(fj_series, score_series)[0, 1])
