"""Reference sequence tagger: linear softmax over explicit token features,
transition estimation, and Viterbi decoding.

Per-token features combine (a) hashed lexical/context signals from a +-2
window and (b) demonstration-copy signals: for every feature label rendered
in the demonstration, the best string-plus-embedding similarity between the
token's local spans and the demonstration spans currently annotated with
that label. Copy signals are recomputed from the demonstration as given
(including permuted ones), never from stored gold labels, which is what
makes a label permutation learnable.
"""

from __future__ import annotations

import json
import random
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversarial import (
    ADLConfig,
    adl_loss,
    apply_label_permutation,
    permute_examples,
    sample_label_permutation,
)
from .corpus import NIL, FewShotSplit, markups_from_tags, repair_bio
from .demo import (
    DemoPool,
    Demonstration,
    DemonstratedInput,
    EMPTY_DEMONSTRATION,
    PoolScorer,
    demonstrated_input,
    select_demonstration,
)
from .encoding import (
    CachedEncoder,
    HashedNgramEncoder,
    RemoteEncoder,
    SemanticEncoder,
    cosine,
)
from .errors import DataError, TrainingDivergenceError
from .seeding import derive_seed


@dataclass(frozen=True)
class TransitionMatrix:
    """Log-probabilities over (labels + start + end) source/target states."""

    labels: tuple[str, ...]
    log_probs: np.ndarray  # shape (L+2, L+2); START at index L, END at L+1

    @property
    def start_index(self) -> int:
        return len(self.labels)

    @property
    def end_index(self) -> int:
        return len(self.labels) + 1


def estimate_transitions(
    tag_sequences: Sequence[Sequence[str]],
    smoothing: float = 0.01,
    labels: Sequence[str] | None = None,
) -> TransitionMatrix:
    """Additively smoothed bigram estimates over (start, labels, end).

    Every source row is normalized over all destination states so all log
    entries stay finite for any positive smoothing.
    """
    if not tag_sequences:
        raise DataError("cannot estimate transitions from zero sequences")
    if smoothing <= 0.0:
        raise DataError(f"smoothing must be positive, got {smoothing}")
    if labels is None:
        labels = sorted({t for seq in tag_sequences for t in seq})
    labels = tuple(labels)
    index = {label: i for i, label in enumerate(labels)}
    n = len(labels) + 2
    start, end = len(labels), len(labels) + 1

    counts = np.zeros((n, n), dtype=np.float64)
    for seq in tag_sequences:
        if not seq:
            raise DataError("empty tag sequence")
        try:
            ids = [index[t] for t in seq]
        except KeyError as exc:
            raise DataError(f"tag {exc.args[0]!r} outside the label set") from None
        counts[start, ids[0]] += 1.0
        for a, b in zip(ids, ids[1:]):
            counts[a, b] += 1.0
        counts[ids[-1], end] += 1.0

    probs = (counts + smoothing) / (counts.sum(axis=1, keepdims=True) + smoothing * n)
    return TransitionMatrix(labels=labels, log_probs=np.log(probs))


def viterbi_decode(
    emissions: np.ndarray, transitions: TransitionMatrix
) -> list[str]:
    """Most likely label sequence under log emissions plus transitions.

    Scores include the start and end transitions. Exact ties resolve to the
    lexicographically smallest label-index sequence, which the backward
    recursion plus front-first argmax construction yields directly.
    """
    emissions = np.asarray(emissions, dtype=np.float64)
    if emissions.ndim != 2 or emissions.shape[0] < 1:
        raise DataError(f"bad emission shape {emissions.shape}")
    n, n_labels = emissions.shape
    if n_labels != len(transitions.labels):
        raise DataError(
            f"{n_labels} emission columns for {len(transitions.labels)} labels"
        )
    T = transitions.log_probs
    L = n_labels
    with np.errstate(divide="ignore"):
        log_e = np.log(emissions)

    # suffix[t, l] = best score of positions t.. given label l at t,
    # including the final transition into the end state.
    suffix = np.empty((n, L), dtype=np.float64)
    suffix[n - 1] = log_e[n - 1] + T[:L, transitions.end_index]
    for t in range(n - 2, -1, -1):
        best_next = (T[:L, :L] + suffix[t + 1][None, :]).max(axis=1)
        suffix[t] = log_e[t] + best_next

    path = []
    prev = transitions.start_index
    for t in range(n):
        scores = T[prev, :L] + suffix[t]
        choice = int(np.argmax(scores))  # first maximum = smallest label index
        path.append(transitions.labels[choice])
        prev = choice
    return path


def bio_label_vocabulary(feature_set: Sequence[str]) -> tuple[str, ...]:
    """NIL first, then B-/I- pairs in sorted feature order."""
    labels = [NIL]
    for f in sorted(feature_set):
        labels.extend((f"B-{f}", f"I-{f}"))
    return tuple(labels)


def _char_trigrams(text: str) -> frozenset[str]:
    if len(text) < 3:
        return frozenset((text,))
    return frozenset(text[i : i + 3] for i in range(len(text) - 2))


@dataclass(frozen=True)
class TaggerConfig:
    hash_dim: int = 256
    window: int = 2
    copy_span: int = 3  # max token-window length considered for copy matching
    # Copy similarities are scaled below lexical feature magnitude so a model
    # trained without adversarial branches behaves like a memorizing baseline
    # (demo-insensitive) while adversarial training can still grow the copy
    # weights without bound.
    copy_scale: float = 0.2


class ReferenceTagger:
    """Linear softmax tagger with hashed lexical and demonstration-copy
    features.

    Weights start at zero, so an untrained model scores every label
    uniformly. Training is plain per-instance gradient descent; evaluation
    is deterministic.
    """

    def __init__(
        self,
        feature_set: Sequence[str],
        encoder: SemanticEncoder,
        config: TaggerConfig = TaggerConfig(),
    ):
        self.features = tuple(sorted(feature_set))
        if not self.features:
            raise DataError("tagger needs a non-empty feature set")
        self.labels = bio_label_vocabulary(self.features)
        self.encoder = encoder
        self.config = config
        self.dim = config.hash_dim + len(self.features) + 1
        self.weights = np.zeros((len(self.labels), self.dim), dtype=np.float64)
        self.loss_curve: tuple[float, ...] = ()
        self.transitions: TransitionMatrix | None = None
        self._sim_cache: dict[tuple[str, str], float] = {}

    # -- feature extraction -------------------------------------------------

    def _bucket(self, key: str) -> int:
        return zlib.crc32(key.encode("utf-8")) % self.config.hash_dim

    def _lexical_buckets(self, tokens: Sequence[str], i: int) -> list[int]:
        # Window token identities plus the current token's shape. Deliberately
        # no character-level lexical features: sub-token generalization is the
        # copy branch's job, so the demonstration stays causally load-bearing.
        buckets = []
        for off in range(-self.config.window, self.config.window + 1):
            j = i + off
            tok = tokens[j].lower() if 0 <= j < len(tokens) else "<pad>"
            buckets.append(self._bucket(f"w{off}={tok}"))
        tok = tokens[i]
        shape = (
            "upper" if tok.isupper()
            else "title" if tok[:1].isupper()
            else "digit" if any(c.isdigit() for c in tok)
            else "lower"
        )
        buckets.append(self._bucket(f"shape={shape}"))
        return buckets

    def _span_similarity(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        hit = self._sim_cache.get(key)
        if hit is not None:
            return hit
        ta, tb = _char_trigrams(a), _char_trigrams(b)
        union = ta | tb
        jaccard = len(ta & tb) / len(union) if union else 0.0
        value = 0.5 * jaccard + 0.5 * cosine(
            self.encoder.encode(a), self.encoder.encode(b)
        )
        self._sim_cache[key] = value
        return value

    @staticmethod
    def demonstration_spans(
        demonstration: Demonstration,
    ) -> dict[str, list[str]]:
        """Span texts per feature as currently annotated in the entries."""
        spans: dict[str, list[str]] = {}
        for entry in demonstration.entries:
            for m in entry.instance.markups:
                spans.setdefault(m.feature, []).append(m.text)
        return spans

    def _copy_features(
        self,
        tokens: Sequence[str],
        i: int,
        demo_spans: dict[str, list[str]],
    ) -> np.ndarray:
        values = np.zeros(len(self.features), dtype=np.float64)
        if not demo_spans:
            return values
        windows = []
        for length in range(1, self.config.copy_span + 1):
            for a in range(max(0, i - length + 1), i + 1):
                b = a + length
                if b <= len(tokens):
                    windows.append(" ".join(tokens[a:b]))
        for fi, feature in enumerate(self.features):
            best = 0.0
            for span in demo_spans.get(feature, ()):
                for window in windows:
                    s = self._span_similarity(window, span)
                    if s > best:
                        best = s
            values[fi] = best * self.config.copy_scale
        return values

    def featurize(self, d: DemonstratedInput) -> np.ndarray:
        """Feature matrix for the input tokens, shape (n, dim).

        Layout: hashed lexical counts, per-feature copy similarities, bias.
        """
        tokens = d.input.tokens
        demo_spans = self.demonstration_spans(d.demonstration)
        phi = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for i in range(len(tokens)):
            for bucket in self._lexical_buckets(tokens, i):
                phi[i, bucket] += 1.0
            phi[i, self.config.hash_dim : self.config.hash_dim + len(self.features)] = (
                self._copy_features(tokens, i, demo_spans)
            )
            phi[i, -1] = 1.0
        return phi

    # -- scoring and loss ----------------------------------------------------

    @staticmethod
    def _softmax(z: np.ndarray) -> np.ndarray:
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def token_scores(self, d: DemonstratedInput) -> np.ndarray:
        """Softmax label probabilities per input token, shape (n, labels)."""
        return self._softmax(self.featurize(d) @ self.weights.T)

    def loss_and_gradient(
        self, phi: np.ndarray, gold_ids: np.ndarray, weights: np.ndarray | None = None
    ) -> tuple[float, np.ndarray]:
        """Mean token cross-entropy and its gradient w.r.t. the weights.

        Overflow is not a failure mode here: non-finite results surface as a
        non-finite loss, which the training loop turns into a diagnosis.
        """
        W = self.weights if weights is None else weights
        with np.errstate(over="ignore", invalid="ignore"):
            p = self._softmax(phi @ W.T)
            n = phi.shape[0]
            eps = 1e-300  # guards log(0) for saturated rows
            loss = -float(np.mean(np.log(p[np.arange(n), gold_ids] + eps)))
            p[np.arange(n), gold_ids] -= 1.0
            grad = p.T @ phi / n
        return loss, grad

    def gold_ids(self, tags: Sequence[str]) -> np.ndarray:
        index = {label: i for i, label in enumerate(self.labels)}
        try:
            return np.array([index[t] for t in tags], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"tag {exc.args[0]!r} outside the label set") from None

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path, config_echo: dict | None = None) -> None:
        payload = {
            "features": list(self.features),
            "labels": list(self.labels),
            "hash_dim": self.config.hash_dim,
            "window": self.config.window,
            "copy_span": self.config.copy_span,
            "copy_scale": self.config.copy_scale,
            "encoder": _encoder_spec(self.encoder),
            "weights": [[float(v) for v in row] for row in self.weights],
            "loss_curve": [float(v) for v in self.loss_curve],
            "transitions": None
            if self.transitions is None
            else {
                "labels": list(self.transitions.labels),
                "log_probs": [
                    [float(v) for v in row] for row in self.transitions.log_probs
                ],
            },
            "config_echo": config_echo or {},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(
        cls, path: str | Path, encoder: SemanticEncoder | None = None
    ) -> "ReferenceTagger":
        payload = json.loads(Path(path).read_text())
        if encoder is None:
            encoder = _encoder_from_spec(payload["encoder"])
        model = cls(
            feature_set=payload["features"],
            encoder=encoder,
            config=TaggerConfig(
                hash_dim=int(payload["hash_dim"]),
                window=int(payload["window"]),
                copy_span=int(payload["copy_span"]),
                copy_scale=float(payload.get("copy_scale", 1.0)),
            ),
        )
        weights = np.array(payload["weights"], dtype=np.float64)
        if weights.shape != model.weights.shape:
            raise DataError(f"{path}: weight shape {weights.shape} does not match")
        model.weights = weights
        model.loss_curve = tuple(payload.get("loss_curve", ()))
        trans = payload.get("transitions")
        if trans is not None:
            model.transitions = TransitionMatrix(
                labels=tuple(trans["labels"]),
                log_probs=np.array(trans["log_probs"], dtype=np.float64),
            )
        return model


def _encoder_spec(encoder: SemanticEncoder) -> dict:
    inner = encoder.inner if isinstance(encoder, CachedEncoder) else encoder
    if isinstance(inner, HashedNgramEncoder):
        return {"kind": "hashed", "dim": inner.dim}
    if isinstance(inner, RemoteEncoder):
        return {"kind": "remote", "url": inner.url, "dim": inner.dim}
    return {"kind": "opaque", "encoder_id": encoder.encoder_id, "dim": encoder.dim}


def _encoder_from_spec(spec: dict) -> SemanticEncoder:
    if spec.get("kind") == "hashed":
        return CachedEncoder(HashedNgramEncoder(dim=int(spec["dim"])))
    if spec.get("kind") == "remote":
        return CachedEncoder(RemoteEncoder(url=spec["url"], dim=int(spec["dim"])))
    raise DataError(
        f"cannot reconstruct encoder {spec!r}; pass one to load() explicitly"
    )


def train_tagger(
    model: ReferenceTagger,
    split: FewShotSplit,
    pool: DemoPool | None,
    scorer: PoolScorer | None,
    adl: ADLConfig = ADLConfig(),
    epochs: int = 40,
    learning_rate: float = 0.5,
    seed: int = 0,
    early_stopping_patience: int | None = None,
) -> ReferenceTagger:
    """Gradient-descend the tagger on demonstrated inputs.

    Per instance and epoch, three cross-entropy losses are combined: the
    normal demonstrated input, an example-permuted one, and a label-permuted
    one scored against permuted gold. With alpha = 1 the adversarial
    branches are skipped entirely, which is plain demonstration training.
    ``pool=None`` trains without demonstrations (the no-demonstration
    baseline). Fully deterministic under ``seed``.
    """
    if not split.train:
        raise DataError("empty training split")
    if pool is not None and scorer is None:
        raise DataError("a scorer is required when a pool is given")
    use_adl = adl.alpha < 1.0
    if use_adl and adl.beta > 0.0 and len(model.features) < 2:
        raise DataError("label permutation needs at least 2 features")

    gold_by_id = {}
    for inst in split.train:
        if inst.tags is None:
            raise DataError(f"training instance {inst.id!r} is unlabeled")
        gold_by_id[inst.id] = model.gold_ids(inst.tags)

    curve = []
    best_weights = None
    best_score = -np.inf
    stale = 0
    for epoch in range(epochs):
        epoch_losses = []
        for inst in split.train:
            sel_rng = random.Random(derive_seed(seed, "select", epoch, inst.id))
            if pool is not None:
                demo = select_demonstration(pool, inst, scorer, sel_rng)
            else:
                demo = EMPTY_DEMONSTRATION
            d = demonstrated_input(inst, demo)
            gold = gold_by_id[inst.id]
            l_m, g_m = model.loss_and_gradient(model.featurize(d), gold)

            if use_adl:
                adv_rng = random.Random(derive_seed(seed, "adv", epoch, inst.id))
                d_e = demonstrated_input(inst, permute_examples(demo, adv_rng))
                l_e, g_e = model.loss_and_gradient(model.featurize(d_e), gold)
                if adl.beta > 0.0:
                    pi = sample_label_permutation(model.features, adv_rng)
                    d_l, gold_l_tags = apply_label_permutation(d, inst.tags, pi)
                    l_l, g_l = model.loss_and_gradient(
                        model.featurize(d_l), model.gold_ids(gold_l_tags)
                    )
                else:
                    l_l, g_l = 0.0, 0.0
                if not all(np.isfinite(v) for v in (l_m, l_e, l_l)):
                    raise TrainingDivergenceError(
                        f"non-finite loss at epoch {epoch} (learning rate "
                        f"{learning_rate})"
                    )
                total = adl_loss(l_m, l_e, l_l, adl)
                grad = adl.alpha * g_m + (1.0 - adl.alpha) * (
                    (1.0 - adl.beta) * g_e + adl.beta * g_l
                )
            else:
                total = l_m
                grad = g_m

            if not np.isfinite(total):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch} (learning rate "
                    f"{learning_rate})"
                )
            model.weights -= learning_rate * grad
            epoch_losses.append(total)
        curve.append(float(np.mean(epoch_losses)))

        if early_stopping_patience is not None and split.validation:
            score = _validation_entity_f1(model, split, pool, scorer, seed)
            if score > best_score:
                best_score = score
                best_weights = model.weights.copy()
                stale = 0
            else:
                stale += 1
                if stale >= early_stopping_patience:
                    break
    if best_weights is not None:
        model.weights = best_weights
    model.loss_curve = tuple(curve)
    return model


def _validation_entity_f1(
    model: ReferenceTagger,
    split: FewShotSplit,
    pool: DemoPool | None,
    scorer: PoolScorer | None,
    seed: int,
) -> float:
    """Exact-span micro F1 of greedy per-token decoding on the validation
    set; transitions are not estimated until training finishes, so decoding
    here is argmax plus BIO repair."""
    tp = fp = fn = 0
    for inst in split.validation:
        if inst.tags is None:
            continue
        rng = random.Random(derive_seed(seed, "val", inst.id))
        demo = (
            select_demonstration(pool, inst, scorer, rng)
            if pool is not None
            else EMPTY_DEMONSTRATION
        )
        scores = model.token_scores(demonstrated_input(inst, demo))
        pred = repair_bio([model.labels[i] for i in scores.argmax(axis=1)])
        pred_spans = {
            (m.start, m.end, m.feature)
            for m in markups_from_tags(inst.tokens, pred)
        }
        gold_spans = {(m.start, m.end, m.feature) for m in inst.markups}
        tp += len(pred_spans & gold_spans)
        fp += len(pred_spans - gold_spans)
        fn += len(gold_spans - pred_spans)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0
