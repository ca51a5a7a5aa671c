"""Trainable feature-similarity predictor and the dual-similarity combiner.

The predictor regresses the feature Jaccard similarity of two texts from a
small vector of symmetric pairwise signals, through a sigmoid-linear model
fit by full-batch gradient descent. The dual score blends the prediction
with plain semantic (embedding cosine) similarity under a weight gamma.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Instance, feature_jaccard
from .encoding import SemanticEncoder, semantic_similarity
from .errors import DataError, TrainingDivergenceError

PAIR_FEATURE_NAMES = (
    "embedding_cosine",
    "token_jaccard",
    "capitalized_jaccard",
    "capitalized_trigram_jaccard",
    "length_ratio",
    "shared_capitalized",
    "shared_digit",
)


def _set_jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    return len(a & b) / len(union)


def _capitalized_trigrams(tokens: set[str]) -> set[str]:
    grams: set[str] = set()
    for token in tokens:
        padded = f"<{token}>"
        if len(padded) < 3:
            grams.add(padded)
        else:
            grams.update(padded[i : i + 3] for i in range(len(padded) - 2))
    return grams


def featurize_pair(a: str, b: str, encoder: SemanticEncoder) -> np.ndarray:
    """Symmetric pairwise signals between two texts.

    Every component is symmetric by construction, so the predictor built on
    top is symmetric as well.
    """
    tokens_a = a.split()
    tokens_b = b.split()
    lower_a = {t.lower() for t in tokens_a}
    lower_b = {t.lower() for t in tokens_b}
    cap_a = {t for t in tokens_a if t[:1].isupper()}
    cap_b = {t for t in tokens_b if t[:1].isupper()}

    n_a, n_b = len(tokens_a), len(tokens_b)
    length_ratio = 1.0 if max(n_a, n_b) == 0 else min(n_a, n_b) / max(n_a, n_b)
    shared_cap = len(cap_a & cap_b)
    digit_a = {t for t in lower_a if any(c.isdigit() for c in t)}
    digit_b = {t for t in lower_b if any(c.isdigit() for c in t)}

    return np.array(
        [
            semantic_similarity(encoder, a, b),
            _set_jaccard(lower_a, lower_b),
            _set_jaccard(cap_a, cap_b),
            _set_jaccard(_capitalized_trigrams(cap_a), _capitalized_trigrams(cap_b)),
            length_ratio,
            shared_cap / (1.0 + shared_cap),
            1.0 if digit_a & digit_b else 0.0,
        ],
        dtype=np.float64,
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def loss_and_gradient(
    params: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared error of sigmoid(X w + b) against y, with its gradient.

    ``params`` stacks the weight vector and the bias as the last entry.
    Exposed separately so the analytic gradient can be finite-difference
    checked.
    """
    w, b = params[:-1], params[-1]
    with np.errstate(over="ignore", invalid="ignore"):
        z = X @ w + b
        p = _sigmoid(z)
        residual = p - y
        loss = float(np.mean(residual**2))
        dz = 2.0 * residual * p * (1.0 - p) / X.shape[0]
        grad = np.concatenate([X.T @ dz, [float(np.sum(dz))]])
    return loss, grad


@dataclass
class FeatureSimilarityModel:
    """Sigmoid-linear regressor over pairwise text signals."""

    weights: np.ndarray
    bias: float
    feature_names: tuple[str, ...] = PAIR_FEATURE_NAMES
    seed: int = 0
    epochs: int = 0
    learning_rate: float = 0.0
    final_loss: float = float("nan")
    loss_curve: tuple[float, ...] = ()

    @property
    def trained(self) -> bool:
        return self.epochs > 0

    def predict_features(self, features: np.ndarray) -> float:
        z = float(np.dot(self.weights, features) + self.bias)
        return float(_sigmoid(np.array([z]))[0])

    def save(self, path: str | Path) -> None:
        payload = {
            "dim": int(self.weights.shape[0]),
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
            "feature_names": list(self.feature_names),
            "seed": int(self.seed),
            "training": {
                "epochs": int(self.epochs),
                "learning_rate": float(self.learning_rate),
                "final_loss": float(self.final_loss),
                "loss_curve": [float(v) for v in self.loss_curve],
            },
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSimilarityModel":
        payload = json.loads(Path(path).read_text())
        training = payload.get("training", {})
        model = cls(
            weights=np.array(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            feature_names=tuple(payload["feature_names"]),
            seed=int(payload["seed"]),
            epochs=int(training.get("epochs", 0)),
            learning_rate=float(training.get("learning_rate", 0.0)),
            final_loss=float(training.get("final_loss", "nan")),
            loss_curve=tuple(training.get("loss_curve", ())),
        )
        if model.weights.shape[0] != payload["dim"]:
            raise DataError(f"{path}: dim does not match weight count")
        return model


def predict_feature_similarity(
    model: FeatureSimilarityModel, a: str, b: str, encoder: SemanticEncoder
) -> float:
    """Predicted feature Jaccard similarity of two texts, in [0, 1]."""
    if not model.trained:
        raise DataError("feature-similarity model has not been trained")
    return model.predict_features(featurize_pair(a, b, encoder))


def build_training_pairs(
    pool: Sequence[Instance], encoder: SemanticEncoder
) -> tuple[np.ndarray, np.ndarray]:
    """Pair features and feature-Jaccard targets for all unordered pairs."""
    if len(pool) < 2:
        raise DataError(f"need at least 2 instances to form pairs, got {len(pool)}")
    pairs = list(combinations(range(len(pool)), 2))
    X = np.stack(
        [featurize_pair(pool[i].text, pool[j].text, encoder) for i, j in pairs]
    )
    y = np.array([feature_jaccard(pool[i], pool[j]) for i, j in pairs])
    return X, y


def train_featsim(
    pool: Sequence[Instance],
    encoder: SemanticEncoder,
    epochs: int = 2000,
    learning_rate: float = 1.0,
    seed: int = 0,
) -> FeatureSimilarityModel:
    """Fit the predictor on all unordered pairs of a labeled pool.

    Targets are the exact feature Jaccard similarities of the pairs. The
    recorded loss curve has epochs+1 entries (loss before each step, then
    the final loss).
    """
    X, y = build_training_pairs(pool, encoder)

    rng = np.random.default_rng(seed)
    params = np.concatenate([rng.normal(0.0, 0.01, X.shape[1]), [0.0]])
    curve = []
    for _ in range(epochs):
        loss, grad = loss_and_gradient(params, X, y)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite loss {loss} (learning rate {learning_rate})"
            )
        curve.append(loss)
        params = params - learning_rate * grad
    final_loss, _ = loss_and_gradient(params, X, y)
    if not np.isfinite(final_loss):
        raise TrainingDivergenceError(
            f"non-finite final loss (learning rate {learning_rate})"
        )
    curve.append(final_loss)
    return FeatureSimilarityModel(
        weights=params[:-1],
        bias=float(params[-1]),
        seed=seed,
        epochs=epochs,
        learning_rate=learning_rate,
        final_loss=final_loss,
        loss_curve=tuple(curve),
    )


@dataclass(frozen=True)
class DualSimilarityConfig:
    """Weighting and scaling for the blended similarity score."""

    gamma: float = 0.5
    normalization: str = "minmax"  # "minmax" | "none"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise DataError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.normalization not in ("minmax", "none"):
            raise DataError(f"unknown normalization {self.normalization!r}")


def dual_similarity(config: DualSimilarityConfig, s_fe: float, s_se: float) -> float:
    """gamma-weighted blend of feature and semantic similarity scores."""
    if not (np.isfinite(s_fe) and np.isfinite(s_se)):
        raise DataError("similarity inputs must be finite")
    return config.gamma * s_fe + (1.0 - config.gamma) * s_se


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Rescale to [0, 1] over the pool; a constant pool maps to all 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return scores
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo < 1e-12:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


class DualScorer:
    """Scores one input text against a pool of candidate texts.

    Both branches are computed pool-wide so min-max normalization sees the
    whole candidate set before the weighted blend. With gamma 0 or 1 the
    unused branch is skipped entirely, so a model is only required when the
    feature branch participates.
    """

    def __init__(
        self,
        encoder: SemanticEncoder,
        config: DualSimilarityConfig,
        model: FeatureSimilarityModel | None = None,
    ):
        if config.gamma > 0.0 and model is None:
            raise DataError("gamma > 0 requires a feature-similarity model")
        self.encoder = encoder
        self.config = config
        self.model = model
        self._pair_cache: dict[tuple[str, str], float] = {}

    def _predict(self, a: str, b: str) -> float:
        key = (a, b) if a <= b else (b, a)
        hit = self._pair_cache.get(key)
        if hit is None:
            hit = predict_feature_similarity(self.model, a, b, self.encoder)
            self._pair_cache[key] = hit
        return hit

    def score_candidates(self, input_text: str, texts: Sequence[str]) -> np.ndarray:
        n = len(texts)
        if n == 0:
            return np.zeros(0)
        gamma = self.config.gamma
        s_fe = (
            np.array([self._predict(input_text, t) for t in texts])
            if gamma > 0.0
            else np.zeros(n)
        )
        s_se = (
            np.array(
                [semantic_similarity(self.encoder, input_text, t) for t in texts]
            )
            if gamma < 1.0
            else np.zeros(n)
        )
        if self.config.normalization == "minmax":
            if gamma > 0.0:
                s_fe = minmax_normalize(s_fe)
            if gamma < 1.0:
                s_se = minmax_normalize(s_se)
        return gamma * s_fe + (1.0 - gamma) * s_se


def pool_scorer_from_pairwise(
    fn: Callable[[str, str], float],
) -> Callable[[str, Sequence[str]], np.ndarray]:
    """Adapt a plain pairwise score function to the pool-scorer interface."""

    def score(input_text: str, texts: Sequence[str]) -> np.ndarray:
        return np.array([fn(input_text, t) for t in texts], dtype=np.float64)

    return score
