"""Shared fixtures: a small hand-built corpus, encoders, and the trained
model pair used by the adversarial-training probes (expensive, so built once
per session)."""

from __future__ import annotations

import pytest

from demoner import synthetic
from demoner.adversarial import ADLConfig
from demoner.corpus import Corpus, Instance, parse_conll, sample_few_shot
from demoner.demo import build_pool
from demoner.encoding import CachedEncoder, HashedNgramEncoder
from demoner.featsim import DualScorer, DualSimilarityConfig, train_featsim
from demoner.tagger import (
    ReferenceTagger,
    bio_label_vocabulary,
    estimate_transitions,
    train_tagger,
)

FIG4_TOKENS = ("Mary", "traveled", "to", "New", "York", "last", "month.")
FIG4_TAGS = ("B-PER", "O", "O", "B-LOC", "I-LOC", "O", "O")


@pytest.fixture(scope="session")
def encoder():
    return CachedEncoder(HashedNgramEncoder(dim=256))


@pytest.fixture()
def fig4_instance():
    return Instance.from_tags("fig4", FIG4_TOKENS, FIG4_TAGS)


@pytest.fixture(scope="session")
def tiny_corpus():
    text = (
        "Mary B-PER\ntraveled O\nto O\nNew B-LOC\nYork I-LOC\n\n"
        "John B-PER\nvisited O\nParis B-LOC\n\n"
        "Lisa B-PER\nslept O\n\n"
        "Rome B-LOC\nagain O\n\n"
        "nothing O\nhappened O\n"
    )
    return parse_conll(text)


# -- the adversarial-training experiment, shared by the tagger probes and the
#    acceptance criteria ------------------------------------------------------

ADL_CORPUS_SEED = 24
ADL_SPLIT_SEED = 9
ADL_TRAIN_SEED = 13
ADL_FEATSIM_SEED = 5
ADL_EPOCHS = 300
ADL_LEARNING_RATE = 1.0
ADL_K_SHOT = 20


@pytest.fixture(scope="session")
def adl_experiment(encoder):
    """Two taggers (adversarially trained and plain) on the copy-dominated
    corpus, plus everything needed to probe them."""
    spec = synthetic.copy_dominated_spec(instances=300)
    full = synthetic.generate_synthetic_corpus(spec, seed=ADL_CORPUS_SEED)
    train_corpus = Corpus(full.instances[:200], full.feature_set)
    held_out = [inst for inst in full.instances[200:280] if inst.markups]
    split = sample_few_shot(train_corpus, k=ADL_K_SHOT, seed=ADL_SPLIT_SEED)
    fs_model = train_featsim(
        split.train, encoder, epochs=2000, learning_rate=1.0, seed=ADL_FEATSIM_SEED
    )
    scorer = DualScorer(
        encoder, DualSimilarityConfig(gamma=0.5), fs_model
    ).score_candidates
    pool = build_pool(split.train, full.feature_set)
    transitions = estimate_transitions(
        [inst.tags for inst in split.train],
        smoothing=0.01,
        labels=bio_label_vocabulary(full.feature_set),
    )

    def train(alpha: float, beta: float) -> ReferenceTagger:
        model = ReferenceTagger(full.feature_set, encoder)
        train_tagger(
            model,
            split,
            pool,
            scorer,
            ADLConfig(alpha=alpha, beta=beta),
            epochs=ADL_EPOCHS,
            learning_rate=ADL_LEARNING_RATE,
            seed=ADL_TRAIN_SEED,
        )
        model.transitions = transitions
        return model

    return {
        "corpus": full,
        "split": split,
        "held_out": held_out,
        "pool": pool,
        "scorer": scorer,
        "transitions": transitions,
        "adl_model": train(0.5, 0.5),
        "plain_model": train(1.0, 0.0),
        "featsim": fs_model,
    }
