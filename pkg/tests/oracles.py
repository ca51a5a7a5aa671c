"""Independent brute-force oracles shared by module and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np

from demoner.tagger import TransitionMatrix


def brute_force_decode(
    emissions: np.ndarray, transitions: TransitionMatrix
) -> list[str]:
    """Exhaustive argmax over all |labels|^n sequences.

    Sequences are enumerated in lexicographic label-index order and scored
    via vectorized sums, so the first maximum is the lexicographically
    smallest optimal sequence (the tie rule the decoder promises).
    """
    n, n_labels = emissions.shape
    T = transitions.log_probs
    start, end = transitions.start_index, transitions.end_index
    with np.errstate(divide="ignore"):
        log_e = np.log(np.asarray(emissions, dtype=np.float64))

    sequences = np.array(
        list(itertools.product(range(n_labels), repeat=n)), dtype=np.intp
    )
    scores = T[start, sequences[:, 0]] + T[sequences[:, -1], end]
    for t in range(n):
        scores = scores + log_e[t, sequences[:, t]]
    for t in range(1, n):
        scores = scores + T[sequences[:, t - 1], sequences[:, t]]
    best = int(np.argmax(scores))
    return [transitions.labels[i] for i in sequences[best]]
