"""Few-shot sequence labeling with demonstration selection, adversarial
demonstration training, and ensemble decoding."""

__version__ = "0.1.0"
