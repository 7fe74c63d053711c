"""labelsift: detect, correct, and filter mislabeled samples in imbalanced
classification datasets by modeling per-sample training-loss statistics."""

__version__ = "0.1.0"
