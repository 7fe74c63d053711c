"""Canonical desk-scale fixtures shared by the module and acceptance suites.

The detection fixture is a 1000-sample dev corpus (900:100 imbalance,
separation 4.0, ambiguous fraction 0.1) plus an untouched 250-sample test
split. The pipeline trains in the fit-but-not-memorize regime; the filter
budget is set explicitly to 4.5% of the dev split, mirroring the near-constant
filtered counts the reference workflow uses across noise rates.
"""
from __future__ import annotations

from labelsift.classifier import TrainingConfig
from labelsift.dataset import SyntheticConfig
from labelsift.pipeline import PipelineConfig

GEN_SEED = 7
SCORE_SEED = 3
INJECT_SEED = 11
PIPELINE_SEED = 5
EVAL_SEED = 21

FIXTURE_CORPUS = SyntheticConfig(
    n_per_class=(900, 100), d=4, class_separation=4.0,
    ambiguous_fraction=0.1, seed=GEN_SEED, n_test_per_class=(225, 25))

# Clean, fully separable corpus for specificity checks.
CLEAN_CORPUS = SyntheticConfig(
    n_per_class=(900, 100), d=4, class_separation=8.0,
    ambiguous_fraction=0.0, seed=GEN_SEED)

# Preliminary trainings that produce the uncertainty scores for injection.
SCORING_CONFIG = TrainingConfig(learning_rate=0.01, epochs=10, seed=SCORE_SEED)

# Pipeline training: fits the class structure without memorizing flipped labels.
DETECT_TRAINING = TrainingConfig(
    learning_rate=0.001, epochs=30, hidden_widths=(32, 16), batch_size=128)

FILTER_BUDGET = 45  # 4.5% of the dev split

DETECT_CONFIG = PipelineConfig(training=DETECT_TRAINING, seed=PIPELINE_SEED, k_f=FILTER_BUDGET)

# Anomaly-detection training for the before/after comparison; deliberately
# high-capacity and long so mislabels do the damage they do at paper scale.
EVAL_TRAINING = TrainingConfig(
    learning_rate=0.01, epochs=40, hidden_widths=(64, 32), batch_size=64, seed=EVAL_SEED)

# Well-fit regime for the clean-corpus specificity run.
CLEAN_TRAINING = TrainingConfig(
    learning_rate=0.005, epochs=40, hidden_widths=(64, 32), batch_size=64)

ANOMALY_CLASS = 1
