import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import (DETECT_CONFIG, FIXTURE_CORPUS, INJECT_SEED, SCORING_CONFIG)

from labelsift.classifier import LossLedger, train
from labelsift.dataset import generate_synthetic_corpus
from labelsift.injection import compute_uncertainty_scores, inject_noise
from labelsift.pipeline import run_pipeline


@pytest.fixture(scope="session")
def fixture_corpus():
    return generate_synthetic_corpus(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def scoring_ledger(fixture_corpus):
    frags = [train(fixture_corpus, SCORING_CONFIG, r)[1] for r in range(3)]
    return LossLedger.merged(frags)


@pytest.fixture(scope="session")
def uncertainty_scores(scoring_ledger):
    return compute_uncertainty_scores(scoring_ledger)


@pytest.fixture(scope="session")
def noisy_fixture(fixture_corpus, uncertainty_scores):
    """(dataset with 5% injected noise, injection report)."""
    return inject_noise(fixture_corpus, 0.05, uncertainty_scores, seed=INJECT_SEED)


@pytest.fixture(scope="session")
def fixture_plan(noisy_fixture):
    noisy, _report = noisy_fixture
    return run_pipeline(noisy, DETECT_CONFIG)
