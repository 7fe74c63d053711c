"""Build the 100-suspect review fixture for the UI end-to-end test.

Usage: python3 build_fixture.py <out_dir>

Writes manifest.csv (the noise-injected corpus) and plan.json (the cleaning
plan whose stage-1 assessments rank the suspects). Deterministic; mirrors the
desk-scale fixture the backend test suite uses.
"""
import sys
from pathlib import Path

from labelsift.classifier import LossLedger, TrainingConfig, train
from labelsift.dataset import SyntheticConfig, generate_synthetic_corpus, write_manifest
from labelsift.injection import compute_uncertainty_scores, inject_noise
from labelsift.pipeline import PipelineConfig, run_pipeline


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_synthetic_corpus(SyntheticConfig(
        n_per_class=(900, 100), d=4, class_separation=4.0,
        ambiguous_fraction=0.1, seed=7, n_test_per_class=(225, 25)))
    scoring = TrainingConfig(learning_rate=0.01, epochs=10, seed=3)
    ledger = LossLedger.merged([train(corpus, scoring, r)[1] for r in range(3)])
    scores = compute_uncertainty_scores(ledger)
    noisy, _report = inject_noise(corpus, 0.05, scores, seed=11)

    detect = PipelineConfig(
        training=TrainingConfig(learning_rate=0.001, epochs=30,
                                hidden_widths=(32, 16), batch_size=128),
        seed=5, k_f=45)
    plan = run_pipeline(noisy, detect)
    write_manifest(noisy, out / "manifest.csv")
    plan.write(out)
    print(f"fixture ready in {out}")


if __name__ == "__main__":
    main(sys.argv[1])
