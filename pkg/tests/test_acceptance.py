"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per criterion.
"""
import json
import math
import time

import numpy as np
import pytest

from fixtures import (ANOMALY_CLASS, DETECT_CONFIG, EVAL_TRAINING, FIXTURE_CORPUS, INJECT_SEED,
                      SCORING_CONFIG)

from labelsift.classifier import focal_loss, focal_loss_grad_logits, softmax
from labelsift.dataset import load_manifest, write_cleaned_splits, write_manifest
from labelsift.evaluation import (DetectionReport, detection_report, precision_at_k, train_eval)
from labelsift.gmm import GmmModel, fit_gmm, responsibilities
from labelsift.injection import inject_noise, restore_injection


def report(name, detail=""):
    print(f"[ACCEPTANCE] {name}: PASS {detail}")


class TestC1DetectionRecallAnalog:
    def test_detection_recall_and_specificity(self):
        """Self-contained run so the runtime bound covers the whole pipeline."""
        from labelsift.classifier import LossLedger, train
        from labelsift.dataset import generate_synthetic_corpus
        from labelsift.injection import compute_uncertainty_scores
        from labelsift.pipeline import run_pipeline

        started = time.monotonic()
        corpus = generate_synthetic_corpus(FIXTURE_CORPUS)
        frags = [train(corpus, SCORING_CONFIG, r)[1] for r in range(3)]
        scores = compute_uncertainty_scores(LossLedger.merged(frags))
        noisy, injection = inject_noise(corpus, 0.05, scores, seed=INJECT_SEED)
        plan = run_pipeline(noisy, DETECT_CONFIG)
        elapsed = time.monotonic() - started

        det = detection_report(plan, injection)
        clean_total = len(noisy.split_records("dev")) - det.noisy_total
        assert det.noisy_total == 50
        assert det.detected / det.noisy_total >= 0.85
        assert det.filtered_non_noisy <= 0.05 * clean_total
        assert elapsed < 300.0
        report("C1 detection recall analog",
               f"(detected {det.detected}/50, filtered_non_noisy {det.filtered_non_noisy} "
               f"<= {0.05 * clean_total:.0f}, pipeline {elapsed:.1f}s)")


class TestC2CleaningImprovesClassification:
    def test_f1_and_confidence_improvements(self, noisy_fixture, fixture_plan, tmp_path):
        noisy, _injection = noisy_fixture
        paths = write_cleaned_splits(noisy, fixture_plan, tmp_path, anomaly_label=ANOMALY_CLASS)
        corrected = load_manifest(paths["corrected"])
        filtered = load_manifest(paths["filtered"])

        uncleaned_m = train_eval(noisy, EVAL_TRAINING, ANOMALY_CLASS)
        corrected_m = train_eval(corrected, EVAL_TRAINING, ANOMALY_CLASS)
        filtered_m = train_eval(filtered, EVAL_TRAINING, ANOMALY_CLASS)

        assert filtered_m.f1 - uncleaned_m.f1 >= 0.10
        assert filtered_m.avg_max_confidence > uncleaned_m.avg_max_confidence
        assert corrected_m.f1 >= uncleaned_m.f1
        report("C2 cleaning improves classification",
               f"(F1 {uncleaned_m.f1:.3f} -> {filtered_m.f1:.3f}, corrected {corrected_m.f1:.3f}, "
               f"conf {uncleaned_m.avg_max_confidence:.3f} -> {filtered_m.avg_max_confidence:.3f})")


class TestC3TableArithmetic:
    def test_published_counts_validate(self):
        columns = {
            "1%": (471, 15, 916, 456),
            "5%": (2360, 98, 975, 2262),
            "10%": (4722, 367, 991, 4355),
        }
        for label, (noisy, missed, fnn, detected) in columns.items():
            rep = DetectionReport(noisy, missed, fnn, detected)
            assert rep.detected + rep.missed == rep.noisy_total, label
        report("C3 detection table arithmetic", "(3 columns validate exactly)")


class TestC4GmmEmCorrectness:
    def test_planted_recovery_monotonicity_and_normalization(self):
        started = time.monotonic()
        weights, means, variances = (0.7, 0.2, 0.1), (0.1, 1.0, 3.0), (0.01, 0.04, 0.25)
        rng = np.random.default_rng(123)
        comp = rng.choice(3, size=10_000, p=weights)
        xs = rng.normal(np.asarray(means)[comp], np.sqrt(np.asarray(variances))[comp])
        m = fit_gmm(xs, seed=0)
        order = np.argsort(m.means)
        for k, idx in enumerate(order):
            assert abs(m.weights[idx] - weights[k]) / weights[k] < 0.10
            assert abs(m.means[idx] - means[k]) / means[k] < 0.10
            assert abs(m.variances[idx] - variances[k]) / variances[k] < 0.10

        mono_rng = np.random.default_rng(99)
        for _ in range(100):
            n = int(mono_rng.integers(30, 200))
            data = mono_rng.normal(mono_rng.uniform(-3, 3), mono_rng.uniform(0.1, 2.0), size=n)
            fit = fit_gmm(data, restarts=2, seed=int(mono_rng.integers(1 << 30)))
            trace = fit.log_likelihood_trace
            assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

        probe_rng = np.random.default_rng(7)
        checked = 0
        while checked < 10_000:
            model = GmmModel(tuple(probe_rng.dirichlet(np.ones(3))),
                             tuple(sorted(probe_rng.normal(0, 5, 3))),
                             tuple(probe_rng.uniform(0.01, 4.0, 3)), (0.0,))
            for x in probe_rng.normal(0, 8, size=100):
                assert abs(float(responsibilities(model, x).sum()) - 1.0) <= 1e-12
                checked += 1
        elapsed = time.monotonic() - started
        assert elapsed < 30.0
        report("C4 GMM-EM correctness",
               f"(recovery <10%, 100 monotone traces, 10k probes sum to 1, {elapsed:.1f}s)")


class TestC5FocalLoss:
    def test_closed_form_reduction_and_gradient(self):
        rng = np.random.default_rng(2025)
        for _ in range(1000):
            c = int(rng.integers(2, 6))
            probs = rng.dirichlet(np.ones(c))
            target = int(rng.integers(c))
            gamma = float(rng.uniform(0.0, 4.0))
            alpha = rng.uniform(0.2, 3.0, size=c)
            p_t = min(max(float(probs[target]), 1e-12), 1.0)
            closed_form = -float(alpha[target]) * (1.0 - p_t) ** gamma * math.log(p_t)
            assert abs(focal_loss(probs, target, gamma, alpha) - closed_form) <= 1e-12

        for _ in range(200):
            c = int(rng.integers(2, 6))
            probs = rng.dirichlet(np.ones(c))
            target = int(rng.integers(c))
            ce = -math.log(min(max(float(probs[target]), 1e-12), 1.0))
            assert abs(focal_loss(probs, target, gamma=0.0, alpha=np.ones(c)) - ce) <= 1e-12

        h = 1e-5
        for _ in range(100):
            c = int(rng.integers(2, 6))
            logits = rng.normal(0.0, 1.5, size=c)
            target = int(rng.integers(c))
            gamma = float(rng.uniform(0.0, 4.0))
            alpha = rng.uniform(0.5, 2.0, size=c)
            analytic = focal_loss_grad_logits(logits, target, gamma, alpha)
            fd = np.empty(c)
            for j in range(c):
                zp, zm = logits.copy(), logits.copy()
                zp[j] += h
                zm[j] -= h
                fd[j] = (focal_loss(softmax(zp[None])[0], target, gamma, alpha)
                         - focal_loss(softmax(zm[None])[0], target, gamma, alpha)) / (2 * h)
            rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
            assert rel < 1e-5
        report("C5 focal loss", "(1000 tuples @1e-12, CE reduction, gradient @1e-5)")


class TestC6InjectionBookkeeping:
    def test_counts_proportionality_inverse_and_targeting(self, fixture_corpus,
                                                          uncertainty_scores):
        dev = fixture_corpus.split_records("dev")
        hist = fixture_corpus.class_histogram("dev")
        for rate in (0.01, 0.05, 0.10):
            noisy, rep = inject_noise(fixture_corpus, rate, uncertainty_scores, seed=INJECT_SEED)
            want = int(round(rate * len(dev)))
            assert len(rep.flipped) == want
            total = sum(rep.per_class.values())
            for c, count in rep.per_class.items():
                assert abs(count - total * hist[c] / len(dev)) <= 1.0
            assert restore_injection(noisy, rep).records == fixture_corpus.records
            mid_high = rep.per_group["mid"] + rep.per_group["high"]
            assert mid_high / len(rep.flipped) >= 0.85
        report("C6 injection bookkeeping",
               "(exact counts at 1/5/10%, per-class within 1, inverse exact, >=85% mid/high)")


class TestC7PrecisionAtK:
    def test_paper_outcome_exact(self):
        ranked = [f"suspect_{i:03d}" for i in range(100)]
        verdicts = {sid: ("mislabel" if i < 78 else "correct") for i, sid in enumerate(ranked)}
        value = precision_at_k(ranked, verdicts, 100)
        assert value == 78.0
        report("C7 precision@100", f"(= {value})")


class TestC8EndToEndDeterminism:
    def test_detect_twice_byte_identical(self, noisy_fixture, tmp_path):
        from labelsift.cli import main
        noisy, _ = noisy_fixture
        manifest = write_manifest(noisy, tmp_path / "manifest.csv")
        config = tmp_path / "config.json"
        config.write_text(json.dumps(DETECT_CONFIG.to_dict()))
        outs = []
        for name in ("run1", "run2"):
            out = tmp_path / name
            assert main(["detect", "--manifest", str(manifest), "--config", str(config),
                         "--seed", str(DETECT_CONFIG.seed), "--out", str(out)]) == 0
            outs.append(out)
        files = ("plan.json", "corrections.csv", "filters.csv", "assessments.csv",
                 "gmm_stage1.json", "gmm_stage2.json")
        for fname in files:
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes(), fname
        report("C8 end-to-end determinism", f"({len(files)} artifacts byte-identical)")
