"""Ground-truth detection reports, classification metrics, precision@k, and
projection export.

Detection reports compare a cleaning plan against an injection report's flip
set. Classification metrics follow the binary anomaly-detection convention:
precision/sensitivity/F1 are computed one-vs-rest for the positive (anomaly)
class, and the convention is recorded in the emitted metadata.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import TrainingConfig, train
from .dataset import Dataset
from .errors import CoverageError, DegenerateInputError, DomainError, IntegrityError
from .injection import InjectionReport
from .pipeline import CleaningPlan

METRIC_CONVENTION = ("binary one-vs-rest on the positive (anomaly) class; "
                     "sensitivity is positive-class recall; F1 is 0 when "
                     "precision and sensitivity are both 0")


@dataclass(frozen=True)
class DetectionReport:
    noisy_total: int
    missed: int
    filtered_non_noisy: int
    detected: int

    def __post_init__(self):
        if min(self.noisy_total, self.missed, self.filtered_non_noisy, self.detected) < 0:
            raise IntegrityError("detection counts must be nonnegative")
        if self.detected + self.missed != self.noisy_total:
            raise IntegrityError(
                f"detected ({self.detected}) + missed ({self.missed}) != noisy_total ({self.noisy_total})")

    @property
    def recall(self) -> float:
        return self.detected / self.noisy_total if self.noisy_total else 0.0

    def to_dict(self) -> dict:
        return {"noisy_total": self.noisy_total, "missed": self.missed,
                "filtered_non_noisy": self.filtered_non_noisy, "detected": self.detected,
                "recall": self.recall}


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    f1: float
    precision: float
    sensitivity: float
    avg_max_confidence: float

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f1": self.f1, "precision": self.precision,
                "sensitivity": self.sensitivity, "avg_max_confidence": self.avg_max_confidence,
                "convention": METRIC_CONVENTION}


def detection_report(plan: CleaningPlan, report: InjectionReport) -> DetectionReport:
    """Set algebra over the flip set versus the plan's correction and filter sets.

    A flipped sample counts as detected when it was corrected back to its true
    label or filtered out (or both).
    """
    true_label = {sid: old for sid, old, _new, _grp in report.flipped}
    flip_ids = set(true_label)
    corrected_to_truth = {sid for sid, _old, new, _r in plan.corrections
                          if sid in true_label and new == true_label[sid]}
    filter_ids = plan.filter_ids()
    detected = len(corrected_to_truth | (filter_ids & flip_ids))
    return DetectionReport(
        noisy_total=len(flip_ids),
        missed=len(flip_ids) - detected,
        filtered_non_noisy=len(filter_ids - flip_ids),
        detected=detected)


def classification_metrics(preds, labels, positive_class: int) -> ClassificationMetrics:
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.ndim != 2 or len(preds) != len(labels):
        raise DomainError("preds must be one probability vector per label")
    if len(preds) == 0:
        raise DomainError("cannot compute metrics on empty input")
    if labels.min() < 0 or labels.max() >= preds.shape[1]:
        raise DomainError("labels out of range")
    if not (0 <= positive_class < preds.shape[1]):
        raise DomainError("positive_class out of range")

    hard = preds.argmax(axis=1)
    accuracy = float((hard == labels).mean())
    pred_pos = hard == positive_class
    true_pos = labels == positive_class
    tp = int((pred_pos & true_pos).sum())
    fp = int((pred_pos & ~true_pos).sum())
    fn = int((~pred_pos & true_pos).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    sensitivity = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * sensitivity / (precision + sensitivity)
          if precision + sensitivity > 0 else 0.0)
    return ClassificationMetrics(accuracy, f1, precision, sensitivity,
                                 float(preds.max(axis=1).mean()))


def precision_at_k(ranked_suspects, verdicts: dict[str, str], k: int) -> float:
    """Fraction of the top k ranked suspects adjudicated as mislabel, times 100."""
    ranked = list(ranked_suspects)
    if k <= 0:
        raise DomainError("k must be positive")
    if k > len(ranked):
        raise DomainError(f"k={k} exceeds ranking length {len(ranked)}")
    top = ranked[:k]
    missing = [sid for sid in top if sid not in verdicts]
    if missing:
        raise CoverageError(f"verdict missing for {len(missing)} of the top {k}", pending=missing)
    hits = sum(1 for sid in top if verdicts[sid] == "mislabel")
    return 100.0 * hits / k


def pca_projection(features, out_dims: int = 2, pre_dims: int = 50) -> np.ndarray:
    """Mean-centered projection onto the top principal components.

    Components come from an eigendecomposition of the covariance matrix,
    ordered by descending explained variance, each signed so its
    largest-magnitude loading is positive. ``pre_dims`` caps the rank of the
    intermediate basis the projection is drawn from.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise DomainError("need at least 3 feature vectors")
    if x.shape[1] < 2:
        raise DomainError("feature dimension must be >= 2")
    centered = x - x.mean(axis=0)
    if np.allclose(centered, 0.0):
        raise DegenerateInputError("zero-variance input has no principal directions")
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:min(pre_dims, x.shape[1])]
    take = order[:out_dims]
    components = eigvecs[:, take]
    for j in range(components.shape[1]):
        lead = np.argmax(np.abs(components[:, j]))
        if components[lead, j] < 0:
            components[:, j] = -components[:, j]
    return centered @ components


def write_projection_csv(ds: Dataset, plan: CleaningPlan, path: str | Path,
                         split: str = "dev") -> Path:
    """Export 2-D coordinates with each sample's cleaning status for plotting.

    A sample both corrected and filtered reports its final disposition
    (filtered).
    """
    records = ds.split_records(split)
    coords = pca_projection(np.asarray([r.features for r in records], dtype=float))
    corrected = plan.correction_ids()
    filtered = plan.filter_ids()
    path = Path(path)
    with path.open("w") as fh:
        fh.write("sample_id,pc1,pc2,given_label,status\n")
        for rec, (pc1, pc2) in zip(records, coords):
            if rec.sample_id in filtered:
                status = "filtered"
            elif rec.sample_id in corrected:
                status = "corrected"
            else:
                status = "kept"
            fh.write(f"{rec.sample_id},{pc1!r},{pc2!r},{rec.given_label},{status}\n")
    return path


def train_eval(ds: Dataset, cfg: TrainingConfig, positive_class: int,
               run_index: int = 0) -> ClassificationMetrics:
    """Train one model on the dev split and score it on the test split."""
    model, _ledger = train(ds, cfg, run_index)
    test = ds.split_records("test")
    if not test:
        raise DomainError("dataset has no test split")
    x = np.asarray([r.features for r in test], dtype=float)
    labels = [r.true_label if r.true_label is not None else r.given_label for r in test]
    preds = model.predict_proba(x)
    return classification_metrics(preds, labels, positive_class)


def detection_table_text(reports: dict[str, DetectionReport]) -> str:
    """Aligned text table over one column per noise rate."""
    rates = list(reports)
    rows = [
        ("Amount of noisy samples", [reports[r].noisy_total for r in rates]),
        ("Amount of not corrected or filtered samples", [reports[r].missed for r in rates]),
        ("Amount of filtered non-noisy samples", [reports[r].filtered_non_noisy for r in rates]),
        ("Amount of corrected and/or filtered samples", [reports[r].detected for r in rates]),
    ]
    label_w = max(len(r[0]) for r in rows) + 2
    col_w = max(8, *(len(r) + 2 for r in rates))
    lines = ["Cleaning status".ljust(label_w) + "".join(r.rjust(col_w) for r in rates)]
    for label, values in rows:
        lines.append(label.ljust(label_w) + "".join(str(v).rjust(col_w) for v in values))
    return "\n".join(lines) + "\n"


def metrics_table_text(rows: list[tuple[str, ClassificationMetrics]]) -> str:
    """Aligned text table of percentage metrics, one row per configuration."""
    header = ["Configuration", "Accuracy", "F1-Score", "Precision", "Sensitivity", "AvgMaxConf"]
    name_w = max(len(header[0]), *(len(name) for name, _ in rows)) + 2
    col_w = 12
    lines = [header[0].ljust(name_w) + "".join(h.rjust(col_w) for h in header[1:])]
    for name, m in rows:
        cells = [f"{m.accuracy * 100:.2f}", f"{m.f1 * 100:.2f}", f"{m.precision * 100:.2f}",
                 f"{m.sensitivity * 100:.2f}", f"{m.avg_max_confidence:.2f}"]
        lines.append(name.ljust(name_w) + "".join(c.rjust(col_w) for c in cells))
    return "\n".join(lines) + "\n"


def write_metrics_json(metrics: ClassificationMetrics, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(metrics.to_dict(), indent=2) + "\n")
    return path
