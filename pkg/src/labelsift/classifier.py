"""Compact trainable classifier with focal loss and per-sample loss bookkeeping.

The model is a small fully connected network (input -> hidden widths -> C with
a softmax head) trained with decoupled-weight-decay adaptive-moment updates.
It is implemented directly on numpy so that training is bit-reproducible from
a seed and so the focal-loss gradient has a closed form we can verify against
finite differences.

Per-sample losses are evaluated in inference mode after each epoch's updates
(not the mini-batch training loss), which removes batch-order noise from the
downstream mixture fit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, SampleRecord
from .errors import ConfigError, DomainError, IntegrityError, TrainingError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

PROB_FLOOR = 1e-12

# Epoch default switches at this dev-split size (small corpora train 10, large 15).
LARGE_CORPUS_THRESHOLD = 100_000


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int | None = None
    batch_size: int = 64
    focal_gamma: float = 2.0
    focal_alpha: tuple[float, ...] | None = None
    seed: int = 0
    hidden_widths: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.focal_alpha is not None:
            object.__setattr__(self, "focal_alpha", tuple(float(a) for a in self.focal_alpha))
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.focal_gamma < 0:
            raise ConfigError("focal_gamma must be >= 0")
        if self.focal_alpha is not None and any(a <= 0 for a in self.focal_alpha):
            raise ConfigError("focal_alpha entries must be > 0")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden_widths must be positive")

    def resolve_epochs(self, dev_size: int) -> int:
        if self.epochs is not None:
            return self.epochs
        return 15 if dev_size >= LARGE_CORPUS_THRESHOLD else 10


def inverse_frequency_alpha(labels: np.ndarray, num_classes: int) -> tuple[float, ...]:
    """Per-class weights proportional to 1/frequency, normalized to mean 1."""
    counts = np.bincount(labels, minlength=num_classes).astype(float)
    if np.any(counts == 0):
        raise TrainingError("every class must appear at least once in the dev split")
    inv = 1.0 / counts
    return tuple(inv / inv.mean())


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def focal_loss(probs, target: int, gamma: float = 2.0, alpha=None) -> float:
    """FL = -alpha[target] * (1 - p_t)^gamma * ln(p_t), with p_t floored at 1e-12.

    gamma=0 with unit alpha reduces exactly to cross-entropy.
    """
    p = np.asarray(probs, dtype=float)
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise DomainError("probs must sum to 1 within 1e-9")
    if not (0 <= target < p.shape[-1]):
        raise DomainError(f"target {target} out of range for {p.shape[-1]} classes")
    a_t = 1.0 if alpha is None else float(np.asarray(alpha, dtype=float)[target])
    p_t = min(max(float(p[target]), PROB_FLOOR), 1.0)
    return -a_t * (1.0 - p_t) ** gamma * math.log(p_t)


def _focal_loss_batch(probs: np.ndarray, targets: np.ndarray, gamma: float, alpha: np.ndarray) -> np.ndarray:
    p_t = np.clip(probs[np.arange(len(targets)), targets], PROB_FLOOR, 1.0)
    return -alpha[targets] * (1.0 - p_t) ** gamma * np.log(p_t)


def focal_loss_grad_logits(logits: np.ndarray, target: int, gamma: float = 2.0, alpha=None) -> np.ndarray:
    """Analytic gradient of focal_loss(softmax(logits), target) w.r.t. logits."""
    z = np.asarray(logits, dtype=float)
    if not (0 <= target < z.shape[-1]):
        raise DomainError(f"target {target} out of range for {z.shape[-1]} classes")
    p = softmax(z[None, :])
    t = np.asarray([target])
    a = np.ones(z.shape[-1]) if alpha is None else np.asarray(alpha, dtype=float)
    return _focal_grad_batch(p, t, gamma, a)[0]


def _focal_grad_batch(probs: np.ndarray, targets: np.ndarray, gamma: float, alpha: np.ndarray) -> np.ndarray:
    """dL/dlogits for L = focal loss of softmax probabilities, one row per sample.

    With p_t the target probability,
      dL/dp_t = alpha_t * (gamma * (1-p_t)^(gamma-1) * ln p_t - (1-p_t)^gamma / p_t)
      dL/dz_j = dL/dp_t * p_t * (1[j == t] - p_j).
    """
    n = len(targets)
    rows = np.arange(n)
    p_t = np.clip(probs[rows, targets], PROB_FLOOR, 1.0 - PROB_FLOOR)
    a_t = alpha[targets]
    one_m = 1.0 - p_t
    if gamma == 0.0:
        dldp = -a_t / p_t
    else:
        dldp = a_t * (gamma * one_m ** (gamma - 1.0) * np.log(p_t) - one_m ** gamma / p_t)
    scale = dldp * p_t
    grad = -scale[:, None] * probs
    grad[rows, targets] += scale
    return grad


class MlpClassifier:
    """Fully connected ReLU network with a softmax output head."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, input_dim: int, hidden_widths: tuple[int, ...], num_classes: int,
             rng: np.random.Generator) -> "MlpClassifier":
        dims = [input_dim, *hidden_widths, num_classes]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Return logits and the post-activation values of each layer input."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        return logits, acts

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.input_dim:
            raise DomainError(f"feature dimension {x.shape[-1]} != model input {self.input_dim}")
        logits, _ = self.forward(np.atleast_2d(x))
        return softmax(logits)

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def predict(model: MlpClassifier, sample: SampleRecord) -> np.ndarray:
    """Class probability vector for one sample (sums to 1)."""
    x = np.asarray(sample.features, dtype=float)
    return model.predict_proba(x)[0]


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay:
    theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)."""

    def __init__(self, params: list[np.ndarray], lr: float, weight_decay: float):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.t
        bc2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            p -= self.lr * (update + self.weight_decay * p)


@dataclass
class RunRecord:
    """Final-epoch predictive state of one sample in one run."""

    probs: tuple[float, ...]
    confidence: float
    entropy: float


@dataclass
class LossLedger:
    """Per-sample, per-run, per-epoch loss plus the final predictive distribution.

    ``losses`` maps (sample_id, run_index, epoch) to the inference-mode focal
    loss; ``finals`` maps (sample_id, run_index) to the final-epoch prediction.
    """

    losses: dict[tuple[str, int, int], float] = field(default_factory=dict)
    finals: dict[tuple[str, int], RunRecord] = field(default_factory=dict)
    epochs_per_run: dict[int, int] = field(default_factory=dict)

    def run_indices(self) -> list[int]:
        return sorted(self.epochs_per_run)

    def sample_ids(self) -> list[str]:
        return sorted({sid for sid, _run in self.finals})

    def merge(self, other: "LossLedger") -> None:
        overlap = set(self.epochs_per_run) & set(other.epochs_per_run)
        if overlap:
            raise IntegrityError(f"ledger already has run(s) {sorted(overlap)}")
        self.losses.update(other.losses)
        self.finals.update(other.finals)
        self.epochs_per_run.update(other.epochs_per_run)

    @staticmethod
    def merged(fragments) -> "LossLedger":
        out = LossLedger()
        for frag in sorted(fragments, key=lambda f: min(f.epochs_per_run, default=0)):
            out.merge(frag)
        return out

    def write_csvs(self, loss_path: str | Path, finals_path: str | Path) -> None:
        loss_path, finals_path = Path(loss_path), Path(finals_path)
        with loss_path.open("w") as fh:
            fh.write("sample_id,run_index,epoch,loss\n")
            for (sid, run, epoch) in sorted(self.losses):
                fh.write(f"{sid},{run},{epoch},{self.losses[(sid, run, epoch)]!r}\n")
        with finals_path.open("w") as fh:
            some = next(iter(self.finals.values()), None)
            c = len(some.probs) if some else 0
            cols = ",".join(f"prob_{i}" for i in range(c))
            fh.write(f"sample_id,run_index,{cols},confidence,entropy\n")
            for (sid, run) in sorted(self.finals):
                rec = self.finals[(sid, run)]
                probs = ",".join(repr(p) for p in rec.probs)
                fh.write(f"{sid},{run},{probs},{rec.confidence!r},{rec.entropy!r}\n")

    @staticmethod
    def read_csvs(loss_path: str | Path, finals_path: str | Path) -> "LossLedger":
        ledger = LossLedger()
        with Path(loss_path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["sample_id"], int(row["run_index"]), int(row["epoch"]))
                ledger.losses[key] = float(row["loss"])
        for (_sid, run, epoch) in ledger.losses:
            ledger.epochs_per_run[run] = max(ledger.epochs_per_run.get(run, 0), epoch + 1)
        with Path(finals_path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            prob_cols = [c for c in reader.fieldnames if c.startswith("prob_")]
            for row in reader:
                probs = tuple(float(row[c]) for c in prob_cols)
                ledger.finals[(row["sample_id"], int(row["run_index"]))] = RunRecord(
                    probs, float(row["confidence"]), float(row["entropy"]))
        return ledger


def _entropy(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    return -(np.where(probs > 0, probs * np.log(safe), 0.0)).sum(axis=-1)


def train(ds: Dataset, cfg: TrainingConfig, run_index: int = 0) -> tuple[MlpClassifier, LossLedger]:
    """Train one model on the dev split and return it with its ledger fragment.

    Fully deterministic given (cfg.seed, run_index): initialization uses the
    (seed, run_index) stream and each epoch's batch order uses a
    (seed, run_index, epoch) stream.
    """
    dev = ds.split_records("dev")
    if not dev:
        raise TrainingError("dev split is empty")
    x = np.asarray([r.features for r in dev], dtype=float)
    y = np.asarray([r.given_label for r in dev], dtype=np.int64)
    present = np.unique(y)
    if len(present) < ds.num_classes:
        missing = sorted(set(range(ds.num_classes)) - set(present.tolist()))
        raise TrainingError(f"class(es) {missing} missing from dev split")

    alpha = np.asarray(cfg.focal_alpha if cfg.focal_alpha is not None
                       else inverse_frequency_alpha(y, ds.num_classes), dtype=float)
    if len(alpha) != ds.num_classes:
        raise ConfigError("focal_alpha length must equal the number of classes")
    epochs = cfg.resolve_epochs(len(dev))

    init_rng = np.random.default_rng([cfg.seed, run_index, 1])
    model = MlpClassifier.init(x.shape[1], cfg.hidden_widths, ds.num_classes, init_rng)
    opt = AdamW(model.parameters(), cfg.learning_rate, cfg.weight_decay)

    ledger = LossLedger(epochs_per_run={run_index: epochs})
    sample_ids = [r.sample_id for r in dev]

    for epoch in range(epochs):
        order = np.random.default_rng([cfg.seed, run_index, 2, epoch]).permutation(len(dev))
        for start in range(0, len(dev), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            xb, yb = x[batch], y[batch]
            logits, acts = model.forward(xb)
            probs = softmax(logits)
            dlogits = _focal_grad_batch(probs, yb, cfg.focal_gamma, alpha) / len(batch)
            grads_w, grads_b = _backprop(model, acts, dlogits)
            opt.step([*grads_w, *grads_b])

        logits_all, _ = model.forward(x)
        probs_all = softmax(logits_all)
        losses = _focal_loss_batch(probs_all, y, cfg.focal_gamma, alpha)
        for sid, loss in zip(sample_ids, losses):
            ledger.losses[(sid, run_index, epoch)] = float(loss)
        if epoch == epochs - 1:
            conf = probs_all.max(axis=1)
            ent = _entropy(probs_all)
            for i, sid in enumerate(sample_ids):
                ledger.finals[(sid, run_index)] = RunRecord(
                    tuple(float(p) for p in probs_all[i]), float(conf[i]), float(ent[i]))
    return model, ledger


def _backprop(model: MlpClassifier, acts: list[np.ndarray],
              dlogits: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    grads_w = [np.zeros_like(w) for w in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    delta = dlogits
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0)
    return grads_w, grads_b
