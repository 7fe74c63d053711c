"""Controlled label-noise injection driven by per-sample uncertainty scores.

Samples are scored by combining normalized prediction confidence and entropy
(equally weighted), split into rank-based low/mid/high tertiles, and flips are
then drawn mostly from the mid and high groups while preserving each class's
share of the total flip budget.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .classifier import LossLedger
from .dataset import Dataset
from .errors import ConfigError, DomainError, IntegrityError

GROUPS = ("low", "mid", "high")

DEFAULT_GROUP_WEIGHTS = {"low": 0.10, "mid": 0.45, "high": 0.45}

MAX_RATE = 0.2
MIN_RUNS = 3


@dataclass(frozen=True)
class UncertaintyScore:
    sample_id: str
    mean_confidence: float
    mean_entropy: float
    norm_confidence: float
    norm_entropy: float
    score: float
    quantile_group: str


@dataclass(frozen=True)
class InjectionReport:
    flipped: tuple[tuple[str, int, int, str], ...]  # (sample_id, old, new, group)
    rate: float
    per_class: dict[int, int]
    per_group: dict[str, int]
    group_weights: dict[str, float]
    seed: int

    def flip_ids(self) -> set[str]:
        return {sid for sid, *_ in self.flipped}

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "seed": self.seed,
            "total_flips": len(self.flipped),
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "per_group": {g: self.per_group.get(g, 0) for g in GROUPS},
            "group_weights": {g: self.group_weights[g] for g in GROUPS},
            "flipped": [{"sample_id": s, "old_label": o, "new_label": n, "group": g}
                        for s, o, n, g in self.flipped],
        }

    def write(self, json_path: str | Path, csv_path: str | Path) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with Path(csv_path).open("w") as fh:
            fh.write("sample_id,old_label,new_label,group\n")
            for sid, old, new, grp in self.flipped:
                fh.write(f"{sid},{old},{new},{grp}\n")

    @staticmethod
    def from_json(path: str | Path) -> "InjectionReport":
        d = json.loads(Path(path).read_text())
        return InjectionReport(
            flipped=tuple((f["sample_id"], f["old_label"], f["new_label"], f["group"])
                          for f in d["flipped"]),
            rate=d["rate"], seed=d["seed"],
            per_class={int(k): v for k, v in d["per_class"].items()},
            per_group=dict(d["per_group"]), group_weights=dict(d["group_weights"]))


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full_like(values, 0.5)  # no spread: neutral
    return (values - lo) / (hi - lo)


def compute_uncertainty_scores(ledger: LossLedger) -> list[UncertaintyScore]:
    """Average final-epoch confidence and entropy across runs, min-max normalize
    over the dev split, and combine with equal weight into one score.

    Tertile groups are rank-based (score ties break on sample_id) so they are
    immune to degenerate score distributions.
    """
    runs = ledger.run_indices()
    if len(runs) < MIN_RUNS:
        raise DomainError(f"uncertainty scoring needs at least {MIN_RUNS} runs, ledger has {len(runs)}")
    sample_ids = ledger.sample_ids()
    conf = np.empty(len(sample_ids))
    ent = np.empty(len(sample_ids))
    for i, sid in enumerate(sample_ids):
        recs = [ledger.finals[(sid, run)] for run in runs]
        conf[i] = float(np.mean([r.confidence for r in recs]))
        ent[i] = float(np.mean([r.entropy for r in recs]))
    norm_conf = _minmax(conf)
    norm_ent = _minmax(ent)
    score = 0.5 * (1.0 - norm_conf) + 0.5 * norm_ent

    order = sorted(range(len(sample_ids)), key=lambda i: (score[i], sample_ids[i]))
    n = len(order)
    group_of = {}
    for rank, i in enumerate(order):
        if rank < n // 3:
            group_of[i] = "low"
        elif rank < (2 * n) // 3:
            group_of[i] = "mid"
        else:
            group_of[i] = "high"
    return [UncertaintyScore(sample_ids[i], float(conf[i]), float(ent[i]),
                             float(norm_conf[i]), float(norm_ent[i]), float(score[i]), group_of[i])
            for i in range(len(sample_ids))]


def _largest_remainder(total: int, shares: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``shares`` (sums exactly)."""
    if total == 0 or shares.sum() == 0:
        return np.zeros(len(shares), dtype=int)
    quota = shares / shares.sum() * total
    alloc = np.floor(quota).astype(int)
    rem = total - alloc.sum()
    # stable tie-break: larger fractional part first, then lower index
    frac_order = sorted(range(len(shares)), key=lambda i: (-(quota[i] - alloc[i]), i))
    for i in frac_order[:rem]:
        alloc[i] += 1
    return alloc


def inject_noise(ds: Dataset, rate: float, scores: list[UncertaintyScore],
                 weights: dict[str, float] | None = None, seed: int = 0) -> tuple[Dataset, InjectionReport]:
    """Flip ``round(rate * |dev|)`` given labels, proportionally per class and
    weighted toward the mid/high uncertainty groups.

    Per class the flip budget is split over the tertile groups by ``weights``;
    a group without enough candidates spills its shortfall into the
    next-higher-uncertainty group (and, as a last resort, back down). Each
    flipped sample gets a uniformly random different class and keeps its
    original label in true_label. The test split is never touched.
    """
    if not (0.0 < rate <= MAX_RATE):
        raise ConfigError(f"rate must be in (0, {MAX_RATE}], got {rate}")
    weights = dict(weights or DEFAULT_GROUP_WEIGHTS)
    if set(weights) != set(GROUPS) or any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
        raise ConfigError("weights must be nonnegative over low/mid/high")

    dev = ds.split_records("dev")
    score_by_id = {s.sample_id: s for s in scores}
    missing = [r.sample_id for r in dev if r.sample_id not in score_by_id]
    if missing:
        raise IntegrityError(f"scores missing for {len(missing)} dev sample(s), e.g. {missing[:3]}")

    total = int(round(rate * len(dev)))
    class_sizes = np.asarray([sum(1 for r in dev if r.given_label == c) for c in range(ds.num_classes)], dtype=float)
    per_class_quota = _largest_remainder(total, class_sizes)

    rng = np.random.default_rng([seed, 0xF11B])
    chosen: list[tuple[str, int, str]] = []  # (sample_id, old_label, group)
    for c in range(ds.num_classes):
        quota = int(per_class_quota[c])
        if quota == 0:
            continue
        candidates = {g: sorted(r.sample_id for r in dev
                                if r.given_label == c and score_by_id[r.sample_id].quantile_group == g)
                      for g in GROUPS}
        w = np.asarray([weights[g] for g in GROUPS], dtype=float)
        desired = _largest_remainder(quota, w)
        take = {g: 0 for g in GROUPS}
        shortfall = 0
        for gi, g in enumerate(GROUPS):  # spill upward: low -> mid -> high
            want = int(desired[gi]) + shortfall
            got = min(want, len(candidates[g]))
            take[g] = got
            shortfall = want - got
        if shortfall > 0:  # last resort: spill back down
            for g in reversed(GROUPS):
                extra = min(shortfall, len(candidates[g]) - take[g])
                take[g] += extra
                shortfall -= extra
        if shortfall > 0:
            raise IntegrityError(f"class {c}: only {quota - shortfall} of {quota} flips placeable")
        for g in GROUPS:
            if take[g] == 0:
                continue
            picked = rng.choice(len(candidates[g]), size=take[g], replace=False)
            for idx in sorted(picked):
                chosen.append((candidates[g][idx], c, g))

    flips: list[tuple[str, int, int, str]] = []
    flip_new: dict[str, int] = {}
    for sid, old, grp in sorted(chosen):
        others = [c2 for c2 in range(ds.num_classes) if c2 != old]
        new = others[int(rng.integers(len(others)))]
        flips.append((sid, old, new, grp))
        flip_new[sid] = new

    new_records = []
    for r in ds.records:
        if r.sample_id in flip_new:
            new_records.append(replace(r, given_label=flip_new[r.sample_id], true_label=r.given_label))
        else:
            new_records.append(r)

    per_class = {c: int(per_class_quota[c]) for c in range(ds.num_classes)}
    per_group = {g: sum(1 for *_x, grp in flips if grp == g) for g in GROUPS}
    report = InjectionReport(tuple(flips), rate, per_class, per_group, weights, seed)
    return ds.with_records(new_records), report


def restore_injection(ds: Dataset, report: InjectionReport) -> Dataset:
    """Inverse of inject_noise over the flip set: flipped samples get their
    retained true label back as the given label."""
    flip_ids = report.flip_ids()
    restored = []
    for r in ds.records:
        if r.sample_id in flip_ids:
            restored.append(replace(r, given_label=r.true_label))
        else:
            restored.append(r)
    return ds.with_records(restored)
