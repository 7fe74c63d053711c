"""Manifest-backed dataset model, synthetic corpus generation, and cleaned-split emission.

A dataset is an ordered list of samples, each belonging to a ``dev`` or
``test`` split and to a group (video/patient). Manifests are CSV files with
a fixed column order; floats are serialized with 9 significant digits so
that write -> load round-trips are bit-exact.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, IntegrityError, ParseError

SPLITS = ("dev", "test")

BASE_COLUMNS = ("sample_id", "split", "group_id", "frame_index", "given_label", "true_label")

_FLOAT_FMT = "{:.9g}"


def format_float(x: float) -> str:
    return _FLOAT_FMT.format(float(x))


def _round9(x: float) -> float:
    """Round through the manifest serialization format (9 significant digits)."""
    return float(_FLOAT_FMT.format(float(x)))


@dataclass(frozen=True)
class SampleRecord:
    """One dataset item. Exactly one of ``features``/``image_path`` is set at load time;
    image-backed records additionally get stub features computed on load."""

    sample_id: str
    split: str
    group_id: str
    frame_index: int
    given_label: int
    true_label: int | None = None
    features: tuple[float, ...] | None = None
    image_path: str | None = None


@dataclass(frozen=True)
class Dataset:
    records: tuple[SampleRecord, ...]
    num_classes: int
    class_names: tuple[str, ...]

    def __post_init__(self):
        if self.num_classes < 2:
            raise IntegrityError("dataset needs at least 2 classes")
        if len(self.class_names) != self.num_classes:
            raise IntegrityError("class_names length must equal num_classes")
        seen: set[str] = set()
        dev_groups: set[str] = set()
        test_groups: set[str] = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise IntegrityError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            if rec.split not in SPLITS:
                raise IntegrityError(f"sample {rec.sample_id!r}: unknown split {rec.split!r}")
            if not (0 <= rec.given_label < self.num_classes):
                raise IntegrityError(f"sample {rec.sample_id!r}: given_label out of range")
            if rec.true_label is not None and not (0 <= rec.true_label < self.num_classes):
                raise IntegrityError(f"sample {rec.sample_id!r}: true_label out of range")
            if rec.features is None and rec.image_path is None:
                raise IntegrityError(f"sample {rec.sample_id!r}: needs features or image_path")
            if rec.frame_index < 0:
                raise IntegrityError(f"sample {rec.sample_id!r}: negative frame_index")
            (dev_groups if rec.split == "dev" else test_groups).add(rec.group_id)
        overlap = dev_groups & test_groups
        if overlap:
            raise IntegrityError(f"group(s) present in both dev and test: {sorted(overlap)}")
        object.__setattr__(self, "_by_id", {r.sample_id: r for r in self.records})

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def get(self, sample_id: str) -> SampleRecord:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise IntegrityError(f"unknown sample_id {sample_id!r}") from None

    def has(self, sample_id: str) -> bool:
        return sample_id in self._by_id

    @property
    def feature_dim(self) -> int:
        for r in self.records:
            if r.features is not None:
                return len(r.features)
        raise DomainError("dataset has no feature vectors")

    def class_histogram(self, split: str | None = None) -> list[int]:
        counts = [0] * self.num_classes
        for r in self.records:
            if split is None or r.split == split:
                counts[r.given_label] += 1
        return counts

    def minority_class(self, split: str | None = None) -> int:
        """Least-frequent given label; ties resolve to the highest index."""
        counts = self.class_histogram(split)
        best = 0
        for c in range(self.num_classes):
            if counts[c] <= counts[best]:
                best = c
        return best

    def with_records(self, records) -> "Dataset":
        return Dataset(tuple(records), self.num_classes, self.class_names)


def default_class_names(num_classes: int) -> tuple[str, ...]:
    return tuple(f"class_{c}" for c in range(num_classes))


def embed_image(path: str | Path) -> tuple[float, ...]:
    """Deterministic embedding stub: mean-pooled 8x8 grayscale downsample,
    flattened and standardized to zero mean / unit variance."""
    from PIL import Image

    with Image.open(path) as img:
        small = img.convert("L").resize((8, 8), Image.Resampling.BOX)
        v = np.asarray(small, dtype=np.float64).ravel()
    std = float(v.std())
    if std == 0.0:
        v = np.zeros_like(v)
    else:
        v = (v - v.mean()) / std
    return tuple(_round9(x) for x in v)


def load_manifest(path: str | Path) -> Dataset:
    """Parse a manifest CSV into a Dataset.

    The header must start with the fixed base columns followed by either
    ``feature_0..feature_{d-1}`` or a single ``image_path`` column. Lines
    starting with ``#`` are provenance comments and are skipped. Rows with
    an empty given_label are unlabeled and ignored.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError(f"manifest not found: {path}")
    rows: list[tuple[int, list[str]]] = []
    with path.open(newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parsed = next(csv.reader([line]))
            rows.append((lineno, parsed))
    if not rows:
        raise ParseError(f"{path}: no header row")
    header_lineno, header = rows[0]
    if tuple(header[: len(BASE_COLUMNS)]) != BASE_COLUMNS:
        raise ParseError(f"{path}: line {header_lineno}: bad header, expected columns {','.join(BASE_COLUMNS)},...")
    tail = header[len(BASE_COLUMNS):]
    image_mode = tail == ["image_path"]
    if not image_mode:
        expected = [f"feature_{i}" for i in range(len(tail))]
        if not tail or tail != expected:
            raise ParseError(f"{path}: line {header_lineno}: bad header, expected feature_0..feature_{{d-1}} or image_path")

    records: list[SampleRecord] = []
    max_label = -1
    for lineno, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        sid, split, group_id, frame_s, given_s, true_s = row[: len(BASE_COLUMNS)]
        if given_s == "":
            continue  # unlabeled row
        try:
            frame_index = int(frame_s)
            given_label = int(given_s)
            true_label = int(true_s) if true_s != "" else None
            if image_mode:
                features = embed_image(row[len(BASE_COLUMNS)])
                image_path = row[len(BASE_COLUMNS)]
            else:
                features = tuple(float(v) for v in row[len(BASE_COLUMNS):])
                image_path = None
        except (ValueError, OSError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
        if given_label < 0 or (true_label is not None and true_label < 0):
            raise ParseError(f"{path}: line {lineno}: negative label")
        max_label = max(max_label, given_label, true_label if true_label is not None else -1)
        records.append(SampleRecord(sid, split, group_id, frame_index, given_label, true_label,
                                    features=features, image_path=image_path))
    if not records:
        raise ParseError(f"{path}: manifest has no labeled rows")
    num_classes = max(max_label + 1, 2)
    return Dataset(tuple(records), num_classes, default_class_names(num_classes))


def write_manifest(ds: Dataset, path: str | Path, provenance: str | None = None) -> Path:
    """Write a Dataset back to manifest CSV form (single writer, atomic enough
    for our purposes: full rewrite)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image_mode = all(r.image_path is not None for r in ds.records)
    buf = io.StringIO()
    if provenance:
        buf.write(f"# {provenance}\n")
    if image_mode:
        header = list(BASE_COLUMNS) + ["image_path"]
    else:
        d = ds.feature_dim
        header = list(BASE_COLUMNS) + [f"feature_{i}" for i in range(d)]
    buf.write(",".join(header) + "\n")
    for r in ds.records:
        true_s = "" if r.true_label is None else str(r.true_label)
        cells = [r.sample_id, r.split, r.group_id, str(r.frame_index), str(r.given_label), true_s]
        if image_mode:
            cells.append(r.image_path or "")
        else:
            cells.extend(format_float(v) for v in r.features)
        buf.write(",".join(cells) + "\n")
    path.write_text(buf.getvalue())
    return path


@dataclass(frozen=True)
class SyntheticConfig:
    """Configuration for the synthetic corpus generator.

    ``n_per_class`` are dev-split counts; ``n_test_per_class`` optionally adds
    a held-out test split drawn from the same class distributions but from
    disjoint groups.
    """

    n_per_class: tuple[int, ...]
    d: int = 16
    class_separation: float = 4.0
    ambiguous_fraction: float = 0.1
    seed: int = 0
    n_test_per_class: tuple[int, ...] | None = None
    group_block: int = 20

    def __post_init__(self):
        object.__setattr__(self, "n_per_class", tuple(int(n) for n in self.n_per_class))
        if self.n_test_per_class is not None:
            object.__setattr__(self, "n_test_per_class", tuple(int(n) for n in self.n_test_per_class))
        if len(self.n_per_class) < 2:
            raise ConfigError("need at least 2 classes")
        if any(n < 10 for n in self.n_per_class):
            raise ConfigError("n_per_class entries must be >= 10")
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if self.d < len(self.n_per_class):
            raise ConfigError("d must be >= number of classes")
        if not (0.0 <= self.ambiguous_fraction <= 0.5):
            raise ConfigError("ambiguous_fraction must be in [0, 0.5]")
        if self.n_test_per_class is not None and len(self.n_test_per_class) != len(self.n_per_class):
            raise ConfigError("n_test_per_class length must match n_per_class")
        if self.group_block < 1:
            raise ConfigError("group_block must be positive")


def generate_synthetic_corpus(cfg: SyntheticConfig) -> Dataset:
    """Draw an imbalanced blob corpus with a controllable ambiguous region.

    Class c samples come from an isotropic unit-variance Gaussian at mean
    ``mu_c = (class_separation / sqrt(2)) * e_c`` so every pair of class means
    sits exactly ``class_separation`` apart. An ``ambiguous_fraction`` of each
    class is instead drawn tightly (std 0.5) around the midpoint to another
    class mean, which creates genuinely hard samples without planting points
    deep inside the wrong class. true_label equals given_label everywhere; the
    injection harness is what introduces disagreement.
    """
    num_classes = len(cfg.n_per_class)
    rng = np.random.default_rng(cfg.seed)
    means = np.zeros((num_classes, cfg.d))
    for c in range(num_classes):
        means[c, c] = cfg.class_separation / np.sqrt(2.0)

    records: list[SampleRecord] = []
    counter = 0

    def emit_split(split: str, counts, group_prefix: str):
        nonlocal counter
        block, group_seq, frame = cfg.group_block, 0, 0
        group_start = len(records)
        for c, n in enumerate(counts):
            if n == 0:
                continue
            pts = rng.normal(size=(n, cfg.d)) + means[c]
            k = int(round(cfg.ambiguous_fraction * n))
            if k > 0:
                idx = rng.choice(n, size=k, replace=False)
                others = [o for o in range(num_classes) if o != c]
                targets = rng.integers(0, len(others), size=k)
                for j, t in zip(idx, targets):
                    mid = (means[c] + means[others[t]]) / 2.0
                    pts[j] = 0.5 * rng.normal(size=cfg.d) + mid
            for i in range(n):
                pos = len(records) - group_start
                group_id = f"{group_prefix}{pos // block:04d}"
                frame = pos % block
                feats = tuple(_round9(v) for v in pts[i])
                records.append(SampleRecord(
                    sample_id=f"s{counter:06d}", split=split, group_id=group_id,
                    frame_index=frame, given_label=c, true_label=c, features=feats))
                counter += 1

    emit_split("dev", cfg.n_per_class, "v")
    if cfg.n_test_per_class is not None:
        emit_split("test", cfg.n_test_per_class, "w")
    return Dataset(tuple(records), num_classes, default_class_names(num_classes))


def write_cleaned_splits(ds: Dataset, plan, out_dir: str | Path,
                         anomaly_label: int | None = None) -> dict[str, Path]:
    """Emit the corrected manifest (all rows, labels replaced), the filtered
    manifest (corrected rows minus the filter set), and a full-dataset relabel
    file marking every sample ``anomaly``/``normal`` per the pipeline verdict.

    The verdict label for a sample is its corrected label when the plan
    corrects it, otherwise its given label; ``anomaly_label`` defaults to the
    minority class.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid, *_ in plan.corrections:
        if not ds.has(sid):
            raise IntegrityError(f"plan corrects unknown sample_id {sid!r}")
    for sid, *_ in plan.filters:
        if not ds.has(sid):
            raise IntegrityError(f"plan filters unknown sample_id {sid!r}")
    if anomaly_label is None:
        anomaly_label = ds.minority_class()
    if not (0 <= anomaly_label < ds.num_classes):
        raise ConfigError("anomaly_label out of range")

    new_label = {sid: new for sid, _old, new, _r in plan.corrections}
    filter_ids = {sid for sid, _p in plan.filters}

    corrected = [replace(r, given_label=new_label.get(r.sample_id, r.given_label)) for r in ds.records]
    corrected_ds = ds.with_records(corrected)
    filtered_ds = ds.with_records([r for r in corrected if r.sample_id not in filter_ids])

    paths = {
        "corrected": write_manifest(corrected_ds, out_dir / "corrected.csv",
                                    provenance=f"corrected manifest: {len(plan.corrections)} labels replaced"),
        "filtered": write_manifest(filtered_ds, out_dir / "filtered.csv",
                                   provenance=f"filtered manifest: {len(plan.corrections)} corrected, {len(filter_ids)} removed"),
    }
    relabel_path = out_dir / "relabel.csv"
    with relabel_path.open("w") as fh:
        fh.write("sample_id,pipeline_label\n")
        for r in corrected:
            verdict = "anomaly" if r.given_label == anomaly_label else "normal"
            fh.write(f"{r.sample_id},{verdict}\n")
    paths["relabel"] = relabel_path
    return paths
