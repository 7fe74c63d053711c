"""Two-stage correct-then-filter cleaning pipeline.

Stage 1 trains the classifier three times on the raw dev split, fits a
three-component mixture to the run- and epoch-averaged per-sample losses,
scores every sample's noise probability, and corrects the labels with the
highest noise reduction. Stage 2 repeats the trainings on the corrected data
and filters the samples with the highest remaining noise probability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import LossLedger, TrainingConfig, focal_loss, train
from .dataset import Dataset
from .errors import ConfigError, IntegrityError, LabelSiftError, StageError
from .gmm import ComponentRoles, GmmModel, assign_roles, fit_gmm, noise_probability

DEFAULT_RUNS_PER_STAGE = 3

# Default selection thresholds: majority posterior assignment to the noisy component.
CORRECTION_R_THRESHOLD = 0.5
FILTER_P_THRESHOLD = 0.5


@dataclass(frozen=True)
class NoiseAssessment:
    sample_id: str
    given_label: int
    aggregated_loss: float
    p_noise: float
    proposed_label: int
    corrected_loss: float
    p_noise_corrected: float
    noise_reduction: float
    rank_by_r: int = 0


@dataclass(frozen=True)
class StageRecord:
    stage: int
    run_seeds: tuple[int, ...]
    gmm_model: GmmModel
    roles: ComponentRoles

    def to_dict(self) -> dict:
        return {"stage": self.stage, "run_seeds": list(self.run_seeds),
                "gmm": self.gmm_model.to_dict(self.roles)}


@dataclass(frozen=True)
class PipelineConfig:
    training: TrainingConfig = field(default_factory=TrainingConfig)
    runs_per_stage: int = DEFAULT_RUNS_PER_STAGE
    k_c: int | None = None
    k_f: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.runs_per_stage < 1:
            raise ConfigError("runs_per_stage must be >= 1")
        if self.k_c is not None and self.k_c < 0:
            raise ConfigError("k_c must be >= 0")
        if self.k_f is not None and self.k_f < 0:
            raise ConfigError("k_f must be >= 0")

    def to_dict(self) -> dict:
        t = self.training
        return {
            "training": {
                "learning_rate": t.learning_rate, "weight_decay": t.weight_decay,
                "epochs": t.epochs, "batch_size": t.batch_size,
                "focal_gamma": t.focal_gamma,
                "focal_alpha": list(t.focal_alpha) if t.focal_alpha is not None else None,
                "seed": t.seed, "hidden_widths": list(t.hidden_widths),
            },
            "runs_per_stage": self.runs_per_stage,
            "k_c": self.k_c, "k_f": self.k_f, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        t = dict(d.get("training", {}))
        if t.get("focal_alpha") is not None:
            t["focal_alpha"] = tuple(t["focal_alpha"])
        if t.get("hidden_widths") is not None:
            t["hidden_widths"] = tuple(t["hidden_widths"])
        return PipelineConfig(
            training=TrainingConfig(**t),
            runs_per_stage=d.get("runs_per_stage", DEFAULT_RUNS_PER_STAGE),
            k_c=d.get("k_c"), k_f=d.get("k_f"), seed=d.get("seed", 0))


@dataclass(frozen=True)
class CleaningPlan:
    corrections: tuple[tuple[str, int, int, float], ...]  # (sample_id, old, new, r)
    filters: tuple[tuple[str, float], ...]                # (sample_id, p_noise)
    k_c: int
    k_f: int
    stages: tuple[StageRecord, ...]
    config: PipelineConfig
    assessments_stage1: tuple[NoiseAssessment, ...]
    assessments_stage2: tuple[NoiseAssessment, ...]

    def correction_ids(self) -> set[str]:
        return {sid for sid, *_ in self.corrections}

    def filter_ids(self) -> set[str]:
        return {sid for sid, _p in self.filters}

    def touched_ids(self) -> set[str]:
        return self.correction_ids() | self.filter_ids()

    def to_dict(self) -> dict:
        return {
            "k_c": self.k_c,
            "k_f": self.k_f,
            "corrections": [{"sample_id": s, "old_label": o, "new_label": n, "r": r}
                            for s, o, n, r in self.corrections],
            "filters": [{"sample_id": s, "p_noise": p} for s, p in self.filters],
            "stages": [st.to_dict() for st in self.stages],
            "config": self.config.to_dict(),
            "assessments": {
                "stage1": [_assessment_dict(a) for a in self.assessments_stage1],
                "stage2": [_assessment_dict(a) for a in self.assessments_stage2],
            },
        }

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        plan_path = out_dir / "plan.json"
        plan_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        corr_path = out_dir / "corrections.csv"
        with corr_path.open("w") as fh:
            fh.write("sample_id,old_label,new_label,r\n")
            for s, o, n, r in self.corrections:
                fh.write(f"{s},{o},{n},{r!r}\n")
        filt_path = out_dir / "filters.csv"
        with filt_path.open("w") as fh:
            fh.write("sample_id,p_noise\n")
            for s, p in self.filters:
                fh.write(f"{s},{p!r}\n")
        assess_path = out_dir / "assessments.csv"
        with assess_path.open("w") as fh:
            fh.write("sample_id,given_label,aggregated_loss,p_noise,proposed_label,"
                     "corrected_loss,p_noise_corrected,noise_reduction,rank\n")
            for a in self.assessments_stage1:
                fh.write(f"{a.sample_id},{a.given_label},{a.aggregated_loss!r},{a.p_noise!r},"
                         f"{a.proposed_label},{a.corrected_loss!r},{a.p_noise_corrected!r},"
                         f"{a.noise_reduction!r},{a.rank_by_r}\n")
        return {"plan": plan_path, "corrections": corr_path, "filters": filt_path,
                "assessments": assess_path}

    @staticmethod
    def from_json(path: str | Path) -> "CleaningPlan":
        d = json.loads(Path(path).read_text())
        stages = []
        for st in d["stages"]:
            roles_d = st["gmm"]["roles"]
            stages.append(StageRecord(
                st["stage"], tuple(st["run_seeds"]), GmmModel.from_dict(st["gmm"]),
                ComponentRoles(roles_d["clean"], roles_d["hard"], roles_d["noisy"])))
        return CleaningPlan(
            corrections=tuple((c["sample_id"], c["old_label"], c["new_label"], c["r"])
                              for c in d["corrections"]),
            filters=tuple((f["sample_id"], f["p_noise"]) for f in d["filters"]),
            k_c=d["k_c"], k_f=d["k_f"], stages=tuple(stages),
            config=PipelineConfig.from_dict(d["config"]),
            assessments_stage1=tuple(_assessment_from_dict(a) for a in d["assessments"]["stage1"]),
            assessments_stage2=tuple(_assessment_from_dict(a) for a in d["assessments"]["stage2"]))


def _assessment_dict(a: NoiseAssessment) -> dict:
    return {"sample_id": a.sample_id, "given_label": a.given_label,
            "aggregated_loss": a.aggregated_loss, "p_noise": a.p_noise,
            "proposed_label": a.proposed_label, "corrected_loss": a.corrected_loss,
            "p_noise_corrected": a.p_noise_corrected, "noise_reduction": a.noise_reduction,
            "rank": a.rank_by_r}


def _assessment_from_dict(d: dict) -> NoiseAssessment:
    return NoiseAssessment(d["sample_id"], d["given_label"], d["aggregated_loss"], d["p_noise"],
                           d["proposed_label"], d["corrected_loss"], d["p_noise_corrected"],
                           d["noise_reduction"], d["rank"])


def aggregate_losses(ledger: LossLedger) -> dict[str, float]:
    """Arithmetic mean of every (run, epoch) loss entry per sample."""
    runs = ledger.run_indices()
    if not runs:
        raise IntegrityError("ledger is empty")
    expected = [(run, epoch) for run in runs for epoch in range(ledger.epochs_per_run[run])]
    out: dict[str, float] = {}
    for sid in ledger.sample_ids():
        values = []
        for run, epoch in expected:
            key = (sid, run, epoch)
            if key not in ledger.losses:
                raise IntegrityError(f"ledger missing loss for sample {sid!r}, run {run}, epoch {epoch}")
            values.append(ledger.losses[key])
        out[sid] = float(np.mean(values))
    return out


def _mean_final_probs(ledger: LossLedger, sid: str) -> np.ndarray:
    runs = ledger.run_indices()
    probs = np.asarray([ledger.finals[(sid, run)].probs for run in runs], dtype=float)
    return probs.mean(axis=0)


def assess(ds: Dataset, ledger: LossLedger, model: GmmModel, roles: ComponentRoles,
           cfg: TrainingConfig) -> list[NoiseAssessment]:
    """Score every dev sample's noise probability and its reduction under the
    model's proposed relabel.

    The proposed label is the argmax of the run-averaged final predictive
    distribution. When it differs from the given label, the counterfactual
    loss of that distribution against the proposal is pushed through the same
    mixture posterior to get the post-correction noise probability; when it
    matches, the correction is a no-op and the reduction is zero by definition.
    """
    aggregated = aggregate_losses(ledger)
    alpha = cfg.focal_alpha
    if alpha is None:
        from .classifier import inverse_frequency_alpha
        labels = np.asarray([r.given_label for r in ds.split_records("dev")], dtype=np.int64)
        alpha = inverse_frequency_alpha(labels, ds.num_classes)

    raw: list[NoiseAssessment] = []
    for rec in ds.split_records("dev"):
        sid = rec.sample_id
        agg = aggregated[sid]
        p_noise = noise_probability(model, roles, agg)
        mean_probs = _mean_final_probs(ledger, sid)
        proposed = int(np.argmax(mean_probs))
        if proposed == rec.given_label:
            corrected_loss = agg
            p_corr = p_noise
        else:
            corrected_loss = focal_loss(mean_probs, proposed, cfg.focal_gamma, alpha)
            p_corr = noise_probability(model, roles, corrected_loss)
        raw.append(NoiseAssessment(sid, rec.given_label, agg, p_noise, proposed,
                                   corrected_loss, p_corr, p_noise - p_corr))

    order = sorted(range(len(raw)), key=lambda i: _r_sort_key(raw[i]))
    ranked = [None] * len(raw)
    for rank, i in enumerate(order, start=1):
        ranked[i] = replace(raw[i], rank_by_r=rank)
    return ranked


def _r_sort_key(a: NoiseAssessment):
    return (-a.noise_reduction, -a.p_noise, a.sample_id)


def _p_sort_key(a: NoiseAssessment):
    return (-a.p_noise, a.sample_id)


def select_corrections(assessments: list[NoiseAssessment],
                       k_c: int | None = None) -> list[tuple[str, int, int, float]]:
    """Top k_c by descending noise reduction, restricted to strictly positive
    reduction. Default k_c takes every sample whose reduction exceeds 0.5."""
    if not assessments:
        raise IntegrityError("no assessments to select from")
    ordered = sorted(assessments, key=_r_sort_key)
    positive = [a for a in ordered if a.noise_reduction > 0]
    if k_c is None:
        k_c = sum(1 for a in positive if a.noise_reduction > CORRECTION_R_THRESHOLD)
    return [(a.sample_id, a.given_label, a.proposed_label, a.noise_reduction)
            for a in positive[:k_c]]


def select_filters(assessments: list[NoiseAssessment],
                   k_f: int | None = None) -> list[tuple[str, float]]:
    """Top k_f by descending noise probability. Default k_f takes every sample
    whose noise probability exceeds 0.5."""
    ordered = sorted(assessments, key=_p_sort_key)
    if k_f is None:
        k_f = sum(1 for a in ordered if a.p_noise > FILTER_P_THRESHOLD)
    return [(a.sample_id, a.p_noise) for a in ordered[:k_f]]


def stage_seed(seed: int, stage: int) -> int:
    """Stable derivation of a stage-level training seed (stage 2 never reuses
    stage-1 streams)."""
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


def _run_stage(ds: Dataset, cfg: PipelineConfig, stage: int,
               diagnostics_dir: Path | None) -> tuple[LossLedger, GmmModel, ComponentRoles, TrainingConfig, int]:
    training = replace(cfg.training, seed=stage_seed(cfg.seed, stage))
    fragments = []
    ledger = LossLedger()
    try:
        for run_index in range(cfg.runs_per_stage):
            _model, frag = train(ds, training, run_index)
            fragments.append(frag)
        ledger = LossLedger.merged(fragments)
        losses = list(aggregate_losses(ledger).values())
        model = fit_gmm(losses, seed=stage_seed(cfg.seed, stage * 101 + 7))
        roles = assign_roles(model)
    except LabelSiftError as exc:
        if diagnostics_dir is not None and (ledger.losses or fragments):
            diagnostics_dir.mkdir(parents=True, exist_ok=True)
            partial = ledger if ledger.losses else LossLedger.merged(fragments)
            partial.write_csvs(diagnostics_dir / f"stage{stage}_losses_partial.csv",
                               diagnostics_dir / f"stage{stage}_finals_partial.csv")
        raise StageError(stage, str(exc)) from exc
    return ledger, model, roles, training, training.seed


def run_pipeline(ds: Dataset, cfg: PipelineConfig,
                 diagnostics_dir: str | Path | None = None) -> CleaningPlan:
    """Execute both stages and produce the cleaning plan with full provenance.

    A sample corrected in stage 1 remains eligible for filtering in stage 2.
    """
    diag = Path(diagnostics_dir) if diagnostics_dir is not None else None

    ledger1, gmm1, roles1, train_cfg1, seed1 = _run_stage(ds, cfg, 1, diag)
    try:
        assessments1 = assess(ds, ledger1, gmm1, roles1, train_cfg1)
        corrections = select_corrections(assessments1, cfg.k_c)
    except LabelSiftError as exc:
        raise StageError(1, str(exc)) from exc

    new_label = {sid: new for sid, _old, new, _r in corrections}
    corrected_records = [replace(r, given_label=new_label[r.sample_id]) if r.sample_id in new_label else r
                         for r in ds.records]
    corrected_ds = ds.with_records(corrected_records)

    ledger2, gmm2, roles2, train_cfg2, seed2 = _run_stage(corrected_ds, cfg, 2, diag)
    try:
        assessments2 = assess(corrected_ds, ledger2, gmm2, roles2, train_cfg2)
        filters = select_filters(assessments2, cfg.k_f)
    except LabelSiftError as exc:
        raise StageError(2, str(exc)) from exc

    stages = (
        StageRecord(1, tuple([seed1]), gmm1, roles1),
        StageRecord(2, tuple([seed2]), gmm2, roles2),
    )
    return CleaningPlan(
        corrections=tuple(corrections), filters=tuple(filters),
        k_c=len(corrections), k_f=len(filters), stages=stages, config=cfg,
        assessments_stage1=tuple(sorted(assessments1, key=lambda a: a.rank_by_r)),
        assessments_stage2=tuple(sorted(assessments2, key=lambda a: a.rank_by_r)))
