"""Expert review service: ranked suspect sampling, consensus resolution, and a
JSON HTTP API with thumbnails for human adjudication.

Suspects are drawn greedily down the noise-reduction ranking under the review
constraints (class mix, per-group cap, minimum frame separation). Verdicts are
persisted append-only as JSON lines; a reviewer's repeated verdict for the same
sample supersedes the earlier one. A sample's label counts as wrong when at
least two reviewers say so.
"""
from __future__ import annotations

import io
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from .dataset import Dataset
from .errors import ConfigError, CoverageError, DomainError
from .evaluation import precision_at_k
from .pipeline import CleaningPlan, NoiseAssessment

VERDICTS = ("correct", "mislabel")

DEFAULT_POOL_SIZE = 500
DEFAULT_SET_SIZE = 100
DEFAULT_CLASS_MIX = {"normal": 70, "anomaly": 30}
DEFAULT_MAX_PER_GROUP = 3
DEFAULT_MIN_FRAME_GAP = 100
CONSENSUS_REVIEWERS = 3


@dataclass(frozen=True)
class SuspectSample:
    sample_id: str
    rank: int
    noise_reduction: float
    p_noise: float
    given_label: int
    proposed_label: int
    group_id: str
    frame_index: int
    thumbnail: str

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "rank": self.rank,
                "noise_reduction": self.noise_reduction, "p_noise": self.p_noise,
                "given_label": self.given_label, "proposed_label": self.proposed_label,
                "group_id": self.group_id, "frame_index": self.frame_index,
                "thumbnail": self.thumbnail}


@dataclass(frozen=True)
class ReviewSelection:
    suspects: tuple[SuspectSample, ...]
    mix_shortfall: bool
    incomplete: bool


@dataclass(frozen=True)
class Adjudication:
    sample_id: str
    reviewer_id: str
    verdict: str
    revised_label: int | None
    timestamp: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DomainError(f"verdict must be one of {VERDICTS}")
        if (self.revised_label is not None) != (self.verdict == "mislabel"):
            raise DomainError("revised_label is required exactly when verdict is mislabel")

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "reviewer_id": self.reviewer_id,
                "verdict": self.verdict, "revised_label": self.revised_label,
                "timestamp": self.timestamp}


@dataclass(frozen=True)
class ConsensusResult:
    sample_id: str
    final_verdict: str
    final_label: int | None
    votes_mislabel: int
    votes_correct: int
    unresolved_label_tie: bool = False

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id, "final_verdict": self.final_verdict,
                "final_label": self.final_label, "votes_mislabel": self.votes_mislabel,
                "votes_correct": self.votes_correct,
                "unresolved_label_tie": self.unresolved_label_tie}


def sample_review_set(assessments, ds: Dataset, *,
                      pool_size: int = DEFAULT_POOL_SIZE,
                      set_size: int = DEFAULT_SET_SIZE,
                      class_mix: dict[str, int] | None = None,
                      anomaly_label: int | None = None,
                      max_per_group: int = DEFAULT_MAX_PER_GROUP,
                      min_frame_gap: int = DEFAULT_MIN_FRAME_GAP) -> ReviewSelection:
    """Greedy constrained selection down the noise-reduction ranking.

    The top ``pool_size`` assessments form the candidate pool; selection walks
    it in rank order filling the class mix while enforcing the per-group cap
    and the frame-distance floor. If the mix is unattainable the remainder is
    filled with the next-ranked eligible samples of any class and the
    shortfall flagged. Selection depends only on ranks and constraints, not on
    the input ordering.
    """
    if pool_size < set_size:
        raise ConfigError("pool_size must be >= set_size")
    mix = dict(class_mix or DEFAULT_CLASS_MIX)
    if set(mix) != {"normal", "anomaly"} or any(v < 0 for v in mix.values()):
        raise ConfigError("class_mix must give nonnegative normal/anomaly counts")
    if sum(mix.values()) != set_size:
        raise ConfigError("class_mix must sum to set_size")
    if anomaly_label is None:
        anomaly_label = ds.minority_class()

    ordered: list[NoiseAssessment] = sorted(
        assessments, key=lambda a: (-a.noise_reduction, -a.p_noise, a.sample_id))
    pool = ordered[:pool_size]

    remaining = dict(mix)
    per_group: dict[str, list[int]] = {}
    chosen: list[NoiseAssessment] = []

    def eligible(rec) -> bool:
        frames = per_group.get(rec.group_id, [])
        if len(frames) >= max_per_group:
            return False
        return all(abs(rec.frame_index - f) >= min_frame_gap for f in frames)

    def take(a: NoiseAssessment, rec) -> None:
        chosen.append(a)
        per_group.setdefault(rec.group_id, []).append(rec.frame_index)

    selected_ids: set[str] = set()
    for a in pool:
        if len(chosen) >= set_size:
            break
        rec = ds.get(a.sample_id)
        cls = "anomaly" if rec.given_label == anomaly_label else "normal"
        if remaining[cls] <= 0 or not eligible(rec):
            continue
        remaining[cls] -= 1
        take(a, rec)
        selected_ids.add(a.sample_id)

    mix_shortfall = len(chosen) < set_size
    if mix_shortfall:
        for a in pool:
            if len(chosen) >= set_size:
                break
            if a.sample_id in selected_ids:
                continue
            rec = ds.get(a.sample_id)
            if eligible(rec):
                take(a, rec)
                selected_ids.add(a.sample_id)

    chosen.sort(key=lambda a: (-a.noise_reduction, -a.p_noise, a.sample_id))
    suspects = tuple(
        SuspectSample(a.sample_id, rank, a.noise_reduction, a.p_noise,
                      ds.get(a.sample_id).given_label, a.proposed_label,
                      ds.get(a.sample_id).group_id, ds.get(a.sample_id).frame_index,
                      f"/api/samples/{a.sample_id}/thumbnail")
        for rank, a in enumerate(chosen, start=1))
    return ReviewSelection(suspects, mix_shortfall, incomplete=len(suspects) < set_size)


def latest_per_reviewer(adjudications) -> dict[str, dict[str, Adjudication]]:
    """Collapse the log to each reviewer's newest verdict per sample
    (last write wins in log order)."""
    latest: dict[str, dict[str, Adjudication]] = {}
    for adj in adjudications:
        latest.setdefault(adj.sample_id, {})[adj.reviewer_id] = adj
    return latest


def resolve_consensus(adjudications, reviewers_required: int = CONSENSUS_REVIEWERS,
                      expected_ids=None) -> list[ConsensusResult]:
    """Majority resolution: at least two mislabel votes make the label wrong.

    The final label is the majority among the mislabel voters' revisions; a
    tie is flagged unresolved and the sample carries no final label (it is
    excluded from relabel emission).
    """
    latest = latest_per_reviewer(adjudications)
    sample_ids = list(expected_ids) if expected_ids is not None else sorted(latest)
    pending = [sid for sid in sample_ids if len(latest.get(sid, {})) < reviewers_required]
    if pending:
        raise CoverageError(
            f"{len(pending)} sample(s) lack {reviewers_required} adjudications", pending=pending)

    results = []
    for sid in sample_ids:
        by_reviewer = latest[sid]
        mislabel_votes = [a for a in by_reviewer.values() if a.verdict == "mislabel"]
        correct_votes = len(by_reviewer) - len(mislabel_votes)
        if len(mislabel_votes) >= 2:
            counts: dict[int, int] = {}
            for a in mislabel_votes:
                counts[a.revised_label] = counts.get(a.revised_label, 0) + 1
            best = max(counts.values())
            winners = sorted(label for label, c in counts.items() if c == best)
            tie = len(winners) > 1
            results.append(ConsensusResult(sid, "mislabel", None if tie else winners[0],
                                           len(mislabel_votes), correct_votes,
                                           unresolved_label_tie=tie))
        else:
            results.append(ConsensusResult(sid, "correct", None,
                                           len(mislabel_votes), correct_votes))
    return results


def render_thumbnail(ds: Dataset, sample_id: str, size: int = 16) -> bytes:
    """PNG bytes for a sample: the image file when present, otherwise the
    feature vector rendered as a grayscale heatmap tile."""
    from PIL import Image

    rec = ds.get(sample_id)
    if rec.image_path is not None:
        with Image.open(rec.image_path) as img:
            out = io.BytesIO()
            img.convert("L").resize((size, size), Image.Resampling.BOX).save(out, format="PNG")
            return out.getvalue()
    v = np.asarray(rec.features, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    unit = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    side = int(np.ceil(np.sqrt(len(unit))))
    padded = np.zeros(side * side)
    padded[:len(unit)] = unit
    tile = (padded.reshape(side, side) * 255).astype(np.uint8)
    img = Image.fromarray(tile, mode="L").resize((size, size), Image.Resampling.NEAREST)
    out = io.BytesIO()
    img.save(out, format="PNG")
    return out.getvalue()


class AdjudicationLog:
    """Append-only JSONL store with a single serialized writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: list[Adjudication] = []
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    d = json.loads(line)
                    self._entries.append(Adjudication(d["sample_id"], d["reviewer_id"],
                                                      d["verdict"], d["revised_label"],
                                                      d["timestamp"]))

    def append(self, adj: Adjudication) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(json.dumps(adj.to_dict()) + "\n")
            self._entries.append(adj)

    def snapshot(self) -> list[Adjudication]:
        with self._lock:
            return list(self._entries)


class AdjudicationIn(BaseModel):
    sample_id: str
    reviewer_id: str
    verdict: str
    revised_label: int | None = None


def build_review_app(ds: Dataset, plan: CleaningPlan, log_path: str | Path,
                     static_dir: str | Path | None = None, **selection_kwargs):
    """Assemble the FastAPI application around a review selection and log."""
    from fastapi import FastAPI, HTTPException, Query, Response

    selection = sample_review_set(plan.assessments_stage1, ds, **selection_kwargs)
    suspects = selection.suspects
    suspect_by_id = {s.sample_id: s for s in suspects}
    ranked_ids = [s.sample_id for s in suspects]
    log = AdjudicationLog(log_path)

    app = FastAPI(title="labelsift review service")

    @app.get("/api/meta")
    def meta():
        return {
            "total_suspects": len(suspects),
            "num_classes": ds.num_classes,
            "class_names": list(ds.class_names),
            "mix_shortfall": selection.mix_shortfall,
            "incomplete": selection.incomplete,
            "reviewers_required": CONSENSUS_REVIEWERS,
            # Reviewers see both the original label and the pipeline proposal.
            "ui_condition": "original-and-proposed-shown",
        }

    @app.get("/api/suspects")
    def get_suspects(offset: int = Query(0, ge=0), limit: int = Query(20, ge=1, le=500)):
        items = suspects[offset:offset + limit]
        return {"total": len(suspects), "items": [s.to_dict() for s in items]}

    @app.get("/api/samples/{sample_id}/thumbnail")
    def thumbnail(sample_id: str):
        if sample_id not in suspect_by_id and not ds.has(sample_id):
            raise HTTPException(status_code=404, detail="unknown sample")
        return Response(content=render_thumbnail(ds, sample_id), media_type="image/png")

    @app.post("/api/adjudications")
    def post_adjudication(body: AdjudicationIn):
        if body.sample_id not in suspect_by_id:
            raise HTTPException(status_code=400, detail="sample is not in the review set")
        if not body.reviewer_id.strip():
            raise HTTPException(status_code=400, detail="reviewer_id must be nonempty")
        if body.revised_label is not None and not (0 <= body.revised_label < ds.num_classes):
            raise HTTPException(status_code=400, detail="revised_label out of range")
        try:
            adj = Adjudication(body.sample_id, body.reviewer_id, body.verdict,
                               body.revised_label, datetime.now(timezone.utc).isoformat())
        except DomainError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        log.append(adj)
        return {"accepted": True}

    @app.get("/api/progress")
    def progress(reviewer_id: str):
        latest = latest_per_reviewer(log.snapshot())
        done = sum(1 for sid in ranked_ids if reviewer_id in latest.get(sid, {}))
        return {"reviewer_id": reviewer_id, "done": done, "pending": len(ranked_ids) - done}

    @app.get("/api/consensus")
    def consensus():
        latest = latest_per_reviewer(log.snapshot())
        covered = [sid for sid in ranked_ids
                   if len(latest.get(sid, {})) >= CONSENSUS_REVIEWERS]
        results = resolve_consensus(log.snapshot(), CONSENSUS_REVIEWERS, expected_ids=covered)
        return [r.to_dict() for r in results]

    @app.get("/api/precision")
    def precision(k: int = Query(..., ge=1)):
        latest = latest_per_reviewer(log.snapshot())
        covered = [sid for sid in ranked_ids
                   if len(latest.get(sid, {})) >= CONSENSUS_REVIEWERS]
        verdicts = {r.sample_id: r.final_verdict
                    for r in resolve_consensus(log.snapshot(), CONSENSUS_REVIEWERS,
                                               expected_ids=covered)}
        try:
            value = precision_at_k(ranked_ids, verdicts, k)
        except CoverageError as exc:
            raise HTTPException(status_code=409,
                                detail={"error": "coverage", "pending": exc.pending[:20]}) from exc
        except DomainError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"k": k, "precision": value}

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(plan: CleaningPlan, ds: Dataset, bind_address: str = "127.0.0.1:8000",
          log_path: str | Path = "adjudications.jsonl",
          static_dir: str | Path | None = None, **selection_kwargs) -> None:
    """Run the review service until interrupted."""
    import uvicorn

    host, _, port_s = bind_address.partition(":")
    try:
        port = int(port_s) if port_s else 8000
    except ValueError:
        raise ConfigError(f"bad bind address {bind_address!r}") from None
    app = build_review_app(ds, plan, log_path, static_dir=static_dir, **selection_kwargs)
    uvicorn.run(app, host=host or "127.0.0.1", port=port, log_level="warning")
