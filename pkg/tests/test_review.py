import io
import json
import random

import numpy as np
import pytest
from fastapi.testclient import TestClient

from labelsift.errors import ConfigError, CoverageError, DomainError
from labelsift.review import (Adjudication, AdjudicationLog, build_review_app,
                              latest_per_reviewer, render_thumbnail, resolve_consensus,
                              sample_review_set)

REVIEW_KWARGS = dict(pool_size=500, set_size=100, min_frame_gap=5, anomaly_label=1)


@pytest.fixture(scope="module")
def review_selection(noisy_fixture, fixture_plan):
    noisy, _report = noisy_fixture
    return sample_review_set(fixture_plan.assessments_stage1, noisy, **REVIEW_KWARGS)


class TestSampleReviewSet:
    def test_full_set_selected(self, review_selection):
        assert len(review_selection.suspects) == 100
        assert not review_selection.incomplete

    def test_group_cap(self, noisy_fixture, review_selection):
        noisy, _ = noisy_fixture
        per_group = {}
        for s in review_selection.suspects:
            per_group[s.group_id] = per_group.get(s.group_id, 0) + 1
        assert max(per_group.values()) <= 3

    def test_frame_gap(self, review_selection):
        frames = {}
        for s in review_selection.suspects:
            frames.setdefault(s.group_id, []).append(s.frame_index)
        for group_frames in frames.values():
            group_frames.sort()
            for a, b in zip(group_frames, group_frames[1:]):
                assert b - a >= 5

    def test_gap_constraint_excludes_close_frames(self, noisy_fixture, fixture_plan):
        noisy, _ = noisy_fixture
        sel = sample_review_set(fixture_plan.assessments_stage1, noisy,
                                pool_size=500, set_size=20, min_frame_gap=100, anomaly_label=1,
                                class_mix={"normal": 14, "anomaly": 6})
        # synthetic groups span 20 frames, so a 100-frame floor caps selection at 1/group
        per_group = {}
        for s in sel.suspects:
            per_group[s.group_id] = per_group.get(s.group_id, 0) + 1
        assert max(per_group.values()) == 1

    def test_matches_constrained_greedy_oracle(self, noisy_fixture, fixture_plan, review_selection):
        noisy, _ = noisy_fixture
        ranked = sorted(fixture_plan.assessments_stage1,
                        key=lambda a: (-a.noise_reduction, -a.p_noise, a.sample_id))[:500]
        want_mix = {"normal": 70, "anomaly": 30}
        chosen, per_group = [], {}

        def ok(rec):
            frames = per_group.get(rec.group_id, [])
            return len(frames) < 3 and all(abs(rec.frame_index - f) >= 5 for f in frames)

        for a in ranked:
            if len(chosen) == 100:
                break
            rec = noisy.get(a.sample_id)
            cls = "anomaly" if rec.given_label == 1 else "normal"
            if want_mix[cls] > 0 and ok(rec):
                want_mix[cls] -= 1
                chosen.append(a.sample_id)
                per_group.setdefault(rec.group_id, []).append(rec.frame_index)
        for a in ranked:  # fill phase
            if len(chosen) == 100:
                break
            rec = noisy.get(a.sample_id)
            if a.sample_id not in chosen and ok(rec):
                chosen.append(a.sample_id)
                per_group.setdefault(rec.group_id, []).append(rec.frame_index)
        assert sorted(s.sample_id for s in review_selection.suspects) == sorted(chosen)

    def test_order_invariance(self, noisy_fixture, fixture_plan, review_selection):
        noisy, _ = noisy_fixture
        shuffled = list(fixture_plan.assessments_stage1)
        random.Random(3).shuffle(shuffled)
        again = sample_review_set(shuffled, noisy, **REVIEW_KWARGS)
        assert again.suspects == review_selection.suspects

    def test_class_mix_must_sum(self, noisy_fixture, fixture_plan):
        noisy, _ = noisy_fixture
        with pytest.raises(ConfigError):
            sample_review_set(fixture_plan.assessments_stage1, noisy,
                              class_mix={"normal": 10, "anomaly": 10}, set_size=100)


def adj(sid, reviewer, verdict, label=None, ts="2025-01-01T00:00:00Z"):
    return Adjudication(sid, reviewer, verdict, label, ts)


class TestConsensus:
    def test_two_of_three_mislabel(self):
        adjs = [adj("s", "r1", "mislabel", 1), adj("s", "r2", "mislabel", 1),
                adj("s", "r3", "correct")]
        res = resolve_consensus(adjs)
        assert res[0].final_verdict == "mislabel"
        assert res[0].final_label == 1

    def test_two_of_three_correct(self):
        adjs = [adj("s", "r1", "correct"), adj("s", "r2", "correct"),
                adj("s", "r3", "mislabel", 0)]
        res = resolve_consensus(adjs)
        assert res[0].final_verdict == "correct"
        assert res[0].final_label is None

    def test_revised_label_tie_flagged(self):
        adjs = [adj("s", "r1", "mislabel", 0), adj("s", "r2", "mislabel", 1),
                adj("s", "r3", "correct")]
        res = resolve_consensus(adjs)
        assert res[0].final_verdict == "mislabel"
        assert res[0].unresolved_label_tie
        assert res[0].final_label is None

    def test_last_write_wins_per_reviewer(self):
        adjs = [adj("s", "r1", "mislabel", 1), adj("s", "r2", "correct"),
                adj("s", "r3", "correct"), adj("s", "r1", "correct")]
        res = resolve_consensus(adjs)
        assert res[0].final_verdict == "correct"
        assert res[0].votes_mislabel == 0

    def test_insufficient_reviews_raises_coverage(self):
        adjs = [adj("s", "r1", "correct")]
        with pytest.raises(CoverageError) as exc:
            resolve_consensus(adjs)
        assert exc.value.pending == ["s"]

    def test_hundred_sample_planted_votes_match_oracle(self):
        rng = np.random.default_rng(17)
        adjs, expect = [], {}
        for i in range(100):
            sid = f"s{i:03d}"
            mis_votes = int(rng.integers(0, 4))
            for r in range(3):
                if r < mis_votes:
                    adjs.append(adj(sid, f"rev{r}", "mislabel", 1))
                else:
                    adjs.append(adj(sid, f"rev{r}", "correct"))
            expect[sid] = "mislabel" if mis_votes >= 2 else "correct"
        res = resolve_consensus(adjs)
        assert len(res) == 100
        assert {r.sample_id: r.final_verdict for r in res} == expect

    def test_adjudication_invariant(self):
        with pytest.raises(DomainError):
            Adjudication("s", "r", "mislabel", None, "t")
        with pytest.raises(DomainError):
            Adjudication("s", "r", "correct", 1, "t")


class TestThumbnails:
    def test_feature_heatmap_is_png(self, noisy_fixture):
        from PIL import Image
        noisy, _ = noisy_fixture
        data = render_thumbnail(noisy, noisy.records[0].sample_id)
        img = Image.open(io.BytesIO(data))
        assert img.format == "PNG"
        assert img.size == (16, 16)


@pytest.fixture()
def app_client(noisy_fixture, fixture_plan, tmp_path):
    noisy, _ = noisy_fixture
    app = build_review_app(noisy, fixture_plan, tmp_path / "log.jsonl", **REVIEW_KWARGS)
    return TestClient(app), tmp_path / "log.jsonl"


class TestService:
    def test_suspects_pagination(self, app_client):
        client, _ = app_client
        page = client.get("/api/suspects", params={"offset": 0, "limit": 10}).json()
        assert page["total"] == 100
        assert len(page["items"]) == 10
        assert [s["rank"] for s in page["items"]] == list(range(1, 11))
        rest = client.get("/api/suspects", params={"offset": 95, "limit": 10}).json()
        assert len(rest["items"]) == 5

    def test_adjudication_updates_progress(self, app_client):
        client, _ = app_client
        sid = client.get("/api/suspects", params={"limit": 1}).json()["items"][0]["sample_id"]
        before = client.get("/api/progress", params={"reviewer_id": "r1"}).json()
        assert before == {"reviewer_id": "r1", "done": 0, "pending": 100}
        resp = client.post("/api/adjudications", json={
            "sample_id": sid, "reviewer_id": "r1", "verdict": "correct"})
        assert resp.status_code == 200 and resp.json() == {"accepted": True}
        after = client.get("/api/progress", params={"reviewer_id": "r1"}).json()
        assert after["done"] == 1 and after["pending"] == 99

    def test_malformed_adjudications_rejected(self, app_client):
        client, _ = app_client
        sid = client.get("/api/suspects", params={"limit": 1}).json()["items"][0]["sample_id"]
        cases = [
            {"sample_id": "nope", "reviewer_id": "r", "verdict": "correct"},
            {"sample_id": sid, "reviewer_id": "r", "verdict": "weird"},
            {"sample_id": sid, "reviewer_id": "r", "verdict": "mislabel"},  # no revised_label
            {"sample_id": sid, "reviewer_id": "r", "verdict": "correct", "revised_label": 1},
            {"sample_id": sid, "reviewer_id": "r", "verdict": "mislabel", "revised_label": 9},
            {"sample_id": sid, "reviewer_id": " ", "verdict": "correct"},
        ]
        for body in cases:
            assert client.post("/api/adjudications", json=body).status_code == 400
        assert client.post("/api/adjudications", json={"reviewer_id": "r"}).status_code == 422

    def test_thumbnail_endpoint(self, app_client):
        client, _ = app_client
        sid = client.get("/api/suspects", params={"limit": 1}).json()["items"][0]["sample_id"]
        resp = client.get(f"/api/samples/{sid}/thumbnail")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert client.get("/api/samples/zzz/thumbnail").status_code == 404

    def test_consensus_and_precision_flow(self, app_client):
        client, _ = app_client
        suspects = client.get("/api/suspects", params={"limit": 100}).json()["items"]
        for i, s in enumerate(suspects[:10]):
            for r in range(3):
                mislabel = (i % 2 == 0) if r < 2 else False
                body = {"sample_id": s["sample_id"], "reviewer_id": f"rev{r}",
                        "verdict": "mislabel" if mislabel else "correct"}
                if mislabel:
                    body["revised_label"] = s["proposed_label"]
                assert client.post("/api/adjudications", json=body).status_code == 200
        consensus = client.get("/api/consensus").json()
        assert len(consensus) == 10
        verdicts = {c["sample_id"]: c["final_verdict"] for c in consensus}
        for i, s in enumerate(suspects[:10]):
            assert verdicts[s["sample_id"]] == ("mislabel" if i % 2 == 0 else "correct")
        precision = client.get("/api/precision", params={"k": 10}).json()
        assert precision == {"k": 10, "precision": 50.0}
        # coverage not yet reached for k=20
        assert client.get("/api/precision", params={"k": 20}).status_code == 409

    def test_restart_resumes_from_log(self, noisy_fixture, fixture_plan, tmp_path):
        noisy, _ = noisy_fixture
        log_path = tmp_path / "log.jsonl"
        app1 = build_review_app(noisy, fixture_plan, log_path, **REVIEW_KWARGS)
        client1 = TestClient(app1)
        sid = client1.get("/api/suspects", params={"limit": 1}).json()["items"][0]["sample_id"]
        client1.post("/api/adjudications", json={
            "sample_id": sid, "reviewer_id": "r9", "verdict": "correct"})
        app2 = build_review_app(noisy, fixture_plan, log_path, **REVIEW_KWARGS)
        client2 = TestClient(app2)
        progress = client2.get("/api/progress", params={"reviewer_id": "r9"}).json()
        assert progress["done"] == 1

    def test_log_is_append_only_jsonl(self, app_client):
        client, log_path = app_client
        sid = client.get("/api/suspects", params={"limit": 1}).json()["items"][0]["sample_id"]
        for verdict in ("correct", "correct"):
            client.post("/api/adjudications", json={
                "sample_id": sid, "reviewer_id": "r1", "verdict": verdict})
        lines = log_path.read_text().splitlines()
        assert len(lines) == 2  # supersede in counting, never rewrite the log
        parsed = [json.loads(l) for l in lines]
        assert all(p["sample_id"] == sid for p in parsed)
        latest = latest_per_reviewer(AdjudicationLog(log_path).snapshot())
        assert len(latest[sid]) == 1

    def test_meta_reports_ui_condition(self, app_client):
        client, _ = app_client
        meta = client.get("/api/meta").json()
        assert meta["ui_condition"] == "original-and-proposed-shown"
        assert meta["total_suspects"] == 100
        assert meta["reviewers_required"] == 3
