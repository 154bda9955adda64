"""Blinded audit service: blinding, durability, and session determinism."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from voxclean.audit import assign_annotators, sample_round1, write_trials_jsonl
from voxclean.scoring import PairStatus, ScoredPair
from voxclean.service import ADMIN_TOKEN_ENV, build_app

ANNOTATORS = ["alice", "bob"]

FORBIDDEN_KEY_FRAGMENTS = ("score", "similarity", "bin", "client")


def walk_json(node):
    yield node
    if isinstance(node, dict):
        for key, value in node.items():
            yield key
            yield from walk_json(value)
    elif isinstance(node, list):
        for item in node:
            yield from walk_json(item)


def assert_blinded(payload):
    for node in walk_json(payload):
        if isinstance(node, str):
            for fragment in FORBIDDEN_KEY_FRAGMENTS:
                assert fragment not in node.lower() or node.startswith("/audio/"), (
                    f"blinding leak: {node!r}"
                )
        if isinstance(node, dict):
            for key in node:
                for fragment in FORBIDDEN_KEY_FRAGMENTS:
                    assert fragment not in key.lower(), f"blinding leak key: {key}"


@pytest.fixture()
def audit_setup(tmp_path):
    rng = np.random.default_rng(17)
    pairs = []
    for language in ("aa", "bb"):
        for i in range(60):
            pairs.append(
                ScoredPair(
                    language,
                    f"{language}_c{i % 7}",
                    f"{language}_e{i % 7}",
                    f"{language}_t{i}",
                    float(rng.uniform(-0.5, 1.0)),
                    PairStatus.SCORED,
                )
            )
    trials = assign_annotators(sample_round1(pairs, per_bin=3, seed=5), ANNOTATORS)
    trials_path = tmp_path / "trials.jsonl"
    write_trials_jsonl(trials_path, trials)
    labels_path = tmp_path / "labels.jsonl"
    clips = tmp_path / "clips"
    clips.mkdir()
    for t in trials:
        for uid in (t.enrollment_id, t.test_id):
            (clips / f"{uid}.wav").write_bytes(b"RIFF0000WAVEfake" + uid.encode())
    return trials, trials_path, labels_path, clips


def make_client(setup):
    trials, trials_path, labels_path, clips = setup
    app = build_app(trials_path, labels_path, clips, annotators=ANNOTATORS)
    return TestClient(app)


class TestSessionFlow:
    def test_roster(self, audit_setup):
        client = make_client(audit_setup)
        assert client.get("/api/annotators").json() == {"annotators": ANNOTATORS}

    def test_next_and_label_until_done(self, audit_setup):
        client = make_client(audit_setup)
        seen = []
        while True:
            payload = client.get("/api/session/alice/next").json()
            if payload.get("done"):
                assert payload["completed"] == payload["total"] == len(seen)
                break
            assert set(payload) == {
                "trial_id", "enrollment_audio_url", "test_audio_url",
                "round", "progress",
            }
            assert payload["progress"]["done"] == len(seen)
            seen.append(payload["trial_id"])
            response = client.post(
                "/api/labels",
                json={
                    "trial_id": payload["trial_id"],
                    "annotator": "alice",
                    "label": "same_speaker",
                },
            )
            assert response.status_code == 201
        assert len(seen) == len(set(seen)) > 0

    def test_every_annotator_payload_is_blinded(self, audit_setup):
        client = make_client(audit_setup)
        assert_blinded(client.get("/api/annotators").json())
        assert_blinded(client.get("/api/progress").json())
        for _ in range(10):
            payload = client.get("/api/session/alice/next").json()
            if payload.get("done"):
                break
            assert_blinded(payload)
            client.post(
                "/api/labels",
                json={
                    "trial_id": payload["trial_id"],
                    "annotator": "alice",
                    "label": "not_sure",
                },
            )

    def test_duplicate_label_409_store_unchanged(self, audit_setup):
        client = make_client(audit_setup)
        payload = client.get("/api/session/bob/next").json()
        body = {
            "trial_id": payload["trial_id"],
            "annotator": "bob",
            "label": "different_speaker",
        }
        assert client.post("/api/labels", json=body).status_code == 201
        again = dict(body, label="same_speaker")
        assert client.post("/api/labels", json=again).status_code == 409
        _, _, labels_path, _ = audit_setup
        lines = labels_path.read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["label"] == "different_speaker"

    def test_unknown_label_422(self, audit_setup):
        client = make_client(audit_setup)
        payload = client.get("/api/session/alice/next").json()
        response = client.post(
            "/api/labels",
            json={
                "trial_id": payload["trial_id"],
                "annotator": "alice",
                "label": "maybe_same",
            },
        )
        assert response.status_code == 422

    def test_label_for_unassigned_trial_403(self, audit_setup):
        client = make_client(audit_setup)
        payload = client.get("/api/session/alice/next").json()
        response = client.post(
            "/api/labels",
            json={
                "trial_id": payload["trial_id"],
                "annotator": "bob",
                "label": "same_speaker",
            },
        )
        assert response.status_code == 403

    def test_unknown_annotator_404(self, audit_setup):
        client = make_client(audit_setup)
        assert client.get("/api/session/mallory/next").status_code == 404


class TestDurability:
    def test_restart_resumes_identical_sequence(self, audit_setup):
        trials, trials_path, labels_path, clips = audit_setup

        first = make_client(audit_setup)
        reference = []
        for _ in range(5):
            payload = first.get("/api/session/alice/next").json()
            reference.append(payload["trial_id"])
            first.post(
                "/api/labels",
                json={
                    "trial_id": payload["trial_id"],
                    "annotator": "alice",
                    "label": "same_speaker",
                },
            )
        first.close()

        # fresh process over the same files resumes exactly after the 5 labels
        second = make_client(audit_setup)
        resumed = second.get("/api/session/alice/next").json()["trial_id"]
        assert resumed not in reference

        # replay oracle: a pristine service with an empty label file yields
        # the same first five trials
        empty_labels = labels_path.parent / "empty.jsonl"
        pristine = TestClient(
            build_app(trials_path, empty_labels, clips, annotators=ANNOTATORS)
        )
        replayed = []
        for _ in range(6):
            payload = pristine.get("/api/session/alice/next").json()
            replayed.append(payload["trial_id"])
            pristine.post(
                "/api/labels",
                json={
                    "trial_id": payload["trial_id"],
                    "annotator": "alice",
                    "label": "same_speaker",
                },
            )
        assert replayed[:5] == reference
        assert replayed[5] == resumed

    def test_label_durable_before_201(self, audit_setup):
        _, _, labels_path, _ = audit_setup
        client = make_client(audit_setup)
        payload = client.get("/api/session/alice/next").json()
        response = client.post(
            "/api/labels",
            json={
                "trial_id": payload["trial_id"],
                "annotator": "alice",
                "label": "missing_speech",
            },
        )
        assert response.status_code == 201
        on_disk = [json.loads(l) for l in labels_path.read_text().splitlines()]
        assert on_disk[0]["trial_id"] == payload["trial_id"]


class TestAudioAndExport:
    def test_audio_served_with_content_type(self, audit_setup):
        client = make_client(audit_setup)
        payload = client.get("/api/session/alice/next").json()
        url = payload["enrollment_audio_url"]
        response = client.get(url)
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("audio/")
        assert response.content.startswith(b"RIFF")

    def test_path_traversal_rejected(self, audit_setup):
        client = make_client(audit_setup)
        for bad in ("..%2F..%2Fetc%2Fpasswd", "..", "a%2Fb"):
            assert client.get(f"/audio/{bad}").status_code == 404

    def test_unknown_clip_404(self, audit_setup):
        client = make_client(audit_setup)
        assert client.get("/audio/nope.wav").status_code == 404

    def test_export_requires_admin_token(self, audit_setup, monkeypatch):
        client = make_client(audit_setup)
        monkeypatch.delenv(ADMIN_TOKEN_ENV, raising=False)
        assert client.get("/api/export").status_code == 403
        monkeypatch.setenv(ADMIN_TOKEN_ENV, "sekrit")
        assert client.get("/api/export").status_code == 403
        assert (
            client.get("/api/export", headers={"X-Admin-Token": "wrong"}).status_code
            == 403
        )
        payload = client.get("/api/session/alice/next").json()
        client.post(
            "/api/labels",
            json={
                "trial_id": payload["trial_id"],
                "annotator": "alice",
                "label": "same_speaker",
            },
        )
        good = client.get("/api/export", headers={"X-Admin-Token": "sekrit"})
        assert good.status_code == 200
        exported = [json.loads(l) for l in good.text.splitlines()]
        assert exported[0]["annotator"] == "alice"
