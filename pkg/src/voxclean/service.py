"""HTTP service that serves blinded audit trials and collects labels.

Annotator-facing responses are built from explicit view payloads that carry
audio URLs, round, and progress only: no similarity score, no bin, no
client id. The label log is appended durably before a 201 is returned, and
the pending queue is recomputed from (trial file, label file) state on every
request, so a restart resumes exactly where the previous process stopped.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, Header
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .audit import AuditLabel, AuditTrial, LabelStore, read_trials_jsonl
from .errors import DuplicateLabelError

logger = logging.getLogger(__name__)

ADMIN_TOKEN_ENV = "VOXCLEAN_ADMIN_TOKEN"

AUDIO_TYPES = {
    ".wav": "audio/wav",
    ".mp3": "audio/mpeg",
    ".ogg": "audio/ogg",
    ".flac": "audio/flac",
    ".m4a": "audio/mp4",
}


class LabelSubmission(BaseModel):
    trial_id: str
    annotator: str
    label: Literal[
        "same_speaker",
        "different_speaker",
        "audio_quality_issue",
        "missing_speech",
        "not_sure",
    ]


def _resolve_clip(clips_dir: Path, utterance_id: str) -> Path | None:
    if (
        not utterance_id
        or "/" in utterance_id
        or "\\" in utterance_id
        or ".." in utterance_id
    ):
        return None
    candidates = [clips_dir / utterance_id]
    if not Path(utterance_id).suffix:
        candidates.extend(clips_dir / (utterance_id + ext) for ext in AUDIO_TYPES)
    for candidate in candidates:
        try:
            resolved = candidate.resolve()
        except OSError:
            continue
        if resolved.is_file() and resolved.is_relative_to(clips_dir.resolve()):
            return resolved
    return None


def build_app(
    trials_path: str | Path,
    labels_path: str | Path,
    clips_dir: str | Path,
    annotators: list[str] | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    trials: list[AuditTrial] = read_trials_jsonl(trials_path)
    store = LabelStore(labels_path)
    clips = Path(clips_dir)
    by_id = {t.trial_id: t for t in trials}
    roster = annotators or sorted({a for t in trials for a in t.assignees})
    assigned: dict[str, list[str]] = {
        a: [t.trial_id for t in trials if a in t.assignees] for a in roster
    }

    app = FastAPI(title="voxclean audit service")

    def pending(annotator: str) -> list[str]:
        return [tid for tid in assigned[annotator] if not store.has(tid, annotator)]

    @app.get("/api/annotators")
    def get_annotators():
        return {"annotators": roster}

    @app.get("/api/session/{annotator}/next")
    def get_next(annotator: str):
        if annotator not in assigned:
            return JSONResponse({"error": "unknown annotator"}, status_code=404)
        queue = pending(annotator)
        total = len(assigned[annotator])
        done = total - len(queue)
        if not queue:
            return {"done": True, "completed": done, "total": total}
        trial = by_id[queue[0]]
        # View payload: audio handles and progress only. Never the score,
        # never the bin, never the client id.
        return {
            "trial_id": trial.trial_id,
            "enrollment_audio_url": f"/audio/{trial.enrollment_id}",
            "test_audio_url": f"/audio/{trial.test_id}",
            "round": trial.round,
            "progress": {"done": done, "total": total},
        }

    @app.post("/api/labels", status_code=201)
    def post_label(submission: LabelSubmission):
        trial = by_id.get(submission.trial_id)
        if trial is None:
            return JSONResponse({"error": "unknown trial"}, status_code=404)
        if submission.annotator not in trial.assignees:
            return JSONResponse(
                {"error": "trial not assigned to this annotator"}, status_code=403
            )
        try:
            store.add(
                AuditLabel(
                    trial_id=submission.trial_id,
                    annotator=submission.annotator,
                    label=submission.label,
                )
            )
        except DuplicateLabelError:
            return JSONResponse({"error": "label already recorded"}, status_code=409)
        return {"accepted": True, "trial_id": submission.trial_id}

    @app.get("/api/progress")
    def get_progress():
        return {
            a: {"done": len(assigned[a]) - len(pending(a)), "total": len(assigned[a])}
            for a in roster
        }

    @app.get("/api/export")
    def export_labels(x_admin_token: str | None = Header(default=None)):
        expected = os.environ.get(ADMIN_TOKEN_ENV)
        if not expected or x_admin_token != expected:
            return JSONResponse({"error": "admin token required"}, status_code=403)
        lines = [
            json.dumps(
                {
                    "trial_id": l.trial_id,
                    "annotator": l.annotator,
                    "label": l.label,
                    "timestamp": l.timestamp,
                },
                sort_keys=True,
            )
            for l in store.labels()
        ]
        return PlainTextResponse("\n".join(lines) + ("\n" if lines else ""))

    @app.get("/audio/{utterance_id}")
    def get_audio(utterance_id: str):
        clip = _resolve_clip(clips, utterance_id)
        if clip is None:
            return JSONResponse({"error": "clip not found"}, status_code=404)
        media_type = AUDIO_TYPES.get(clip.suffix.lower(), "application/octet-stream")
        return FileResponse(clip, media_type=media_type)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(
    trials_path: str | Path,
    labels_path: str | Path,
    clips_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8765,
    annotators: list[str] | None = None,
    static_dir: str | Path | None = None,
) -> None:
    import uvicorn

    app = build_app(
        trials_path, labels_path, clips_dir, annotators=annotators, static_dir=static_dir
    )
    logger.info("serving audit trials on %s:%d", host, port)
    uvicorn.run(app, host=host, port=port, log_level="info")
