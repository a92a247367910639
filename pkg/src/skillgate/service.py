"""HTTP API for the human annotation workbench.

Serves cells of the two-round schema-only protocol: round-1 queues cover the
full validation grid, round-2 queues contain exactly the round-1 disputes (the
same worklist the gold protocol computes). Annotators authenticate with bearer
tokens and can never see each other's labels or any agreement state.
"""
from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel

from .gold import round2_worklist
from .schema import SkillSpec
from .store import CorpusStore, LabelCell, Round, Split

API_VERSION = "1"
NOT_ASSESSABLE = "not_assessable"


@dataclass
class AnnotationSession:
    session_id: str
    annotator_id: str
    round: Round
    queue: list[tuple[str, str]]
    answered: set[tuple[str, str]] = field(default_factory=set)
    complete: bool = False

    def next_position(self) -> tuple[str, str] | None:
        for position in self.queue:
            if position not in self.answered:
                return position
        return None

    @property
    def fraction(self) -> float:
        return len(self.answered) / len(self.queue) if self.queue else 1.0

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "annotator_id": self.annotator_id,
            "round": self.round.value,
            "queue": [list(p) for p in self.queue],
            "answered": sorted(list(p) for p in self.answered),
            "complete": self.complete,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnnotationSession":
        return cls(
            session_id=data["session_id"],
            annotator_id=data["annotator_id"],
            round=Round(data["round"]),
            queue=[tuple(p) for p in data["queue"]],
            answered={tuple(p) for p in data["answered"]},
            complete=data["complete"],
        )


class SessionRegistry:
    """All live and completed sessions, persisted next to the store."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.sessions: dict[str, AnnotationSession] = {}
        if path.exists():
            for item in json.loads(path.read_text(encoding="utf-8")):
                session = AnnotationSession.from_json(item)
                self.sessions[session.session_id] = session

    def save(self) -> None:
        self.path.write_text(
            json.dumps([s.to_json() for s in self.sessions.values()], ensure_ascii=False),
            encoding="utf-8",
        )

    def find(self, annotator_id: str, round: Round) -> AnnotationSession | None:
        for session in self.sessions.values():
            if session.annotator_id == annotator_id and session.round is round:
                return session
        return None

    def add(self, session: AnnotationSession) -> None:
        with self._lock:
            self.sessions[session.session_id] = session
            self.save()

    def update(self, session: AnnotationSession) -> None:
        self.add(session)


class CreateSessionBody(BaseModel):
    annotator_id: str
    round: str


class SubmitBody(BaseModel):
    instance_id: str
    skill_id: str
    label: str | None = None
    not_assessable: bool = False


def _skill_view(skill: SkillSpec) -> dict:
    return {
        "skill_id": skill.skill_id,
        "name": skill.name,
        "level": skill.level.value,
        "labels": list(skill.labels),
        "rules": list(skill.rules),
        "examples": [{"text": e.text, "label": e.label} for e in skill.examples],
        "applicability": skill.applicability,
        "not_assessable_allowed": True,
    }


def create_app(store: CorpusStore, tokens: Mapping[str, str]) -> FastAPI:
    """Build the service over one store; tokens maps annotator_id -> bearer token."""
    app = FastAPI(title="annotation service", version=API_VERSION)
    inventory = store.inventory
    registry = SessionRegistry(store.root / "sessions.json")
    token_to_annotator = {token: annotator for annotator, token in tokens.items()}

    def authenticated(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        annotator = token_to_annotator.get(authorization.removeprefix("Bearer "))
        if annotator is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return annotator

    def owned_session(session_id: str, annotator: str) -> AnnotationSession:
        session = registry.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        if session.annotator_id != annotator:
            raise HTTPException(status_code=403, detail="session belongs to another annotator")
        return session

    def progress_payload(session: AnnotationSession) -> dict:
        per_skill: dict[str, dict[str, int]] = {}
        for instance_id, skill_id in session.queue:
            entry = per_skill.setdefault(skill_id, {"answered": 0, "total": 0})
            entry["total"] += 1
            if (instance_id, skill_id) in session.answered:
                entry["answered"] += 1
        return {
            "api_version": API_VERSION,
            "session_id": session.session_id,
            "round": session.round.value,
            "answered": len(session.answered),
            "total": len(session.queue),
            "fraction": session.fraction,
            "complete": session.complete,
            "per_skill": per_skill,
        }

    @app.post("/sessions")
    def create_session(body: CreateSessionBody, annotator: str = Depends(authenticated)) -> dict:
        if body.annotator_id != annotator:
            raise HTTPException(status_code=403, detail="token does not match annotator_id")
        try:
            round = Round(body.round)
        except ValueError:
            raise HTTPException(status_code=422, detail="round must be 'round1' or 'round2'")
        if round not in (Round.ROUND1, Round.ROUND2):
            raise HTTPException(status_code=422, detail="round must be 'round1' or 'round2'")

        existing = registry.find(annotator, round)
        if existing is not None:
            return {"api_version": API_VERSION, **progress_payload(existing)}

        if round is Round.ROUND1:
            queue = [
                (inst.instance_id, skill.skill_id)
                for inst in store.instances(Split.VALIDATION)
                for skill in inventory
            ]
            queue.sort()
        else:
            others = [a for a in tokens if a != annotator]
            if len(others) != 1:
                raise HTTPException(status_code=409, detail="round 2 needs exactly two configured annotators")
            pair = (annotator, others[0])
            for a in pair:
                r1 = registry.find(a, Round.ROUND1)
                if r1 is None or not r1.complete:
                    raise HTTPException(
                        status_code=409,
                        detail="round 2 requires completed round-1 sessions for both annotators",
                    )
            worklist = round2_worklist(store.cells(round=Round.ROUND1), pair)
            # Focused re-annotation groups the worklist by skill.
            queue = sorted(((d.instance_id, d.skill_id) for d in worklist), key=lambda p: (p[1], p[0]))

        session = AnnotationSession(
            session_id=secrets.token_hex(8),
            annotator_id=annotator,
            round=round,
            queue=queue,
        )
        if not queue:
            session.complete = True
        registry.add(session)
        return {"api_version": API_VERSION, **progress_payload(session)}

    @app.get("/sessions/{session_id}/next")
    def next_cell(session_id: str, annotator: str = Depends(authenticated)) -> dict:
        session = owned_session(session_id, annotator)
        position = session.next_position()
        if position is None:
            return {"api_version": API_VERSION, "done": True, "progress": progress_payload(session)}
        instance_id, skill_id = position
        instances = {i.instance_id: i for i in store.instances()}
        instance = instances.get(instance_id)
        skill = inventory[skill_id]
        return {
            "api_version": API_VERSION,
            "done": False,
            "position": {"instance_id": instance_id, "skill_id": skill_id},
            "index": session.queue.index(position),
            "total": len(session.queue),
            "instance": {
                "instance_id": instance_id,
                "text": instance.text if instance else "",
                "span": list(instance.span) if instance and instance.span else None,
                "marked_text": instance.marked_text() if instance else "",
            },
            "skill": _skill_view(skill),
            "round": session.round.value,
            "progress": progress_payload(session),
        }

    @app.post("/sessions/{session_id}/labels")
    def submit_label(session_id: str, body: SubmitBody, annotator: str = Depends(authenticated)) -> dict:
        session = owned_session(session_id, annotator)
        if session.complete:
            raise HTTPException(status_code=409, detail="session is complete and locked")
        position = (body.instance_id, body.skill_id)
        if position not in session.queue:
            raise HTTPException(status_code=404, detail="position not in this session's queue")
        skill = inventory[body.skill_id]
        if body.not_assessable == (body.label is not None):
            raise HTTPException(
                status_code=422, detail="provide exactly one of 'label' or 'not_assessable': true"
            )
        if body.not_assessable:
            outcome = inventory.normalize(body.skill_id, "")
        else:
            outcome = inventory.normalize(body.skill_id, body.label)
            if not outcome.is_in_schema:
                raise HTTPException(
                    status_code=422,
                    detail={
                        "error": f"label {body.label!r} is not in the skill's label inventory",
                        "legal_labels": list(skill.labels),
                        "not_assessable": NOT_ASSESSABLE,
                    },
                )
        cell = LabelCell(
            instance_id=body.instance_id,
            skill_id=body.skill_id,
            annotator_id=annotator,
            round=session.round,
            outcome=outcome,
            timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        store.add_cells([cell], allow_overwrite=True)
        session.answered.add(position)
        if len(session.answered) == len(session.queue):
            session.complete = True
        registry.update(session)
        return {"api_version": API_VERSION, "accepted": True, "progress": progress_payload(session)}

    @app.get("/sessions/{session_id}/progress")
    def progress(session_id: str, annotator: str = Depends(authenticated)) -> dict:
        return progress_payload(owned_session(session_id, annotator))

    @app.get("/schema/{skill_id}")
    def schema_view(skill_id: str, annotator: str = Depends(authenticated)) -> dict:
        skill = inventory.get(skill_id)
        if skill is None:
            raise HTTPException(status_code=404, detail=f"unknown skill {skill_id!r}")
        return {"api_version": API_VERSION, "skill": _skill_view(skill)}

    return app
