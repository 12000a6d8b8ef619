"""Session-based HTTP API for the interactive steering loop.

One session = one image + instruction, its candidate plans, and (after a
plan is selected) a steppable execution state.  Sessions live in memory
behind an LRU cap; the artifact store is shared and append-only.

Endpoints:
    POST /sessions                  create session, plan candidates
    GET  /sessions/{id}             session summary
    POST /sessions/{id}/plan/{k}    select plan k (resets any prior state)
    POST /sessions/{id}/step        execute the next statement
    POST /sessions/{id}/repeat      re-run the last statement (overrides allowed)
    GET  /sessions/{id}/trace       full trace JSON
    GET  /artifacts/{digest}        PNG artifact by content digest

Every error body is {"code": str, "message": str, "line": int?} with a code
from the closed enum in errors.py.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from . import executor, planner
from .backends import ProviderBinding, Registry
from .dsl import print_program
from .errors import (
    AmbiguousSelector,
    BadImage,
    IndexOutOfRange,
    InvalidOverride,
    MissingArtifact,
    NoPlanSelected,
    NoTemplateMatch,
    NotFound,
    ParseFailure,
    ProgramComplete,
    ProtocolError,
    ProviderError,
    RemoteError,
    TransportError,
    TypeMismatch,
    UseBeforeDef,
    VisEditError,
)
from .geometry import ImageBuffer, segment_components
from .pngio import decode_png

SESSION_CAP = 64

_STATUS_FOR = [
    ((NotFound, MissingArtifact), 404),
    ((IndexOutOfRange, ProgramComplete, NoPlanSelected), 409),
    ((ProviderError, TransportError, RemoteError, ProtocolError), 502),
    ((BadImage, NoTemplateMatch, AmbiguousSelector, ParseFailure, TypeMismatch,
      UseBeforeDef, InvalidOverride), 400),
]


def _status_for(exc: VisEditError) -> int:
    for classes, status in _STATUS_FOR:
        if isinstance(exc, classes):
            return status
    return 400


@dataclass
class Session:
    id: str
    image: ImageBuffer
    instruction: str
    plans: list[planner.PlanCandidate]
    scene: planner.SceneSummary
    seed: int
    created_at: float
    selected_plan: int | None = None
    state: executor.ExecutionState | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionTable:
    """LRU-bounded in-memory session store."""

    def __init__(self, cap: int = SESSION_CAP):
        self._cap = cap
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, session: Session) -> None:
        with self._lock:
            self._sessions[session.id] = session
            self._sessions.move_to_end(session.id)
            while len(self._sessions) > self._cap:
                self._sessions.popitem(last=False)

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise NotFound(f"no session {session_id!r}")
            self._sessions.move_to_end(session_id)
            return self._sessions[session_id]

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


class CreateSessionBody(BaseModel):
    image: str          # base64 PNG
    instruction: str
    seed: int = 0


class RepeatBody(BaseModel):
    overrides: dict = {}


def scene_summary(image: ImageBuffer) -> planner.SceneSummary:
    try:
        rois = segment_components(image)
    except VisEditError:
        rois = []
    return planner.SceneSummary(
        segments=tuple((r.label, r.centroid, r.area) for r in rois),
        image_size=image.size)


def _plan(instruction: str, scene: planner.SceneSummary,
          registry: Registry) -> list[planner.PlanCandidate]:
    binding = registry.binding("planner")
    try:
        return planner.plan_from_instruction(instruction, scene)
    except NoTemplateMatch:
        if binding.kind != "remote":
            raise
    program = planner.llm_plan_request(instruction, planner.DEFAULT_EXEMPLARS,
                                       binding.endpoint, timeout=binding.timeout)
    dataflow = planner.validate_dataflow(program).dag
    return [planner.PlanCandidate(program=program, dataflow=dataflow, provenance="llm")]


def _session_view(session: Session) -> dict:
    program_len = (len(session.plans[session.selected_plan].program.statements)
                   if session.selected_plan is not None else None)
    return {
        "id": session.id,
        "instruction": session.instruction,
        "image_size": list(session.image.size),
        "scene": [{"label": label, "centroid": list(centroid), "area": area}
                  for label, centroid, area in session.scene.segments],
        "plans": [{"index": i, "program": print_program(c.program),
                   "provenance": c.provenance}
                  for i, c in enumerate(session.plans)],
        "selected_plan": session.selected_plan,
        "pc": session.state.pc if session.state else None,
        "total_steps": program_len,
        "done": (session.state.pc >= program_len) if session.state else None,
    }


def _step_view(trace: executor.StepTrace, session: Session) -> dict:
    program_len = len(session.plans[session.selected_plan].program.statements)
    node = executor.render_trace_json([trace])["steps"][0]
    return {
        "trace": node,
        "artifact_urls": [f"/artifacts/{a}" for a in trace.artifact_ids],
        "pc": session.state.pc,
        "done": session.state.pc >= program_len,
    }


def create_app(registry: Registry | None = None) -> FastAPI:
    app = FastAPI(title="visedit", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.registry = registry or Registry()
    app.state.sessions = SessionTable()
    app.state.artifacts = executor.ArtifactStore()

    @app.exception_handler(VisEditError)
    async def engine_error(_request: Request, exc: VisEditError):
        body = {"code": exc.code, "message": str(exc)}
        if isinstance(exc, ParseFailure) and exc.diagnostics:
            body["line"] = exc.diagnostics[0].line
        line = getattr(exc, "line", None)
        if line is not None:
            body["line"] = line
        return JSONResponse(status_code=_status_for(exc), content=body)

    @app.exception_handler(RequestValidationError)
    async def bad_request(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "BAD_REQUEST", "message": str(exc.errors())})

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        if not body.instruction.strip():
            raise NoTemplateMatch("instruction is empty")
        try:
            raw = base64.b64decode(body.image, validate=True)
        except Exception as exc:
            raise BadImage(f"image is not valid base64: {exc}") from exc
        image = decode_png(raw)
        scene = scene_summary(image)
        plans = _plan(body.instruction, scene, app.state.registry)
        session = Session(id=uuid.uuid4().hex, image=image,
                          instruction=body.instruction, plans=plans, scene=scene,
                          seed=body.seed, created_at=time.time())
        app.state.sessions.put(session)
        return _session_view(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_view(app.state.sessions.get(session_id))

    @app.post("/sessions/{session_id}/plan/{index}")
    def select_plan(session_id: str, index: int):
        session = app.state.sessions.get(session_id)
        with session.lock:
            if not (0 <= index < len(session.plans)):
                raise IndexOutOfRange(
                    f"plan index {index} out of range [0, {len(session.plans)})")
            session.selected_plan = index
            session.state = executor.init_state(session.image, seed=session.seed,
                                                artifacts=app.state.artifacts)
        return _session_view(session)

    def _require_state(session: Session) -> executor.ExecutionState:
        if session.state is None or session.selected_plan is None:
            raise NoPlanSelected("select a plan before stepping")
        return session.state

    def _attach_line(exc: VisEditError, line: int) -> VisEditError:
        exc.line = line
        return exc

    @app.post("/sessions/{session_id}/step")
    def session_step(session_id: str):
        session = app.state.sessions.get(session_id)
        with session.lock:
            state = _require_state(session)
            program = session.plans[session.selected_plan].program
            try:
                trace = executor.step(state, program, app.state.registry)
            except VisEditError as exc:
                raise _attach_line(exc, state.pc)
            return _step_view(trace, session)

    @app.post("/sessions/{session_id}/repeat")
    def session_repeat(session_id: str, body: RepeatBody | None = None):
        session = app.state.sessions.get(session_id)
        with session.lock:
            state = _require_state(session)
            program = session.plans[session.selected_plan].program
            overrides = dict((body.overrides if body else {}) or {})
            if "providers" in overrides:
                overrides["providers"] = {
                    role: ProviderBinding(role=role, **spec) if isinstance(spec, dict)
                    else spec
                    for role, spec in overrides["providers"].items()}
            try:
                trace = executor.repeat(state, program, app.state.registry, overrides)
            except VisEditError as exc:
                raise _attach_line(exc, max(state.pc - 1, 0))
            return _step_view(trace, session)

    @app.get("/sessions/{session_id}/trace")
    def session_trace(session_id: str):
        session = app.state.sessions.get(session_id)
        with session.lock:
            state = _require_state(session)
            payload = executor.render_trace_json(state.history)
        payload["artifact_base"] = "/artifacts/"
        return payload

    @app.get("/artifacts/{digest}")
    def get_artifact(digest: str):
        data = app.state.artifacts.get(digest)  # raises MissingArtifact -> 404
        return Response(content=data, media_type="image/png")

    return app
