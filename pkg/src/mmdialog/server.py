"""HTTP chat service for interactive image-grounded conversations.

Model parameters are shared immutable across requests; each session owns a
lock so only one generation runs per session while different sessions stay
fully concurrent.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .data import ControlSettings, Episode
from .imagefeat import FeatureStore
from .inference import ModelBundle, generate_reply
from .safety import GenderLexicon, audit_utterance


@dataclass
class Session:
    session_id: str
    image_id: str | None
    style_text: str | None          # style or bucket string; None = no style
    gender_tokens: str | None       # e.g. "f0 m0"; None = degendering off
    history: list = field(default_factory=list)   # (speaker, text)
    created_at: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionBody(BaseModel):
    image_id: str | None = None
    style: str | None = None
    degender: bool | None = None


class ChatBody(BaseModel):
    session_id: str
    message: str


def _error(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse({"code": code, "message": message}, status_code=status)


def create_app(bundle: ModelBundle, store: FeatureStore | None = None,
               blocklist=None, lexicon: GenderLexicon | None = None,
               classifier=None, default_degender: bool = False,
               default_bucket: str = "positive/neutral") -> FastAPI:
    app = FastAPI(title="mmdialog chat service")
    blocklist = blocklist if blocklist is not None else []
    lexicon = lexicon or GenderLexicon.load_default()
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    def _episode(sess: Session) -> Episode:
        if sess.image_id is not None:
            return Episode(dataset_role="image_chat",
                           context_turns=[t for _, t in sess.history] or [""],
                           image_ref=sess.image_id,
                           style=None, label="-")
        return Episode(dataset_role="convai2",
                       context_turns=[t for _, t in sess.history] or [""],
                       label="-")

    def _respond(sess: Session):
        controls = ControlSettings(
            include_style=sess.style_text is not None,
            style_text=sess.style_text,
            gender_tokens=sess.gender_tokens)
        counters: dict = {}
        text, hyp = generate_reply(bundle, _episode(sess), controls, counters)
        verdict = audit_utterance(text, blocklist, lexicon, classifier)
        sess.history.append(("model", text))
        return {
            "text": text,
            "safety": verdict.to_dict(),
            "stats": {"beam_score": hyp.logp,
                      "tokens": len(hyp.surface_tokens),
                      "blocked_step_fallbacks":
                          counters.get("all_banned_fallback", 0)},
        }

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/images")
    def images():
        ids = store.ids() if store is not None else []
        return {"images": ids}

    @app.post("/session")
    def new_session(body: SessionBody):
        image_id = body.image_id
        if image_id is not None:
            if store is None or image_id not in store.index:
                return _error("IMAGE_NOT_FOUND",
                              f"unknown image id {image_id!r}", 404)
        degender = default_degender if body.degender is None else body.degender
        # text-only sessions default to no style line
        style_text = body.style if body.style is not None else (
            default_bucket if image_id is not None else None)
        sess = Session(
            session_id=uuid.uuid4().hex,
            image_id=image_id,
            style_text=style_text,
            gender_tokens="f0 m0" if degender else None)
        with sessions_lock:
            sessions[sess.session_id] = sess
        opening = None
        if image_id is not None:
            with sess.lock:
                opening = _respond(sess)
        return {"session_id": sess.session_id, "opening": opening}

    @app.post("/chat")
    def chat(body: ChatBody):
        with sessions_lock:
            sess = sessions.get(body.session_id)
        if sess is None:
            return _error("SESSION_NOT_FOUND",
                          f"unknown session {body.session_id!r}", 404)
        if not body.message.strip():
            return _error("EMPTY_MESSAGE", "message must be non-empty", 400)
        with sess.lock:
            sess.history.append(("human", body.message))
            return _respond(sess)

    return app


def run_server(app, port: int = 8080, host: str = "127.0.0.1"):
    import uvicorn
    uvicorn.run(app, host=host, port=port, log_level="warning")
