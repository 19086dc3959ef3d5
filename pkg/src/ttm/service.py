"""HTTP chat service over the conversation engine.

One process hosts one dataset: the model, splits, corpus, and parsing
backend are loaded once and shared read-only across sessions. Each session
owns its conversation state and a lock, so overlapping posts to the same
session are answered one at a time and turn indices never interleave.

Sessions persist as an append-only line-delimited JSON log, one document
per event (created, turn, pin, unpin). A restart replays the logged utterances
through the engine and refuses to start if the transcript does not come
back verbatim, since that means the model, data, or seeds changed under
a recorded conversation.
"""
import json
import random
import threading
import uuid
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import load_csv
from .dialogue import ConversationState, NearestNeighborBackend
from .engine import Engine, run_turn
from .errors import ConversationError, LoadError
from .models import load_model, train_gbt


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ServiceSettings:
    """Everything the service needs to boot, with working defaults."""

    dataset: str = "diabetes"
    train_path: str = "datasets/diabetes/train.csv"
    test_path: str = "datasets/diabetes/test.csv"
    label_column: str = "outcome"
    class_names: tuple = ("unlikely", "likely")
    id_column: str = "id"
    model_path: str = ""
    train_on_boot: bool = True
    seed: int = 0
    mode: str = "interactive"
    n_interactive: int = 1000
    n_benchmark: int = 10000
    port: int = 8765
    persist_dir: str = ""
    backend: str = "nn"
    external_endpoint: str = ""


# config file key -> settings field
_FILE_KEYS = {
    "dataset.name": "dataset",
    "dataset.train": "train_path",
    "dataset.test": "test_path",
    "dataset.label_column": "label_column",
    "dataset.classes": "class_names",
    "dataset.id_column": "id_column",
    "model.path": "model_path",
    "model.train_on_boot": "train_on_boot",
    "engine.seed": "seed",
    "engine.mode": "mode",
    "engine.n_interactive": "n_interactive",
    "engine.n_benchmark": "n_benchmark",
    "service.port": "port",
    "service.persist_dir": "persist_dir",
    "service.backend": "backend",
    "service.external_endpoint": "external_endpoint",
}

_MODES = ("interactive", "benchmark")
_BACKENDS = ("nn", "external")


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def _split_list(inner: str) -> list:
    parts = []
    buf = []
    in_string = False
    for ch in inner:
        if ch == '"':
            in_string = not in_string
        if ch == "," and not in_string:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


def _parse_value(raw: str, where: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw.startswith('"') and raw.endswith('"'):
        return raw[1:-1]
    if raw.startswith("["):
        if not raw.endswith("]"):
            raise LoadError(f"{where}: unterminated list {raw!r}")
        inner = raw[1:-1].strip()
        if not inner:
            return ()
        return tuple(_parse_value(p, where) for p in _split_list(inner))
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise LoadError(f"{where}: cannot parse value {raw!r}")


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse the key/value config format into a flat {section.key: value} map.

    Supported values: quoted strings, integers, floats, true/false, and
    lists of those. Comments run from an unquoted # to the end of the line.
    """
    values: dict = {}
    section = ""
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = _strip_comment(rawline).strip()
        if not line:
            continue
        where = f"{source} line {lineno}"
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise LoadError(f"{where}: malformed section header {line!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise LoadError(f"{where}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if not key:
            raise LoadError(f"{where}: missing key before '='")
        if not section:
            raise LoadError(f"{where}: key {key!r} appears before any [section]")
        if raw.count('"') % 2:
            raise LoadError(f"{where}: unterminated string in {raw.strip()!r}")
        values[f"{section}.{key}"] = _parse_value(raw, where)
    return values


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise LoadError(f"no config file at {path!r}")
    return parse_config_text(p.read_text(), source=str(path))


def _check_types(merged: dict) -> None:
    def bad(name, want):
        raise LoadError(
            f"setting {name!r} must be {want}, got {merged[name]!r}"
        )

    for name in ("seed", "port", "n_interactive", "n_benchmark"):
        if isinstance(merged[name], bool) or not isinstance(merged[name], int):
            bad(name, "an integer")
    if not isinstance(merged["train_on_boot"], bool):
        bad("train_on_boot", "true or false")
    for name in (
        "dataset", "train_path", "test_path", "label_column",
        "id_column", "model_path", "mode", "persist_dir",
        "backend", "external_endpoint",
    ):
        if not isinstance(merged[name], str):
            bad(name, "a string")
    classes = merged["class_names"]
    if not isinstance(classes, (list, tuple)) or not all(
        isinstance(c, str) for c in classes
    ):
        bad("class_names", "a list of strings")
    merged["class_names"] = tuple(classes)
    if merged["mode"] not in _MODES:
        bad("mode", f"one of {', '.join(_MODES)}")
    if merged["backend"] not in _BACKENDS:
        bad("backend", f"one of {', '.join(_BACKENDS)}")


def resolve_settings(
    values: Optional[Mapping] = None,
    overrides: Optional[Mapping] = None,
    env: Optional[Mapping] = None,
) -> ServiceSettings:
    """Combine config file values, flag overrides, and the environment.

    Precedence, lowest to highest: built-in defaults, config file values,
    flag overrides, then environment variables (TTM_PORT).
    """
    import os

    merged = {f.name: f.default for f in fields(ServiceSettings)}
    for key, value in (values or {}).items():
        name = _FILE_KEYS.get(key)
        if name is None:
            known = ", ".join(sorted(_FILE_KEYS))
            raise LoadError(f"unknown config key {key!r}; known keys: {known}")
        merged[name] = value
    for name, value in (overrides or {}).items():
        if name not in merged:
            raise LoadError(f"unknown setting {name!r}")
        if value is not None:
            merged[name] = value
    env = os.environ if env is None else env
    if "TTM_PORT" in env:
        try:
            merged["port"] = int(env["TTM_PORT"])
        except ValueError:
            raise LoadError(
                f"TTM_PORT must be an integer, got {env['TTM_PORT']!r}"
            )
    _check_types(merged)
    return ServiceSettings(**merged)


# ---------------------------------------------------------------------------
# the service proper


class UnknownResource(LookupError):
    """Asked-for session or dataset does not exist; maps to a 404."""


def _first_op_kind(parse: str) -> str:
    tokens = parse.split()
    first = tokens[0]
    if first == "previous":
        second = tokens[1] if len(tokens) > 1 else ""
        return "previous_filter" if second == "filter" else "previous_operation"
    return {"model": "model_info", "function": "function_info"}.get(first, first)


def _index_categories(corpus: Sequence) -> dict:
    buckets: dict = {}
    for pair in corpus:
        buckets.setdefault(_first_op_kind(pair.parse), set()).add(pair.utterance)
    return {kind: tuple(sorted(utts)) for kind, utts in buckets.items()}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


@dataclass
class _Session:
    state: ConversationState
    lock: threading.Lock = field(default_factory=threading.Lock)
    suggest_draws: int = 0


class ChatService:
    """Session registry plus the message, pin, and suggestion operations.

    The HTTP layer in create_app is a thin shim over this class, so the
    command-line REPL and the service share one code path per turn.
    """

    def __init__(
        self,
        engine: Engine,
        backend,
        corpus: Sequence,
        dataset: str,
        seed: int = 0,
        persist_dir: Optional[str] = None,
    ):
        self.engine = engine
        self.backend = backend
        self.dataset = dataset
        self.seed = seed
        self.persist_dir = Path(persist_dir) if persist_dir else None
        self._sessions: dict = {}
        self._registry_lock = threading.Lock()
        self._categories = _index_categories(corpus)
        self._restore_all()

    # -- session registry

    def create_session(self, dataset: str) -> str:
        if dataset != self.dataset:
            raise UnknownResource(
                f"unknown dataset {dataset!r}; this service hosts {self.dataset!r}"
            )
        with self._registry_lock:
            session_id = uuid.uuid4().hex[:12]
            while session_id in self._sessions:
                session_id = uuid.uuid4().hex[:12]
            self._sessions[session_id] = _Session(ConversationState(session_id))
        self._append(session_id, {"event": "created", "dataset": dataset})
        return session_id

    def _session(self, session_id: str) -> _Session:
        sess = self._sessions.get(session_id)
        if sess is None:
            raise UnknownResource(f"no session {session_id!r}")
        return sess

    def categories(self) -> list:
        return sorted(self._categories)

    # -- conversation operations

    def post_message(self, session_id: str, text: str) -> dict:
        sess = self._session(session_id)
        with sess.lock:
            try:
                turn = run_turn(self.engine, sess.state, text, self.backend)
            except ConversationError as exc:
                hints = self.backend.hints() if hasattr(self.backend, "hints") else []
                return {
                    "response": str(exc),
                    "parse": "",
                    "results": [],
                    "turn_index": None,
                    "hints": list(hints),
                }
            index = len(sess.state.turns) - 1
            self._append(session_id, {
                "event": "turn",
                "turn_index": index,
                "utterance": text,
                "parse": turn.parse_text,
                "response": turn.response,
            })
            return {
                "response": turn.response,
                "parse": turn.parse_text,
                "results": [
                    {"kind": r.kind, "payload": _jsonable(r.payload), "error": r.error}
                    for r in turn.results
                ],
                "turn_index": index,
            }

    def pin_turn(self, session_id: str, turn: int) -> list:
        sess = self._session(session_id)
        with sess.lock:
            already = turn in sess.state.pinned
            sess.state.pin(turn)
            if not already:
                self._append(session_id, {"event": "pin", "turn": turn})
            return list(sess.state.pinned)

    def unpin_turn(self, session_id: str, turn: int) -> list:
        sess = self._session(session_id)
        with sess.lock:
            present = turn in sess.state.pinned
            sess.state.unpin(turn)
            if present:
                self._append(session_id, {"event": "unpin", "turn": turn})
            return list(sess.state.pinned)

    def pins(self, session_id: str) -> list:
        sess = self._session(session_id)
        with sess.lock:
            return list(sess.state.pinned)

    def history(self, session_id: str) -> list:
        sess = self._session(session_id)
        with sess.lock:
            pinned = set(sess.state.pinned)
            return [
                {
                    "turn_index": i,
                    "utterance": t.utterance,
                    "parse": t.parse_text,
                    "response": t.response,
                    "pinned": i in pinned,
                }
                for i, t in enumerate(sess.state.turns)
            ]

    def suggest(self, session_id: str, category: str) -> dict:
        sess = self._session(session_id)
        pool = self._categories.get(category)
        if pool is None:
            known = ", ".join(self.categories())
            raise ConversationError(
                f"unknown suggestion category {category!r}; categories: {known}"
            )
        with sess.lock:
            draw = sess.suggest_draws
            sess.suggest_draws += 1
        rng = random.Random(f"{self.seed}:{category}:{draw}")
        return {"suggestion": pool[rng.randrange(len(pool))], "category": category}

    # -- persistence

    def _append(self, session_id: str, doc: dict) -> None:
        if self.persist_dir is None:
            return
        self.persist_dir.mkdir(parents=True, exist_ok=True)
        with open(self.persist_dir / f"{session_id}.jsonl", "a") as fh:
            fh.write(json.dumps(doc) + "\n")

    def _restore_all(self) -> None:
        if self.persist_dir is None or not self.persist_dir.is_dir():
            return
        for path in sorted(self.persist_dir.glob("*.jsonl")):
            self._restore_one(path)

    def _restore_one(self, path: Path) -> None:
        session_id = path.stem
        state = ConversationState(session_id)
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            where = f"session {session_id} log line {lineno}"
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"{where}: not JSON ({exc})")
            event = doc.get("event")
            if event == "created":
                if doc.get("dataset") != self.dataset:
                    raise LoadError(
                        f"{where}: session belongs to dataset"
                        f" {doc.get('dataset')!r}, this service hosts"
                        f" {self.dataset!r}"
                    )
            elif event == "turn":
                try:
                    turn = run_turn(self.engine, state, doc["utterance"], self.backend)
                except ConversationError as exc:
                    raise LoadError(f"{where}: utterance no longer parses ({exc})")
                if turn.parse_text != doc.get("parse") or turn.response != doc.get("response"):
                    raise LoadError(
                        f"{where}: replay drifted from the recorded turn;"
                        " the model, data, or seeds changed under this session"
                    )
            elif event == "pin":
                try:
                    state.pin(doc.get("turn"))
                except ConversationError as exc:
                    raise LoadError(f"{where}: {exc}")
            elif event == "unpin":
                try:
                    state.unpin(doc.get("turn"))
                except ConversationError as exc:
                    raise LoadError(f"{where}: {exc}")
            else:
                raise LoadError(f"{where}: unknown event {event!r}")
        self._sessions[session_id] = _Session(state)


def sample_budget(settings: ServiceSettings) -> int:
    """Perturbation sample count for the configured engine mode."""
    if settings.mode == "benchmark":
        return settings.n_benchmark
    return settings.n_interactive


def locate_path(path: str, base_dir: Optional[str] = None) -> str:
    """Resolve a configured path: working directory first, then the config
    file's directory, then its parent, so `--config configs/x.toml` works
    from the project root and from elsewhere."""
    if not path or Path(path).is_absolute() or Path(path).exists():
        return path
    if base_dir:
        for root in (Path(base_dir), Path(base_dir).parent):
            candidate = root / path
            if candidate.exists():
                return str(candidate)
    return path


def load_split(settings: ServiceSettings, which: str, base_dir: Optional[str] = None):
    path = settings.train_path if which == "train" else settings.test_path
    return load_csv(
        locate_path(path, base_dir),
        settings.label_column,
        class_names=settings.class_names,
        id_column=settings.id_column,
    )


def obtain_model(settings: ServiceSettings, train, base_dir: Optional[str] = None):
    """The configured model: loaded from disk, or trained on the spot."""
    if settings.model_path:
        return load_model(locate_path(settings.model_path, base_dir))
    if settings.train_on_boot:
        return train_gbt(train)
    raise LoadError("no model: set model.path or model.train_on_boot = true")


def build_corpus(schema, train) -> list:
    """Expand the bundled template pack against a dataset's schema."""
    from .datagen import default_caps, expand_templates, load_templates, template_pack_path

    return expand_templates(
        load_templates(template_pack_path()), schema, default_caps(train)
    )


def load_service(settings: ServiceSettings, base_dir: Optional[str] = None) -> ChatService:
    """Boot a ChatService from settings: data, model, corpus, engine."""
    train = load_split(settings, "train", base_dir)
    test = load_split(settings, "test", base_dir)
    model = obtain_model(settings, train, base_dir)

    corpus = build_corpus(train.schema, train)
    backend = NearestNeighborBackend(corpus, train.schema)
    if settings.backend == "external":
        from .dialogue import ExternalBackend, ExternalBackendConfig

        if not settings.external_endpoint:
            raise LoadError("backend = external requires service.external_endpoint")
        backend = ExternalBackend(
            ExternalBackendConfig(settings.external_endpoint),
            corpus,
            train.schema,
            index=backend.index,
        )
    engine = Engine(
        model, train, test,
        mode=settings.mode, seed=settings.seed,
        n_samples=sample_budget(settings),
    )
    # a relative persist_dir is relative to wherever the server is started
    persist = settings.persist_dir or None
    return ChatService(
        engine, backend, corpus, settings.dataset,
        seed=settings.seed, persist_dir=persist,
    )


# ---------------------------------------------------------------------------
# HTTP layer


def create_app(service: ChatService):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        dataset: str

    class MessageBody(BaseModel):
        text: str

    class PinBody(BaseModel):
        turn: int

    app = FastAPI(title="table talk", docs_url=None, redoc_url=None)

    @app.exception_handler(UnknownResource)
    async def _not_found(request: Request, exc: UnknownResource):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(ConversationError)
    async def _bad_request(request: Request, exc: ConversationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "dataset": service.dataset,
            "categories": service.categories(),
        }

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        session_id = service.create_session(body.dataset)
        return {"session_id": session_id, "dataset": body.dataset}

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        return service.post_message(session_id, body.text)

    @app.get("/sessions/{session_id}/history")
    def history(session_id: str):
        return {"session_id": session_id, "turns": service.history(session_id)}

    @app.post("/sessions/{session_id}/pins")
    def pin_turn(session_id: str, body: PinBody):
        return {"pins": service.pin_turn(session_id, body.turn)}

    @app.delete("/sessions/{session_id}/pins/{turn}")
    def unpin_turn(session_id: str, turn: int):
        return {"pins": service.unpin_turn(session_id, turn)}

    @app.get("/sessions/{session_id}/pins")
    def pins(session_id: str):
        return {"pins": service.pins(session_id)}

    @app.get("/sessions/{session_id}/suggest")
    def suggest(session_id: str, category: str):
        return service.suggest(session_id, category)

    return app
