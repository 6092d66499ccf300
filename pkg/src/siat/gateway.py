"""HTTP gateway: the role-based web-service surface over the control plane.

Every endpoint delegates 1:1 to a catalog/runtime/knowledge operation; the
gateway adds transport, sessions, and status mapping — no business logic.

    POST /sessions {name}                      login by user name
    GET  /health
    POST/GET /users /sources /algorithms /services /subscriptions
    POST /sources/{id}/grant {user_id}
    POST /services/{id}/ingest {source_id, batch_size?, frames?, compression?}
    POST /services/{id}/run {max_batches?}
    GET  /services/{id}/ir?kind=&min_seq=&max_seq=&limit=
    GET  /services/{id}/anomalies?limit=
    POST /query {q}

Authentication: ``X-SIAT-Token`` header carrying a session token (128-bit
hex, in-memory, 24 h expiry).  Success is 200/201; errors map to 400
(validation), 401 (bad token), 403 (denied), 404 (unknown entity), and 409
(duplicates/conflicts), always as ``{"error": ..., "code": ...}``.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlparse

from . import errors as E
from .acquisition import SourceSpec
from .knowledge import render_term
from .stages import ParamSpec
from .system import SiatSystem

SESSION_TTL_MICROS = 24 * 3600 * 1_000_000
TOKEN_HEADER = "X-SIAT-Token"


def _now_micros() -> int:
    return time.time_ns() // 1000


@dataclass
class Session:
    token: str
    user_id: str
    expiry_ts: int


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, user_id: str) -> Session:
        session = Session(token=secrets.token_hex(16), user_id=user_id,
                          expiry_ts=_now_micros() + SESSION_TTL_MICROS)
        with self._lock:
            self._sessions[session.token] = session
        return session

    def resolve(self, token: Optional[str]) -> str:
        if not token:
            raise E.BadToken("missing X-SIAT-Token header")
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise E.BadToken("unknown token")
            if session.expiry_ts <= _now_micros():
                del self._sessions[token]
                raise E.BadToken("expired token")
        return session.user_id


_STATUS_BY_ERROR: list[tuple[type, int]] = [
    (E.BadToken, 401),
    (E.AccessDenied, 403),
    (E.UnknownUser, 404), (E.UnknownSource, 404), (E.UnknownService, 404),
    (E.UnknownAlgorithm, 404), (E.UnknownTopic, 404), (E.NotFound, 404),
    (E.DuplicateName, 409), (E.DuplicateTopic, 409), (E.AlreadyExists, 409),
    (E.EntityInUse, 409),
    (E.SiatError, 400),
]


def status_for(error: Exception) -> int:
    for cls, status in _STATUS_BY_ERROR:
        if isinstance(error, cls):
            return status
    return 400 if isinstance(error, (ValueError, KeyError, TypeError)) else 500


def _user_dict(user) -> dict:
    return {"user_id": user.user_id, "name": user.name, "role": user.role.value,
            "created_ts": user.created_ts}


def _require(body: dict, *keys: str) -> None:
    missing = [k for k in keys if k not in body]
    if missing:
        raise ValueError(f"missing fields {missing}")


class Api:
    """Transport-independent endpoint dispatch over one system."""

    def __init__(self, system: SiatSystem, sessions: Optional[SessionStore] = None):
        self.system = system
        self.sessions = sessions if sessions is not None else SessionStore()

    def dispatch(self, method: str, path: str, query: dict, body: Optional[dict],
                 token: Optional[str]) -> tuple[int, object]:
        body = body or {}
        cat = self.system.catalog

        if method == "GET" and path == "/health":
            return 200, {"status": "ok", "services": len(cat.services.items)}
        if method == "POST" and path == "/sessions":
            _require(body, "name")
            user = cat.find_user_by_name(body["name"])
            if user is None:
                raise E.UnknownUser(body["name"])
            session = self.sessions.create(user.user_id)
            return 201, {"token": session.token, "user_id": user.user_id,
                         "role": user.role.value, "expiry_ts": session.expiry_ts}

        actor = self.sessions.resolve(token)

        if method == "POST" and path == "/users":
            _require(body, "name", "role")
            user = cat.register_user(actor, body["name"], body["role"])
            return 201, _user_dict(user)
        if method == "GET" and path == "/users":
            if not cat.is_admin(actor):
                raise E.AccessDenied("listing users requires ADMIN")
            return 200, [_user_dict(u) for u in cat.users.items.values()]

        if method == "POST" and path == "/sources":
            _require(body, "kind", "spec")
            source = cat.add_data_source(actor, body["kind"],
                                         SourceSpec.from_dict(body["spec"]))
            return 201, source.to_dict()
        if method == "GET" and path == "/sources":
            return 200, [s.to_dict() for s in cat.list_sources(actor)]

        if method == "POST" and path == "/algorithms":
            _require(body, "name", "stage_kind", "input_kind", "output_kind")
            schema = None
            if body.get("params_schema") is not None:
                schema = [ParamSpec.from_dict(p) for p in body["params_schema"]]
            descriptor = cat.register_algorithm(
                actor, body["name"], body.get("version", "1"), body["stage_kind"],
                body["input_kind"], body["output_kind"], schema)
            return 201, descriptor.to_dict()
        if method == "GET" and path == "/algorithms":
            return 200, [d.to_dict() for d in cat.list_algorithms()]

        if method == "POST" and path == "/services":
            _require(body, "mode", "pipeline")
            pipeline = [self._stage_ref(entry) for entry in body["pipeline"]]
            service = cat.create_service(actor, body["mode"], pipeline,
                                         name=body.get("name", ""))
            return 201, service.to_dict()
        if method == "GET" and path == "/services":
            filt = {k: query[k] for k in ("mode", "name", "owner") if k in query}
            return 200, [s.to_dict() for s in cat.discover_services(actor, filt)]

        if method == "POST" and path == "/subscriptions":
            _require(body, "source_id", "service_id")
            sub = cat.subscribe(actor, body["source_id"], body["service_id"])
            return 201, sub.to_dict()
        if method == "GET" and path == "/subscriptions":
            subs = cat.subscriptions.items.values()
            if not cat.is_admin(actor):
                subs = [s for s in subs if s.user_id == actor]
            return 200, [s.to_dict() for s in subs]

        m = re.fullmatch(r"/sources/([A-Za-z0-9_.-]+)/grant", path)
        if m and method == "POST":
            _require(body, "user_id")
            source = cat.grant_source_access(actor, m.group(1), body["user_id"])
            return 200, source.to_dict()

        m = re.fullmatch(r"/services/([A-Za-z0-9_.-]+)/(ingest|run|ir|anomalies)", path)
        if m:
            service_id, action = m.group(1), m.group(2)
            if method == "POST" and action == "ingest":
                _require(body, "source_id")
                batches = self.system.ingest(
                    actor, service_id, body["source_id"],
                    batch_size=int(body.get("batch_size", 8)),
                    frames=body.get("frames"),
                    compression=body.get("compression", "NONE"))
                return 200, {"batches": batches}
            if method == "POST" and action == "run":
                max_batches = body.get("max_batches")
                summary = self.system.run(
                    service_id, None if max_batches is None else int(max_batches))
                return 200, summary.to_dict()
            if method == "GET" and action == "ir":
                records = cat.query_ir(
                    actor, service_id, kind=query.get("kind"),
                    min_seq=_opt_int(query, "min_seq"),
                    max_seq=_opt_int(query, "max_seq"),
                    limit=_opt_int(query, "limit"))
                return 200, [r.to_dict() for r in records]
            if method == "GET" and action == "anomalies":
                records = cat.query_anomalies(actor, service_id,
                                              limit=_opt_int(query, "limit"))
                return 200, [r.to_dict() for r in records]

        if method == "POST" and path == "/query":
            _require(body, "q")
            rows = self.system.query(body["q"])
            return 200, {"bindings": [
                {var: render_term(term) for var, term in row.items()} for row in rows
            ]}

        raise E.NotFound(f"{method} {path}")

    @staticmethod
    def _stage_ref(entry) -> tuple[str, dict]:
        if isinstance(entry, dict):
            return entry["algorithm_id"], dict(entry.get("params", {}))
        aid, params = entry
        return aid, dict(params)


def _opt_int(query: dict, key: str) -> Optional[int]:
    return int(query[key]) if key in query else None


# --- HTTP server -------------------------------------------------------------------

class GatewayServer:
    """Threaded HTTP/1.1 JSON server over one SiatSystem."""

    def __init__(self, port: int = 8787, data_dir=None,
                 system: Optional[SiatSystem] = None, quiet: bool = False):
        self.system = system if system is not None else SiatSystem(data_dir)
        self._owns_system = system is None
        self.api = Api(self.system)
        self.quiet = quiet
        api = self.api

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, *args):  # tests run many requests
                pass

            def _respond(self, status: int, payload):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def _handle(self, method: str):
                parsed = urlparse(self.path)
                query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                body = None
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    try:
                        body = json.loads(self.rfile.read(length).decode("utf-8"))
                    except json.JSONDecodeError as e:
                        self._respond(400, {"error": f"bad JSON body: {e}",
                                            "code": "BadRequest"})
                        return
                token = self.headers.get(TOKEN_HEADER)
                try:
                    status, payload = api.dispatch(method, parsed.path, query,
                                                   body, token)
                except Exception as e:  # noqa: BLE001 - mapped to a status
                    status = status_for(e)
                    code = e.code if isinstance(e, E.SiatError) else type(e).__name__
                    payload = {"error": str(e), "code": code}
                self._respond(status, payload)

            def do_GET(self):
                self._handle("GET")

            def do_POST(self):
                self._handle("POST")

        try:
            self._httpd = ThreadingHTTPServer(("127.0.0.1", port), Handler)
        except OSError as e:
            if self._owns_system:
                self.system.close()
            raise E.PortInUse(f"port {port}: {e}") from e
        self.port = self._httpd.server_address[1]
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="siat-gateway", daemon=True)
        self._thread.start()
        root = self.system.catalog.find_user_by_name("root")
        session = self.api.sessions.create(root.user_id)
        self.root_token = session.token
        if not self.quiet:
            print(f"siat gateway on http://127.0.0.1:{self.port}"
                  f" (root token: {session.token})")
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        if self._owns_system:
            self.system.close()


def serve(config: dict) -> GatewayServer:
    """Start a gateway from {port, data_dir}; returns the running handle."""
    return GatewayServer(port=int(config.get("port", 8787)),
                         data_dir=config.get("data_dir")).start()
