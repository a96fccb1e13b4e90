"""HTTP surface: JSON endpoints over the guarded service.

Stateless handlers; every shared fact lives behind the store and auth
contracts, so requests may be served concurrently. All non-login endpoints
require a bearer token. Errors use one body shape ({error, code, detail})
and every response carries an X-Request-Id correlation header.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .analytics import DEFAULT_K
from .errors import EhrError
from .service import EhrService

_STATUS = {
    "BAD_CREDENTIALS": 401,
    "EXPIRED_TOKEN": 401,
    "UNKNOWN_PRINCIPAL": 401,
    "LOCKED": 401,
    "UNAUTHENTICATED": 401,
    "FORBIDDEN": 403,
    "NOT_FOUND": 404,
    "UNKNOWN_PATIENT": 404,
    "UNKNOWN_RX": 404,
    "UNKNOWN_LINK": 404,
}

_ROUTES: list[tuple[str, re.Pattern, str]] = [
    ("POST", re.compile(r"^/api/login$"), "login"),
    ("GET", re.compile(r"^/api/patients/(?P<patient_id>[^/]+)/history$"), "history"),
    ("GET", re.compile(r"^/api/patients/(?P<patient_id>[^/]+)$"), "get_patient"),
    ("POST", re.compile(r"^/api/patients$"), "create_patient"),
    ("POST", re.compile(r"^/api/encounters$"), "create_encounter"),
    ("POST", re.compile(r"^/api/prescriptions/(?P<rx_id>[^/]+)/refill-request$"), "refill_request"),
    ("POST", re.compile(r"^/api/prescriptions$"), "create_prescription"),
    ("POST", re.compile(r"^/api/sync/push$"), "sync_push"),
    ("GET", re.compile(r"^/api/sync/pull$"), "sync_pull"),
    ("GET", re.compile(r"^/api/aggregates$"), "aggregates"),
]


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "ehrmesh"

    # -- plumbing -------------------------------------------------------------

    def log_message(self, format, *args):  # noqa: A002 - stdlib signature
        pass

    @property
    def service(self) -> EhrService:
        return self.server.service  # type: ignore[attr-defined]

    def _request_id(self) -> str:
        return self.headers.get("X-Request-Id") or str(uuid.uuid4())

    def _send(self, status: int, body: dict, request_id: str) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("X-Request-Id", request_id)
        self.end_headers()
        self.wfile.write(payload)

    def _error(self, status: int, code: str, detail: str, request_id: str) -> None:
        self._send(status, {"error": code, "code": status, "detail": detail}, request_id)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise EhrError("VALIDATION", f"body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise EhrError("VALIDATION", "body must be a JSON object")
        return doc

    def _identity(self):
        header = self.headers.get("Authorization") or ""
        if not header.startswith("Bearer "):
            raise EhrError("UNAUTHENTICATED", "missing bearer token")
        return self.service.resolve_token(header[len("Bearer "):].strip())

    def _dispatch(self, method: str) -> None:
        request_id = self._request_id()
        parsed = urlparse(self.path)
        for route_method, pattern, name in _ROUTES:
            if route_method != method:
                continue
            match = pattern.match(parsed.path)
            if not match:
                continue
            query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
            try:
                status, body = getattr(self, f"_ep_{name}")(match.groupdict(), query)
            except EhrError as err:
                self._error(_STATUS.get(err.code, 422), err.code, err.detail, request_id)
                return
            self._send(status, body, request_id)
            return
        self._error(404, "NOT_FOUND", f"no route for {method} {parsed.path}", request_id)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    # -- endpoints -----------------------------------------------------------

    def _ep_login(self, params, query):
        body = self._body()
        identity = self.service.authenticate_web(
            str(body.get("username", "")), str(body.get("password", ""))
        )
        return 200, {
            "token": identity.token,
            "clinician_id": identity.clinician_id,
            "role": identity.role,
            "expires_at": identity.expires_at,
        }

    def _ep_get_patient(self, params, query):
        identity = self._identity()
        return 200, self.service.get_patient(identity, params["patient_id"])

    def _ep_create_patient(self, params, query):
        identity = self._identity()
        patient_id = self.service.register_patient(identity, self._body())
        return 200, {"patient_id": patient_id}

    def _ep_history(self, params, query):
        identity = self._identity()
        entries = self.service.patient_history(identity, params["patient_id"])
        return 200, {"patient_id": params["patient_id"], "entries": entries}

    def _ep_create_encounter(self, params, query):
        identity = self._identity()
        encounter_id = self.service.record_encounter(identity, self._body())
        return 200, {"encounter_id": encounter_id}

    def _ep_create_prescription(self, params, query):
        identity = self._identity()
        rx_id = self.service.create_prescription(identity, self._body())
        return 200, {"rx_id": rx_id}

    def _ep_refill_request(self, params, query):
        identity = self._identity()
        return 200, self.service.request_refill(identity, params["rx_id"])

    def _ep_sync_push(self, params, query):
        identity = self._identity()
        body = self._body()
        replica_id = str(body.get("replica_id", ""))
        events = body.get("events")
        if not replica_id or not isinstance(events, list):
            raise EhrError("VALIDATION", "push body must carry replica_id and events")
        return 200, self.service.sync_push(identity, replica_id, events)

    def _ep_sync_pull(self, params, query):
        identity = self._identity()
        try:
            cursor = int(query.get("cursor", "0"))
        except ValueError as exc:
            raise EhrError("VALIDATION", "cursor must be an integer") from exc
        replica_id = query.get("replica_id", identity.clinician_id)
        return 200, self.service.sync_pull(identity, replica_id, cursor)

    def _ep_aggregates(self, params, query):
        identity = self._identity()
        period = query.get("period", "")
        try:
            k = int(query.get("k", str(DEFAULT_K)))
        except ValueError as exc:
            raise EhrError("VALIDATION", "k must be an integer") from exc
        return 200, self.service.aggregates(identity, period, k)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: EhrService):
        super().__init__(address, ApiHandler)
        self.service = service


def serve_api(service: EhrService, host: str = "127.0.0.1", port: int = 0) -> ApiServer:
    """Bind and return the server; callers drive serve_forever themselves."""
    return ApiServer((host, port), service)


def serve_in_thread(service: EhrService, host: str = "127.0.0.1", port: int = 0) -> tuple[ApiServer, threading.Thread]:
    server = serve_api(service, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
