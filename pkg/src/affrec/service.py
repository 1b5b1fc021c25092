"""JSON-over-HTTP transport for a ``Recommender``.

POST /recommend, /admin/invalidate, /prefetch; GET /metrics, /health.
Handlers only decode, delegate and encode.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .cot_engine import BackendUnavailable, ResponseFormatError
from .domain import Context, Metadata, ValidationError
from .pipeline import Recommender, UnknownEntity

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


class BadRequest(ValueError):
    pass


def _parse_addr(addr: str) -> tuple:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def handle_recommend(rec: Recommender, body: dict) -> dict:
    if "user_id" not in body:
        raise BadRequest("user_id is required")
    try:
        ctx = Context.from_dict(body.get("context"))
    except (ValidationError, ValueError, TypeError) as exc:
        raise BadRequest(f"malformed context: {exc}") from None
    cands = body.get("candidate_poi_ids")
    if cands is not None and (not isinstance(cands, list) or not cands):
        raise BadRequest("candidate_poi_ids must be a non-empty list")
    n = body.get("n", 10)
    if not isinstance(n, int) or n < 1:
        raise BadRequest("n must be a positive integer")
    return rec.recommend(str(body["user_id"]), ctx, cands, n).to_dict()


def handle_invalidate(rec: Recommender, body: dict) -> dict:
    if "poi_id" not in body:
        raise BadRequest("poi_id is required")
    meta = body.get("metadata")
    try:
        meta = Metadata.from_dict(meta) if meta is not None else None
    except (ValidationError, ValueError, TypeError, KeyError) as exc:
        raise BadRequest(f"malformed metadata: {exc}") from None
    return {"evicted": rec.invalidate(body["poi_id"], meta)}


def handle_prefetch(rec: Recommender, body: dict) -> dict:
    traj = body.get("trajectory")
    if not isinstance(traj, list) or not traj:
        raise BadRequest("trajectory must be a non-empty list of [poi_id, timestamp]")
    try:
        traj = [(str(p), float(t)) for p, t in traj]
        ctx = Context.from_dict(body["context"]) if body.get("context") is not None else None
    except (ValidationError, ValueError, TypeError) as exc:
        raise BadRequest(str(exc)) from None
    now = float(body.get("now", ctx.timestamp if ctx else traj[-1][1]))
    tasks = rec.prefetch(str(body.get("user_id", "")), traj, now, ctx)
    return {"enqueued": len(tasks), "poi_ids": [t.poi_id for t in tasks]}


ROUTES = {
    ("POST", "/recommend"): handle_recommend,
    ("POST", "/admin/invalidate"): handle_invalidate,
    ("POST", "/prefetch"): handle_prefetch,
    ("GET", "/metrics"): lambda rec, _: rec.metrics(),
    ("GET", "/health"): lambda rec, _: {"status": "ok"},
}


class Handler(BaseHTTPRequestHandler):
    server_version = "affrec/0.1"
    recommender: Recommender = None  # set on the subclass built by make_server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, obj: dict) -> None:
        data = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0]
        fn = ROUTES.get((method, path))
        if fn is None:
            known = {p for _, p in ROUTES}
            status = HTTPStatus.METHOD_NOT_ALLOWED if path in known else HTTPStatus.NOT_FOUND
            return self._send(status, {"error": f"no route {method} {path}"})
        body = {}
        if method == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY:
                return self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": "body too large"})
            try:
                body = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError as exc:
                return self._send(HTTPStatus.BAD_REQUEST, {"error": f"invalid JSON: {exc}"})
            if not isinstance(body, dict):
                return self._send(HTTPStatus.BAD_REQUEST, {"error": "body must be a JSON object"})
        try:
            self._send(HTTPStatus.OK, fn(self.recommender, body))
        except (BadRequest, ValidationError) as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        except UnknownEntity as exc:
            self._send(HTTPStatus.NOT_FOUND, {"error": str(exc.args[0] if exc.args else exc)})
        except (BackendUnavailable, ResponseFormatError) as exc:
            self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": f"backend unavailable: {exc}"})
        except Exception as exc:  # pragma: no cover - last resort
            log.exception("unhandled error")
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": str(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


def make_server(rec: Recommender, listen_addr: str = "127.0.0.1:0") -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"recommender": rec})
    server = ThreadingHTTPServer(_parse_addr(listen_addr), handler)
    server.daemon_threads = True
    return server


class ServiceThread:
    """Run a server in a background thread (tests and notebooks)."""

    def __init__(self, rec: Recommender, listen_addr: str = "127.0.0.1:0"):
        self.server = make_server(rec, listen_addr)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)


def serve_forever(rec: Recommender, listen_addr: str) -> None:
    server = make_server(rec, listen_addr)
    host, port = server.server_address[:2]
    log.info("listening on http://%s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        rec.close()
        time.sleep(0)
