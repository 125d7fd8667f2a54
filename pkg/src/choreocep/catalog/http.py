"""JSON-over-HTTP front end for the catalog.

Routes::

    POST   /event_types                 register (definition body, optional "webhooks")
                                        or declare a producer-fed type: {"name": ..., "primitive": true}
    GET    /event_types                 list records
    GET    /event_types/{name}          one record
    PUT    /event_types/{name}          replace the definition
    DELETE /event_types/{name}          delete (fails while other types consume it)
    POST   /event_types/{name}/webhooks {"urls": [...]}

Errors come back as ``{"error": "..."}`` with 400 (malformed body), 404,
409 (duplicate name or live dependency) or 422 (invalid definition).
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

from .registry import Catalog, ConflictError, DependencyError, NotFoundError, ValidationError

log = logging.getLogger(__name__)


class _ApiError(Exception):
    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status


def _status_for(exc: Exception) -> int:
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, (ConflictError, DependencyError)):
        return 409
    if isinstance(exc, ValidationError):
        return 422
    return 500


def handle_request(catalog: Catalog, method: str, path: str, body: bytes | None) -> tuple[int, object]:
    """Route one API call; returns ``(status, json_payload)``.

    Kept separate from the HTTP server so it can be exercised directly.
    """
    parts = [unquote(p) for p in path.split("?")[0].strip("/").split("/") if p]
    try:
        payload = json.loads(body) if body else None
    except json.JSONDecodeError as exc:
        return 400, {"error": f"malformed JSON: {exc}"}
    try:
        if not parts or parts[0] != "event_types":
            raise _ApiError(404, f"no route for {path}")
        if len(parts) == 1:
            if method == "GET":
                return 200, [catalog.lookup_metadata(n).to_dict() for n in catalog.names()]
            if method == "POST":
                if not isinstance(payload, dict):
                    raise _ApiError(400, "body must be a JSON object")
                if payload.get("primitive"):
                    return 201, catalog.declare_primitive(payload.get("name", "")).to_dict()
                hooks = payload.pop("webhooks", [])
                return 201, catalog.register_event_type(payload, hooks).to_dict()
        elif len(parts) == 2:
            name = parts[1]
            if method == "GET":
                return 200, catalog.lookup_metadata(name).to_dict()
            if method == "PUT":
                if not isinstance(payload, dict):
                    raise _ApiError(400, "body must be a JSON object")
                payload.setdefault("name", name)
                return 200, catalog.update_event_type(name, payload).to_dict()
            if method == "DELETE":
                catalog.delete_event_type(name)
                return 200, {"deleted": name}
        elif len(parts) == 3 and parts[2] == "webhooks" and method == "POST":
            if not isinstance(payload, dict) or not isinstance(payload.get("urls"), list):
                raise _ApiError(400, 'body must be {"urls": [...]}')
            return 200, catalog.add_webhooks(parts[1], payload["urls"]).to_dict()
        raise _ApiError(405, f"{method} not allowed on {path}")
    except _ApiError as exc:
        return exc.status, {"error": str(exc)}
    except (NotFoundError, ConflictError, DependencyError, ValidationError) as exc:
        return _status_for(exc), {"error": str(exc)}


def make_server(catalog: Catalog, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    lock = threading.Lock()  # one command at a time against the catalog

    class Handler(BaseHTTPRequestHandler):
        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else None
            with lock:
                status, out = handle_request(catalog, self.command, self.path, body)
            data = json.dumps(out).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

        def log_message(self, fmt: str, *args) -> None:
            log.debug("%s " + fmt, self.address_string(), *args)

    return ThreadingHTTPServer((host, port), Handler)
