"""Websocket bridge: discovery, interface calls, and concept subscriptions.

The protocol is JSON text, one message per websocket frame. Clients send::

    {"type": "rdis"}
    {"type": "list"}
    {"type": "call", "id": "...", "interface": "...", "args": {...}}
    {"type": "subscribe", "id": "...", "concept": "...", "period_ms": 100}
    {"type": "unsubscribe", "id": "..."}

and receive ``rdis``, ``list``, ``result``, ``state``, and ``error`` frames;
ids are opaque client-chosen strings echoed in every response. The rdis
reply carries the canonical serialization of the running document, byte for
byte, so the device stays the system of record for its abilities. Every
malformed frame produces exactly one error reply and leaves the connection
open. Subscription periods are clamped to [20, 5000] ms.

All device traffic funnels through the runtime's per-connection loop; the
bridge adds no second writer. A plain HTTP GET of /healthz answers "ok",
and when a UI directory is configured its files are served at /.
"""

from __future__ import annotations

import http
import json
import logging
import pathlib
import threading
from typing import Any

from websockets.datastructures import Headers
from websockets.exceptions import ConnectionClosed
from websockets.http11 import Response
from websockets.sync.server import ServerConnection, serve as ws_serve

from .expr import ExprError, Name
from .model import CONCEPTS, RdisDocument
from .parser import canonicalize
from .runtime import (
    InterfaceArgumentError,
    RdisRuntimeError,
    RuntimeHandle,
    UnknownConceptError,
    UnknownInterfaceError,
)

logger = logging.getLogger(__name__)

MIN_PERIOD_MS = 20
MAX_PERIOD_MS = 5000

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}

_PLACEHOLDER_PAGE = (
    "<!doctype html><title>device bridge</title>"
    "<p>The bridge is running. No UI bundle is configured; "
    "connect a websocket client to <code>/ws</code>.</p>"
)


def describe(doc: RdisDocument) -> dict:
    """The payload of a ``list`` reply: interfaces and mapped concepts."""
    interfaces = [
        {
            "name": iface.name,
            "inputs": [p.name for p in iface.inputs],
            "returns": list(iface.returns),
        }
        for iface in doc.interfaces
    ]
    concepts = []
    for mapping in doc.mappings:
        spec = CONCEPTS[mapping.concept]
        entry: dict[str, Any] = {
            "name": mapping.concept,
            "interface": mapping.interface,
            "kind": spec.kind,
            "fields": list(spec.fields),
            "args": None,
        }
        if spec.kind == "command":
            # which interface input each concept field feeds, when the
            # binding is a bare rename (the usual case)
            args = {}
            for iface_input, bexpr in mapping.bindings.items():
                if isinstance(bexpr.ast, Name) and bexpr.ast.ident in spec.fields:
                    args[bexpr.ast.ident] = iface_input
            if set(args) == set(spec.fields):
                entry["args"] = args
        concepts.append(entry)
    return {"interfaces": interfaces, "concepts": concepts}


class _ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _field(msg: dict, name: str, kind, where: str):
    value = msg.get(name)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise _ProtocolError("bad-message", f"{where} requires {name!r}")
    return value


class _Client:
    def __init__(self, conn: ServerConnection):
        self.conn = conn
        self.send_lock = threading.Lock()
        self.subs_lock = threading.Lock()
        self.subs: dict[str, Any] = {}

    def send(self, payload: dict) -> None:
        text = json.dumps(payload)
        with self.send_lock:
            self.conn.send(text)

    def cancel_subs(self) -> None:
        with self.subs_lock:
            subs, self.subs = dict(self.subs), {}
        for sub in subs.values():
            sub.cancel()


class BridgeServer:
    def __init__(self, handle: RuntimeHandle, port: int, host: str, ui_dir):
        self._handle = handle
        self._canonical = canonicalize(handle.document)
        self._description = describe(handle.document)
        self._ui_dir = pathlib.Path(ui_dir).resolve() if ui_dir else None
        self._clients: set[_Client] = set()
        self._clients_lock = threading.Lock()
        self._shutdown_lock = threading.Lock()
        self._down = False
        self._server = ws_serve(
            self._handler, host, port, process_request=self._process_request
        )
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="rdis-bridge", daemon=True
        )
        self._thread.start()

    @property
    def port(self) -> int:
        return self._server.socket.getsockname()[1]

    def shutdown(self) -> None:
        with self._shutdown_lock:
            if self._down:
                return
            self._down = True
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.cancel_subs()
            try:
                client.conn.close()
            except Exception:
                pass
        self._server.shutdown()
        self._thread.join(timeout=5.0)

    def __enter__(self) -> "BridgeServer":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # -- plain http -----------------------------------------------------------

    def _process_request(self, conn: ServerConnection, request) -> Response | None:
        if "Upgrade" in request.headers.get("Connection", "") or request.path == "/ws":
            return None
        if request.path == "/healthz":
            return conn.respond(http.HTTPStatus.OK, "ok")
        return self._serve_static(conn, request.path)

    def _serve_static(self, conn: ServerConnection, path: str) -> Response:
        if self._ui_dir is None:
            if path == "/":
                response = conn.respond(http.HTTPStatus.OK, _PLACEHOLDER_PAGE)
                response.headers["Content-Type"] = "text/html; charset=utf-8"
                return response
            return conn.respond(http.HTTPStatus.NOT_FOUND, "not found")
        rel = path.lstrip("/") or "index.html"
        target = (self._ui_dir / rel).resolve()
        if not target.is_relative_to(self._ui_dir) or not target.is_file():
            return conn.respond(http.HTTPStatus.NOT_FOUND, "not found")
        body = target.read_bytes()
        headers = Headers(
            {
                "Content-Type": _CONTENT_TYPES.get(target.suffix, "application/octet-stream"),
                "Content-Length": str(len(body)),
                "Connection": "close",
            }
        )
        return Response(200, "OK", headers, body)

    # -- websocket protocol ------------------------------------------------------

    def _handler(self, conn: ServerConnection) -> None:
        client = _Client(conn)
        with self._clients_lock:
            self._clients.add(client)
        try:
            for message in conn:
                self._dispatch(client, message)
        except ConnectionClosed:
            pass
        finally:
            with self._clients_lock:
                self._clients.discard(client)
            client.cancel_subs()

    def _dispatch(self, client: _Client, message) -> None:
        msg_id = None
        try:
            try:
                msg = json.loads(message)
            except (ValueError, TypeError):
                raise _ProtocolError("bad-json", "frame is not valid JSON") from None
            if not isinstance(msg, dict):
                raise _ProtocolError("bad-json", "frame must be a JSON object")
            raw_id = msg.get("id")
            msg_id = raw_id if isinstance(raw_id, str) else None
            kind = msg.get("type")
            if kind == "rdis":
                client.send({"type": "rdis", "document": self._canonical})
            elif kind == "list":
                client.send({"type": "list", **self._description})
            elif kind == "call":
                self._handle_call(client, msg)
            elif kind == "subscribe":
                self._handle_subscribe(client, msg)
            elif kind == "unsubscribe":
                self._handle_unsubscribe(client, msg)
            else:
                raise _ProtocolError("bad-type", f"unknown message type {kind!r}")
        except _ProtocolError as exc:
            self._send_error(client, msg_id, exc.code, str(exc))
        except ConnectionClosed:
            raise
        except Exception as exc:  # never kill the connection over one frame
            logger.exception("bridge: error handling frame")
            self._send_error(client, msg_id, "internal-error", str(exc))

    def _send_error(self, client: _Client, msg_id, code: str, message: str) -> None:
        payload = {"type": "error", "code": code, "message": message}
        if msg_id is not None:
            payload["id"] = msg_id
        try:
            client.send(payload)
        except ConnectionClosed:
            pass

    def _handle_call(self, client: _Client, msg: dict) -> None:
        msg_id = _field(msg, "id", str, "call")
        iface = _field(msg, "interface", str, "call")
        args = msg.get("args", {})
        if not isinstance(args, dict) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in args.values()
        ):
            raise _ProtocolError("bad-args", "args must map names to numbers")
        try:
            values = self._handle.call_interface(iface, args)
        except UnknownInterfaceError as exc:
            raise _ProtocolError("unknown-interface", str(exc)) from None
        except InterfaceArgumentError as exc:
            raise _ProtocolError("bad-args", str(exc)) from None
        except (RdisRuntimeError, ExprError) as exc:
            raise _ProtocolError("call-failed", str(exc)) from None
        client.send({"type": "result", "id": msg_id, "values": values})

    def _handle_subscribe(self, client: _Client, msg: dict) -> None:
        msg_id = _field(msg, "id", str, "subscribe")
        concept = _field(msg, "concept", str, "subscribe")
        period = _field(msg, "period_ms", int, "subscribe")
        period = min(max(period, MIN_PERIOD_MS), MAX_PERIOD_MS)
        with client.subs_lock:
            if msg_id in client.subs:
                raise _ProtocolError("duplicate-id", f"subscription {msg_id!r} is active")
        try:
            sub = self._handle.subscribe(concept, period)
        except UnknownConceptError as exc:
            raise _ProtocolError("unknown-concept", str(exc)) from None
        with client.subs_lock:
            client.subs[msg_id] = sub
        threading.Thread(
            target=self._pump, args=(client, msg_id, sub), name=f"rdis-sub-{msg_id}", daemon=True
        ).start()

    def _pump(self, client: _Client, msg_id: str, sub) -> None:
        try:
            for snap in sub:
                client.send(
                    {
                        "type": "state",
                        "id": msg_id,
                        "values": snap.values,
                        "age_ms": round(snap.age_ms, 3),
                    }
                )
        except ConnectionClosed:
            sub.cancel()
        finally:
            with client.subs_lock:
                client.subs.pop(msg_id, None)

    def _handle_unsubscribe(self, client: _Client, msg: dict) -> None:
        msg_id = _field(msg, "id", str, "unsubscribe")
        with client.subs_lock:
            sub = client.subs.pop(msg_id, None)
        if sub is None:
            raise _ProtocolError("unknown-subscription", f"no active subscription {msg_id!r}")
        sub.cancel()


def serve(handle: RuntimeHandle, port: int, host: str = "127.0.0.1", ui_dir=None) -> BridgeServer:
    """Start the bridge for a running runtime handle; port 0 picks one."""
    return BridgeServer(handle, port, host, ui_dir)
