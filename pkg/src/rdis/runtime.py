"""Interpret a validated document against live transports.

One service loop (thread) per connection owns that connection's transport:
every frame on the wire is written by its loop, so on-connect, keepalive,
periodic, and adhoc traffic serialize cleanly. Adhoc interface calls arrive
over a queue and may be issued from any thread; when keepalive, periodic,
and adhoc work are simultaneously due the loop dispatches keepalive first,
then periodics, then queued calls in FIFO order.

Replies are matched in order: a primitive's reply is the next inbound frame
whose command or prefix equals its read format's; frames with any other
command are logged and dropped. Both supported protocols are strictly
in-order, so no correlation ids are needed.

State variables live in a :class:`StateStore`; snapshot reads are atomic.
When a document maps both `position2d.command_velocity` and
`position2d.odometry` through bare-name bindings, the runtime dead-reckons a
pose by integrating commanded twists into the mapped state variables, which
keeps odometry subscriptions live without firmware-side pose support.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, NamedTuple

from . import codec
from .expr import Name, evaluate, free_vars, round_half_away
from .kinematics import Pose, Twist, integrate_pose
from .model import (
    CONCEPTS,
    AbstractMapping,
    Connection,
    Interface,
    PositionalFormat,
    Primitive,
    RdisDocument,
    SerialTransport,
)
from .parser import validate

logger = logging.getLogger(__name__)

DEFAULT_REPLY_TIMEOUT_MS = 500

_IDLE_WAIT_S = 0.25
_RECKONER_WAIT_S = 0.02


class RdisRuntimeError(Exception):
    pass


class TransportError(RdisRuntimeError):
    pass


class ReplyTimeout(RdisRuntimeError):
    pass


class RuntimeClosedError(RdisRuntimeError):
    pass


class UnknownInterfaceError(RdisRuntimeError):
    pass


class InterfaceArgumentError(RdisRuntimeError):
    pass


class UnknownStateVarError(RdisRuntimeError):
    pass


class UnknownConceptError(RdisRuntimeError):
    pass


class Transport:
    """Byte stream endpoint. Implementations must be safe to close twice."""

    def write(self, data: bytes) -> None:
        raise NotImplementedError

    def read(self, max_bytes: int, timeout_s: float) -> bytes:
        """Return whatever arrived (b"" on timeout); raise TransportError when closed."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class TcpTransport(Transport):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._closed = False

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"write failed: {exc}") from exc

    def read(self, max_bytes: int, timeout_s: float) -> bytes:
        self._sock.settimeout(max(timeout_s, 0.001))
        try:
            data = self._sock.recv(max_bytes)
        except (TimeoutError, socket.timeout):
            return b""
        except OSError as exc:
            raise TransportError(f"read failed: {exc}") from exc
        if not data:
            raise TransportError("connection closed by peer")
        return data

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class TcpTransportFactory:
    """Opens tcp transports; serial descriptors are refused at start time.

    ``overrides`` remaps connection ids to (host, port), which lets tests and
    the CLI point a document at an emulator on an ephemeral port.
    """

    def __init__(self, overrides: dict[str, tuple[str, int]] | None = None, connect_timeout_s: float = 5.0):
        self._overrides = dict(overrides or {})
        self._connect_timeout_s = connect_timeout_s

    def open(self, conn: Connection) -> Transport:
        if isinstance(conn.transport, SerialTransport):
            raise TransportError(
                f"connection {conn.id!r}: serial transport not implemented (tcp only)"
            )
        host, port = self._overrides.get(conn.id, (conn.transport.host, conn.transport.port))
        try:
            sock = socket.create_connection((host, port), timeout=self._connect_timeout_s)
        except OSError as exc:
            raise TransportError(f"connection {conn.id!r}: cannot reach {host}:{port}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return TcpTransport(sock)


class StateStore:
    """Named numeric values with update timestamps; snapshots are atomic."""

    def __init__(self, doc: RdisDocument):
        now = time.monotonic()
        self._lock = threading.Lock()
        self._values: dict[str, tuple[float, float]] = {
            sv.name: (float(sv.initial), now) for sv in doc.state_vars
        }

    def set(self, name: str, value: float) -> None:
        with self._lock:
            self._values[name] = (float(value), time.monotonic())

    def set_many(self, values: dict[str, float]) -> None:
        now = time.monotonic()
        with self._lock:
            for name, value in values.items():
                self._values[name] = (float(value), now)

    def snapshot(self) -> dict[str, tuple[float, float]]:
        with self._lock:
            return dict(self._values)

    def current(self) -> dict[str, float]:
        with self._lock:
            return {name: value for name, (value, _) in self._values.items()}

    def __contains__(self, name: str) -> bool:
        with self._lock:
            return name in self._values


class _DeadReckoner:
    """Integrates the last commanded twist into the pose state variables."""

    def __init__(self, store: StateStore, targets: dict[str, str]):
        self._store = store
        self._targets = targets  # concept field -> state var name
        current = store.current()
        self._lock = threading.Lock()
        self._pose = Pose(
            current[targets["x_m"]], current[targets["y_m"]], current[targets["theta_rad"]]
        )
        self._twist = Twist(0.0, 0.0)
        self._last = time.monotonic()

    def _advance_locked(self, now: float) -> None:
        dt = now - self._last
        if dt <= 0:
            return
        self._pose = integrate_pose(self._pose, self._twist, dt)
        self._last = now

    def tick(self) -> None:
        now = time.monotonic()
        with self._lock:
            self._advance_locked(now)
            pose = self._pose
        self._store.set_many(
            {
                self._targets["x_m"]: pose.x_m,
                self._targets["y_m"]: pose.y_m,
                self._targets["theta_rad"]: pose.theta_rad,
            }
        )

    def set_twist(self, linear_mps: float, angular_radps: float) -> None:
        with self._lock:
            self._advance_locked(time.monotonic())
            self._twist = Twist(linear_mps, angular_radps)


@dataclass
class _AdhocRequest:
    interface: Interface
    args: dict[str, float]
    done: threading.Event = field(default_factory=threading.Event)
    result: dict[str, float] | None = None
    error: Exception | None = None


class _ConnectionLoop(threading.Thread):
    def __init__(
        self,
        handle: "RuntimeHandle",
        conn: Connection,
        transport: Transport,
        reply_timeout_s: float,
    ):
        super().__init__(name=f"rdis-loop-{conn.id}", daemon=True)
        self._handle = handle
        self._conn = conn
        self._transport = transport
        self._reply_timeout_s = reply_timeout_s
        self.requests: "queue.Queue[_AdhocRequest | None]" = queue.Queue()
        self.stop_event = threading.Event()
        self.ready = threading.Event()
        self.startup_error: Exception | None = None
        self.fatal_error: Exception | None = None
        self._rxbuf = b""

    # -- wire helpers ------------------------------------------------------

    def _execute_primitive(self, prim: Primitive, args: dict[str, float]) -> dict[str, float]:
        """Encode and write one frame; await, decode, and route the reply."""
        fmt = prim.write_format
        names = (
            [f.name for f in fmt.fields] if isinstance(fmt, PositionalFormat) else list(fmt.fields)
        )
        # integer coercion at the codec boundary is round(), half away from zero
        values = {name: int(round_half_away(args.get(name, 0.0))) for name in names}
        self._transport.write(codec.encode(prim.write_format, values))
        if prim.read_format is None:
            return {}
        decoded = self._await_reply(prim)
        returned: dict[str, float] = {}
        stored: dict[str, float] = {}
        for out in prim.outputs:
            value = float(decoded[out.field])
            if out.to_return:
                returned[out.field] = value
            else:
                stored[out.state_var] = value
        if stored:
            self._handle.state_store.set_many(stored)
        return returned

    def _await_reply(self, prim: Primitive) -> dict[str, int]:
        fmt = prim.read_format
        deadline = time.monotonic() + self._reply_timeout_s
        while True:
            frames, self._rxbuf = codec.frame_scan(fmt, self._rxbuf)
            for i, frame in enumerate(frames):
                try:
                    decoded = codec.decode(fmt, frame)
                except codec.CommandMismatch:
                    logger.debug("%s: dropping unmatched frame %r", prim.name, frame)
                    continue
                self._rxbuf = b"".join(frames[i + 1 :]) + self._rxbuf
                return decoded
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ReplyTimeout(
                    f"primitive {prim.name!r}: no reply within {self._reply_timeout_s * 1000:.0f} ms"
                )
            if self.stop_event.is_set():
                raise RuntimeClosedError("runtime stopped while awaiting a reply")
            self._rxbuf += self._transport.read(4096, min(remaining, 0.1))

    # -- request processing ------------------------------------------------

    def _process_request(self, req: _AdhocRequest) -> None:
        try:
            req.result = self._run_interface(req.interface, req.args)
            self._handle._record_command(req.interface.name, req.args)
        except Exception as exc:  # report to the caller, keep the loop alive
            req.error = exc
            if isinstance(exc, TransportError):
                raise
        finally:
            req.done.set()

    def _run_interface(self, iface: Interface, args: dict[str, float]) -> dict[str, float]:
        constants = self._handle.document.constants
        env = {**constants, **self._handle.state_store.current(), **args}
        call_outputs: dict[str, float] = {}
        for call in iface.calls:
            prim = self._handle.document.primitive(call.primitive)
            scope = {**env, **call_outputs}
            prim_args = {name: evaluate(bexpr.ast, scope) for name, bexpr in call.args.items()}
            call_outputs.update(self._execute_primitive(prim, prim_args))
        ret_env = {**constants, **self._handle.state_store.current(), **call_outputs}
        return {name: evaluate(bexpr.ast, ret_env) for name, bexpr in iface.returns.items()}

    # -- the single service loop -------------------------------------------

    def run(self) -> None:
        doc = self._handle.document
        try:
            try:
                for name in self._conn.on_connect:
                    self._execute_primitive(doc.primitive(name), {})
            except Exception as exc:
                self.startup_error = exc
                return
            finally:
                self.ready.set()

            now = time.monotonic()
            periodic = [[now, p] for p in doc.primitives if p.connection == self._conn.id and not p.is_adhoc]
            keepalive = self._conn.keepalive
            ka_prim = doc.primitive(keepalive.primitive) if keepalive else None
            ka_due = now + keepalive.period_ms / 1000.0 if keepalive else None

            while not self.stop_event.is_set():
                self._handle._tick_reckoner()
                now = time.monotonic()

                if ka_due is not None and now >= ka_due:
                    try:
                        self._execute_primitive(ka_prim, {})
                    except (ReplyTimeout, codec.CodecError) as exc:
                        logger.warning("keepalive on %s failed: %s", self._conn.id, exc)
                    ka_due += keepalive.period_ms / 1000.0
                    if ka_due < now:
                        ka_due = now + keepalive.period_ms / 1000.0
                    continue

                slot = next((s for s in periodic if s[0] <= now), None)
                if slot is not None:
                    due, prim = slot
                    try:
                        self._execute_primitive(prim, {})
                    except (ReplyTimeout, codec.CodecError) as exc:
                        logger.warning("periodic %s failed: %s", prim.name, exc)
                    period_s = prim.period_ms / 1000.0
                    slot[0] = due + period_s
                    if slot[0] < now - period_s:
                        slot[0] = now + period_s  # drop missed cycles after a stall
                    continue

                dues = [s[0] for s in periodic]
                if ka_due is not None:
                    dues.append(ka_due)
                cap = _RECKONER_WAIT_S if self._handle._has_reckoner else _IDLE_WAIT_S
                wait = min([cap] + [max(d - now, 0.0) for d in dues]) if dues else cap
                try:
                    req = self.requests.get(timeout=max(wait, 0.001))
                except queue.Empty:
                    continue
                if req is None:
                    continue
                self._process_request(req)
        except RuntimeClosedError:
            pass  # stop() interrupted a reply wait
        except TransportError as exc:
            self.fatal_error = exc
            logger.error("connection %s lost: %s", self._conn.id, exc)
        finally:
            self._transport.close()
            self._drain_queue()

    def _drain_queue(self) -> None:
        while True:
            try:
                req = self.requests.get_nowait()
            except queue.Empty:
                return
            if req is not None:
                req.error = RuntimeClosedError("runtime stopped before the call completed")
                req.done.set()


class ConceptSnapshot(NamedTuple):
    values: dict[str, float]
    age_ms: float


class Subscription:
    """Periodic pull of a telemetry concept's values; iterate to consume."""

    def __init__(self, handle: "RuntimeHandle", mapping: AbstractMapping, period_ms: int):
        self._handle = handle
        self._mapping = mapping
        self._iface = handle.document.interface(mapping.interface)
        self._period_s = period_ms / 1000.0
        self._cancelled = threading.Event()
        self._next_due = time.monotonic() + self._period_s
        deps = set()
        state_names = {sv.name for sv in handle.document.state_vars}
        for bexpr in self._iface.returns.values():
            deps |= set(free_vars(bexpr.ast)) & state_names
        self._state_deps = deps

    def cancel(self) -> None:
        self._cancelled.set()

    @property
    def cancelled(self) -> bool:
        return self._cancelled.is_set()

    def _evaluate(self) -> ConceptSnapshot:
        constants = self._handle.document.constants
        snap = self._handle.state_store.snapshot()
        env = {**constants, **{name: value for name, (value, _) in snap.items()}}
        rets = {name: evaluate(bexpr.ast, env) for name, bexpr in self._iface.returns.items()}
        benv = {**constants, **rets}
        values = {
            field: evaluate(bexpr.ast, benv) for field, bexpr in self._mapping.bindings.items()
        }
        now = time.monotonic()
        age_ms = max(((now - snap[dep][1]) * 1000.0 for dep in self._state_deps), default=0.0)
        return ConceptSnapshot(values, age_ms)

    def __iter__(self) -> Iterator[ConceptSnapshot]:
        return self

    def __next__(self) -> ConceptSnapshot:
        while True:
            if self._cancelled.is_set() or self._handle.stopped:
                raise StopIteration
            now = time.monotonic()
            if now >= self._next_due:
                break
            if self._cancelled.wait(min(self._next_due - now, 0.05)):
                raise StopIteration
        self._next_due += self._period_s
        if self._next_due < time.monotonic() - self._period_s:
            self._next_due = time.monotonic() + self._period_s
        return self._evaluate()


class RuntimeHandle:
    """A running document: connection loops, state store, and dispatch."""

    def __init__(self, doc: RdisDocument, reply_timeout_ms: int):
        self.document = doc
        self.state_store = StateStore(doc)
        self._reply_timeout_s = reply_timeout_ms / 1000.0
        self._loops: dict[str, _ConnectionLoop] = {}
        self._subs: list[Subscription] = []
        self._subs_lock = threading.Lock()
        self._stopped = threading.Event()
        self._stop_lock = threading.Lock()
        self._reckoner: _DeadReckoner | None = None
        self._command_recovery: dict[str, str] | None = None  # iface input -> concept field
        self._command_interface: str | None = None
        self._setup_dead_reckoning()

    # -- dead reckoning ------------------------------------------------------

    def _setup_dead_reckoning(self) -> None:
        doc = self.document
        try:
            cmd = doc.mapping("position2d.command_velocity")
            odo = doc.mapping("position2d.odometry")
        except KeyError:
            return
        state_names = {sv.name for sv in doc.state_vars}
        iface = doc.interface(odo.interface)
        targets = {}
        for concept_field, bexpr in odo.bindings.items():
            if not isinstance(bexpr.ast, Name):
                return
            ret = iface.returns.get(bexpr.ast.ident)
            if ret is None or not isinstance(ret.ast, Name) or ret.ast.ident not in state_names:
                return
            targets[concept_field] = ret.ast.ident
        recovery = {}
        cmd_fields = set(CONCEPTS["position2d.command_velocity"].fields)
        for iface_input, bexpr in cmd.bindings.items():
            if isinstance(bexpr.ast, Name) and bexpr.ast.ident in cmd_fields:
                recovery[iface_input] = bexpr.ast.ident
        if set(recovery.values()) != cmd_fields:
            return
        self._reckoner = _DeadReckoner(self.state_store, targets)
        self._command_recovery = recovery
        self._command_interface = cmd.interface

    @property
    def _has_reckoner(self) -> bool:
        return self._reckoner is not None

    def _tick_reckoner(self) -> None:
        if self._reckoner is not None:
            self._reckoner.tick()

    def _record_command(self, iface_name: str, args: dict[str, float]) -> None:
        if self._reckoner is None or iface_name != self._command_interface:
            return
        fields = {
            concept_field: args[iface_input]
            for iface_input, concept_field in self._command_recovery.items()
            if iface_input in args
        }
        if set(fields) == {"linear_mps", "angular_radps"}:
            self._reckoner.set_twist(fields["linear_mps"], fields["angular_radps"])

    # -- public operations ----------------------------------------------------

    @property
    def stopped(self) -> bool:
        return self._stopped.is_set()

    @property
    def connection_states(self) -> dict[str, str]:
        out = {}
        for conn_id, loop in self._loops.items():
            if loop.fatal_error is not None:
                out[conn_id] = "failed"
            elif not loop.is_alive():
                out[conn_id] = "stopped"
            else:
                out[conn_id] = "running"
        return out

    def call_interface(self, name: str, args: dict[str, float] | None = None) -> dict[str, float]:
        if self.stopped:
            raise RuntimeClosedError("runtime handle is closed")
        args = {k: float(v) for k, v in (args or {}).items()}
        try:
            iface = self.document.interface(name)
        except KeyError:
            raise UnknownInterfaceError(f"unknown interface {name!r}") from None
        expected = {p.name for p in iface.inputs}
        missing = expected - set(args)
        if missing:
            raise InterfaceArgumentError(f"missing argument(s) {sorted(missing)} for {name!r}")
        extra = set(args) - expected
        if extra:
            raise InterfaceArgumentError(f"unexpected argument(s) {sorted(extra)} for {name!r}")

        if not iface.calls:
            # no device traffic: evaluate over a state snapshot in this thread
            constants = self.document.constants
            env = {**constants, **self.state_store.current()}
            result = {rname: evaluate(b.ast, env) for rname, b in iface.returns.items()}
            self._record_command(name, args)
            return result

        conn_id = self.document.primitive(iface.calls[0].primitive).connection
        loop = self._loops[conn_id]
        if not loop.is_alive():
            raise RuntimeClosedError(f"connection {conn_id!r} is not running")
        req = _AdhocRequest(iface, args)
        loop.requests.put(req)
        reads = sum(
            1 for c in iface.calls if self.document.primitive(c.primitive).read_format is not None
        )
        budget = 5.0 + self._reply_timeout_s * (reads + 1)
        if not req.done.wait(budget):
            raise ReplyTimeout(f"interface {name!r} did not complete within {budget:.1f} s")
        if req.error is not None:
            raise req.error
        return req.result

    def read_state(self, names: list[str]) -> dict[str, tuple[float, float]]:
        """Consistent snapshot of ``names`` as name -> (value, age_ms)."""
        snap = self.state_store.snapshot()
        now = time.monotonic()
        out = {}
        for name in names:
            if name not in snap:
                raise UnknownStateVarError(f"unknown state variable {name!r}")
            value, ts = snap[name]
            out[name] = (value, (now - ts) * 1000.0)
        return out

    def subscribe(self, concept: str, period_ms: int) -> Subscription:
        try:
            mapping = self.document.mapping(concept)
        except KeyError:
            raise UnknownConceptError(f"no mapping declared for concept {concept!r}") from None
        spec = CONCEPTS.get(concept)
        if spec is None or spec.kind != "telemetry":
            raise UnknownConceptError(f"concept {concept!r} is not subscribable")
        if self.stopped:
            raise RuntimeClosedError("runtime handle is closed")
        sub = Subscription(self, mapping, period_ms)
        with self._subs_lock:
            self._subs.append(sub)
        return sub

    def stop(self) -> None:
        with self._stop_lock:
            if self._stopped.is_set():
                return
            self._stopped.set()
        with self._subs_lock:
            subs, self._subs = self._subs, []
        for sub in subs:
            sub.cancel()
        for loop in self._loops.values():
            loop.stop_event.set()
            loop.requests.put(None)
        for loop in self._loops.values():
            loop.join(timeout=5.0)

    def __enter__(self) -> "RuntimeHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


TransportFactory = Callable  # anything with .open(Connection) -> Transport


def start(
    doc: RdisDocument,
    factory,
    *,
    reply_timeout_ms: int = DEFAULT_REPLY_TIMEOUT_MS,
) -> RuntimeHandle:
    """Open every connection, run on-connect primitives, arm the schedules.

    On any transport open failure all already-opened connections are closed
    and the error is re-raised; on-connect failures likewise abort the start.
    """
    problems = [d for d in validate(doc) if d.severity == "error"]
    if problems:
        raise ValueError(f"document does not validate: {problems[0]}")

    handle = RuntimeHandle(doc, reply_timeout_ms)
    transports: dict[str, Transport] = {}
    try:
        for conn in doc.connections:
            transports[conn.id] = factory.open(conn)
    except Exception:
        for transport in transports.values():
            transport.close()
        raise

    for conn in doc.connections:
        handle._loops[conn.id] = _ConnectionLoop(
            handle, conn, transports[conn.id], reply_timeout_ms / 1000.0
        )
    for loop in handle._loops.values():
        loop.start()
    for loop in handle._loops.values():
        loop.ready.wait(timeout=10.0)
    failures = [loop.startup_error for loop in handle._loops.values() if loop.startup_error]
    if failures:
        handle.stop()
        raise failures[0]
    return handle
