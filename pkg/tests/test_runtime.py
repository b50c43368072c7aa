import json
import threading
import time

import pytest

from rdis.parser import parse_document
from rdis.runtime import (
    InterfaceArgumentError,
    ReplyTimeout,
    RuntimeClosedError,
    TcpTransportFactory,
    Transport,
    TransportError,
    UnknownConceptError,
    UnknownInterfaceError,
    UnknownStateVarError,
    start,
)
from rdis.sim import run_sim


class ScriptedTransport(Transport):
    """In-memory endpoint: records writes, feeds replies from a responder."""

    def __init__(self, responder=None):
        self.writes: list[bytes] = []
        self._responder = responder
        self._rx = b""
        self._cond = threading.Condition()
        self._closed = False

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._closed:
                raise TransportError("closed")
            self.writes.append(data)
            if self._responder is not None:
                reply = self._responder(data)
                if reply:
                    self._rx += reply
                    self._cond.notify_all()

    def feed(self, data: bytes) -> None:
        with self._cond:
            self._rx += data
            self._cond.notify_all()

    def read(self, max_bytes: int, timeout_s: float) -> bytes:
        with self._cond:
            if not self._rx:
                self._cond.wait(timeout_s)
            if self._closed:
                raise TransportError("closed")
            data, self._rx = self._rx[:max_bytes], self._rx[max_bytes:]
            return data

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class ScriptedFactory:
    def __init__(self, transports):
        self._transports = transports

    def open(self, conn):
        return self._transports[conn.id]


def finchling_responder(counts=(7, -3)):
    """Replies to encoder queries the way the positional firmware would."""

    def respond(frame: bytes):
        if frame[0] == ord("E"):
            reply = bytearray(8)
            reply[0] = ord("e")
            reply[1:3] = int(counts[0]).to_bytes(2, "big", signed=True)
            reply[3:5] = int(counts[1]).to_bytes(2, "big", signed=True)
            return bytes(reply)
        return None

    return respond


def make_doc(text: str):
    doc, diags = parse_document(text)
    assert doc is not None, [str(d) for d in diags]
    return doc


def minimal_doc(**extra):
    base = {
        "name": "testbot",
        "version": "1",
        "connections": [
            {"id": "main", "transport": {"kind": "tcp", "host": "127.0.0.1", "port": 9000}}
        ],
    }
    base.update(extra)
    return make_doc(json.dumps(base))


WRITE_ONLY_PERIODIC = {
    "primitives": [
        {
            "name": "beat",
            "connection": "main",
            "write_format": {"kind": "positional", "frame_len": 8, "command": "K", "fields": []},
        },
        {
            "name": "poll",
            "connection": "main",
            "frequency": {"periodic": {"period_ms": 80}},
            "write_format": {"kind": "positional", "frame_len": 8, "command": "E", "fields": []},
        },
    ],
}


def test_serial_transport_refused_at_start():
    doc = make_doc(
        """
        {
          "name": "serialbot",
          "version": "1",
          "connections": [{"id": "uart", "transport": {"kind": "serial", "device": "/dev/ttyUSB0", "baud": 57600}}]
        }
        """
    )
    with pytest.raises(TransportError, match="serial transport not implemented"):
        start(doc, TcpTransportFactory())


def test_unreachable_host_fails_start():
    doc = minimal_doc()
    with pytest.raises(TransportError):
        start(doc, TcpTransportFactory(overrides={"main": ("127.0.0.1", 9)}, connect_timeout_s=0.5))


def test_idle_document_starts_and_stops():
    transport = ScriptedTransport()
    handle = start(minimal_doc(), ScriptedFactory({"main": transport}))
    assert handle.connection_states == {"main": "running"}
    handle.stop()
    handle.stop()  # idempotent
    assert handle.stopped
    with pytest.raises(RuntimeClosedError):
        handle.call_interface("anything", {})


def test_on_connect_runs_before_periodic_traffic(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    time.sleep(0.35)
    handle.stop()
    assert len(transport.writes) >= 2
    assert transport.writes[0][0] == ord("K")  # on_connect keepAlive frame
    polls = [w for w in transport.writes if w[0] == ord("E")]
    assert polls, "periodic poll never fired"


def test_call_interface_encodes_like_the_codec(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        result = handle.call_interface("drive", {"linear": 0.2, "angular": 0.0})
        assert result == {}
        frames = [w for w in transport.writes if w[0] == ord("M")]
        assert len(frames) == 1
        # 0.2 m/s * 200 %/(m/s) = 40 on both wheels; hand-checked layout
        assert frames[0] == bytes.fromhex("4D28280000000000")
    finally:
        handle.stop()


def test_call_returns_and_stores_decoded_outputs(finchling_doc):
    transport = ScriptedTransport(finchling_responder(counts=(7, -3)))
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        result = handle.call_interface("getEncoders", {})
        assert result == {"left": 7.0, "right": -3.0}
        state = handle.read_state(["enc_left", "enc_right"])
        assert state["enc_left"][0] == 7.0
        assert state["enc_right"][0] == -3.0
    finally:
        handle.stop()


def test_unknown_interface_and_bad_args(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        with pytest.raises(UnknownInterfaceError):
            handle.call_interface("noSuch", {})
        with pytest.raises(InterfaceArgumentError):
            handle.call_interface("drive", {"linear": 0.1})
        with pytest.raises(InterfaceArgumentError):
            handle.call_interface("drive", {"linear": 0.1, "angular": 0, "warp": 9})
    finally:
        handle.stop()


def test_reply_timeout():
    doc = minimal_doc(
        state=[{"name": "v", "kind": "int", "initial": 0}],
        primitives=[
            {
                "name": "ask",
                "connection": "main",
                "write_format": {"kind": "positional", "frame_len": 8, "command": "Q", "fields": []},
                "read_format": {
                    "kind": "positional",
                    "frame_len": 8,
                    "command": "q",
                    "fields": [{"name": "v", "offset": 1, "encoding": "i8"}],
                },
                "outputs": [{"field": "v", "target": "return"}],
            }
        ],
        interfaces=[{"name": "ask", "calls": [{"primitive": "ask", "args": {}}], "returns": {"v": "v"}}],
    )
    transport = ScriptedTransport()  # never replies
    handle = start(doc, ScriptedFactory({"main": transport}), reply_timeout_ms=120)
    try:
        began = time.monotonic()
        with pytest.raises(ReplyTimeout):
            handle.call_interface("ask", {})
        assert time.monotonic() - began < 2.0
    finally:
        handle.stop()


def test_unmatched_frames_are_dropped(finchling_doc):
    def respond(frame):
        if frame[0] == ord("E"):
            noise = bytes.fromhex("7A00000000000000")  # command 'z': dropped
            reply = bytearray(8)
            reply[0] = ord("e")
            reply[1:3] = (21).to_bytes(2, "big", signed=True)
            reply[3:5] = (22).to_bytes(2, "big", signed=True)
            return noise + bytes(reply)
        return None

    transport = ScriptedTransport(respond)
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        assert handle.call_interface("getEncoders", {}) == {"left": 21.0, "right": 22.0}
    finally:
        handle.stop()


def test_read_state_initial_values_and_ages():
    # no periodic has fired yet, so reads see the declared initials
    doc = minimal_doc(state=[{"name": "enc_left", "kind": "int", "initial": 42}])
    transport = ScriptedTransport()
    handle = start(doc, ScriptedFactory({"main": transport}))
    try:
        state = handle.read_state(["enc_left"])
        assert state["enc_left"][0] == 42.0
        assert 0 <= state["enc_left"][1] < 2000
        with pytest.raises(UnknownStateVarError):
            handle.read_state(["enc_left", "mystery"])
    finally:
        handle.stop()


def test_periodic_poll_keeps_state_fresh(finchling_doc):
    transport = ScriptedTransport(finchling_responder(counts=(11, 12)))
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        time.sleep(0.35)  # at least two 100 ms poll periods
        state = handle.read_state(["enc_left", "enc_right"])
        assert state["enc_left"][0] == 11.0
        assert state["enc_left"][1] <= 250
    finally:
        handle.stop()


def test_keepalive_dispatches_before_periodic():
    doc = minimal_doc(
        connections=[
            {
                "id": "main",
                "transport": {"kind": "tcp", "host": "127.0.0.1", "port": 9000},
                "keepalive": {"primitive": "beat", "period_ms": 80},
            }
        ],
        **WRITE_ONLY_PERIODIC,
    )
    transport = ScriptedTransport()
    handle = start(doc, ScriptedFactory({"main": transport}))
    time.sleep(0.30)
    handle.stop()
    cmds = [chr(w[0]) for w in transport.writes]
    # periodic fires immediately; afterwards each cycle has the keepalive first
    assert cmds[0] == "E"
    assert cmds[1] == "K"
    assert cmds[2] == "E"


def test_periodic_cadence():
    doc = minimal_doc(
        primitives=[
            {
                "name": "poll",
                "connection": "main",
                "frequency": {"periodic": {"period_ms": 50}},
                "write_format": {"kind": "positional", "frame_len": 8, "command": "E", "fields": []},
            }
        ]
    )
    transport = ScriptedTransport()
    handle = start(doc, ScriptedFactory({"main": transport}))
    time.sleep(2.0)
    handle.stop()
    polls = [w for w in transport.writes if w[0] == ord("E")]
    assert 38 <= len(polls) <= 42


def test_all_writes_are_whole_frames_under_concurrency(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    errors = []

    def hammer():
        try:
            for _ in range(10):
                handle.call_interface("drive", {"linear": 0.1, "angular": 0.0})
                handle.call_interface("getEncoders", {})
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    handle.stop()
    assert not errors
    assert all(len(w) == 8 for w in transport.writes)
    assert len([w for w in transport.writes if w[0] == ord("M")]) == 40


def test_subscribe_odometry_stream(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        with pytest.raises(UnknownConceptError):
            handle.subscribe("position2d.nope", 50)
        handle.call_interface("drive", {"linear": 0.2, "angular": 0.0})
        sub = handle.subscribe("position2d.odometry", 50)
        snaps = []
        began = time.monotonic()
        for snap in sub:
            snaps.append(snap)
            if len(snaps) == 4:
                sub.cancel()
        elapsed = time.monotonic() - began
        assert 0.15 <= elapsed < 1.5
        assert set(snaps[0].values) == {"x_m", "y_m", "theta_rad"}
        assert snaps[-1].values["x_m"] > snaps[0].values["x_m"]
        assert snaps[-1].age_ms < 200
        # cancelled stream stays ended
        assert list(sub) == []
    finally:
        handle.stop()


def test_dead_reckoning_tracks_commanded_twist(finchling_doc):
    transport = ScriptedTransport(finchling_responder())
    handle = start(finchling_doc, ScriptedFactory({"main": transport}))
    try:
        handle.call_interface("drive", {"linear": 0.2, "angular": 0.0})
        t0 = time.monotonic()
        time.sleep(0.5)
        handle.call_interface("stop", {})
        elapsed = time.monotonic() - t0
        time.sleep(0.05)
        state = handle.read_state(["x_m", "y_m", "theta_rad"])
        assert state["x_m"][0] == pytest.approx(0.2 * elapsed, rel=0.15)
        assert abs(state["y_m"][0]) < 1e-9
    finally:
        handle.stop()


def test_stop_while_call_pending():
    doc = minimal_doc(
        primitives=[
            {
                "name": "ask",
                "connection": "main",
                "write_format": {"kind": "positional", "frame_len": 8, "command": "Q", "fields": []},
                "read_format": {"kind": "positional", "frame_len": 8, "command": "q", "fields": []},
            }
        ],
        interfaces=[{"name": "ask", "calls": [{"primitive": "ask", "args": {}}]}],
    )
    transport = ScriptedTransport()  # never replies: the call hangs until stop
    handle = start(doc, ScriptedFactory({"main": transport}), reply_timeout_ms=5000)
    outcome = {}

    def call():
        try:
            handle.call_interface("ask", {})
            outcome["result"] = "ok"
        except Exception as exc:
            outcome["error"] = exc

    t = threading.Thread(target=call)
    t.start()
    time.sleep(0.2)
    handle.stop()
    t.join(timeout=3.0)
    assert isinstance(outcome.get("error"), RuntimeClosedError)


def test_runtime_against_live_sim_keepalive(koalette_doc):
    with run_sim("koalette", keepalive_timeout_ms=600) as sim:
        factory = TcpTransportFactory(overrides={"main": ("127.0.0.1", sim.control_port)})
        handle = start(koalette_doc, factory)
        try:
            time.sleep(1.5)  # keepalive period is 500 ms; watchdog would fire at 600 ms without it
            state = sim.snapshot()
            assert state.safety_stops == 0
            assert not state.safety_stopped
            result = handle.call_interface("drive", {"linear": 0.2, "angular": 0.0})
            assert result == {}
            time.sleep(0.1)
            assert sim.snapshot().wheels[0] == pytest.approx(0.19996, abs=1e-4)
        finally:
            handle.stop()
