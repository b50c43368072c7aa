"""Emulated robot firmwares served over TCP.

Two profiles ship, one per wire-format family. Both expose differential
drive physics (100 Hz tick, exact-arc pose integration, encoder tick
accumulation) and a keepalive watchdog that zeroes the wheels when no valid
frame arrives within the timeout.

finchling -- positional frames, 8 bytes each way, command byte at offset 0:

    'M'  set motors: left i8@1, right i8@2, percent of max speed
         (-100..100, clamped), bytes 3..7 zero. No reply.
    'K'  keepalive: zero payload. No reply.
    'E'  encoder query: no payload. Reply 'e': left i16be@1, right i16be@3
         (ticks, wrapping), bytes 5..7 zero.

koalette -- delimited ASCII lines, comma separator, newline terminator:

    "D,<left>,<right>\n"  set wheel speed in ticks/s. Reply "d\n".
    "E\n"                 encoder query. Reply "e,<left>,<right>\n".
    "K\n"                 keepalive. Reply "k\n".

The wire handling here is written against the byte layout directly, not via
:mod:`rdis.codec`, so tests that cross-check the two are meaningful.

A second TCP port answers inspection queries: send ``?\n`` and read back one
JSON line with the pose, wheel command, encoder counts, safety state, and
the log of received frames (hex for positional profiles, text otherwise).
One control client is served at a time; inspection clients are unlimited.
"""

from __future__ import annotations

import json
import logging
import math
import re
import socket
import threading
import time
from dataclasses import dataclass, replace

from .kinematics import Pose, Twist, integrate_pose

logger = logging.getLogger(__name__)

_TICK_S = 0.01  # 100 Hz physics
_LOG_CAP = 100_000
_INT_TOKEN = re.compile(rb"^-?[0-9]+$")


@dataclass(frozen=True)
class SimPhysics:
    wheel_track_m: float
    ticks_per_meter: float
    max_wheel_mps: float


@dataclass(frozen=True)
class SimProfile:
    id: str
    framing: str  # "positional" | "delimited"
    frame_len: int
    physics: SimPhysics
    keepalive_timeout_ms: int = 2000


FINCHLING = SimProfile(
    id="finchling",
    framing="positional",
    frame_len=8,
    physics=SimPhysics(wheel_track_m=0.1, ticks_per_meter=1000.0, max_wheel_mps=0.5),
)

KOALETTE = SimProfile(
    id="koalette",
    framing="delimited",
    frame_len=0,
    physics=SimPhysics(wheel_track_m=0.3, ticks_per_meter=5882.0, max_wheel_mps=1.0),
)

PROFILES = {p.id: p for p in (FINCHLING, KOALETTE)}


def wrap_i16(n: int) -> int:
    """Wrap an unbounded tick count into the signed 16-bit reply range."""
    return ((n + 0x8000) % 0x10000) - 0x8000


@dataclass(frozen=True)
class SimState:
    pose: Pose
    wheels: tuple[float, float]
    encoders: tuple[int, int]
    safety_stopped: bool
    safety_stops: int
    frames_received: int
    malformed_frames: int
    frames: tuple[str, ...]


class SimError(Exception):
    pass


class DeviceSim:
    """One emulated device; see :func:`run_sim` for the usual entry point."""

    def __init__(
        self,
        profile: SimProfile,
        control_port: int = 0,
        inspect_port: int = 0,
    ):
        self.profile = profile
        self._requested_ports = (control_port, inspect_port)
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._control_listener: socket.socket | None = None
        self._inspect_listener: socket.socket | None = None
        self._active_conns: set[socket.socket] = set()

        now = time.monotonic()
        self._pose = Pose()
        self._wheels = (0.0, 0.0)
        self._enc = [0.0, 0.0]
        self._safety_stopped = False
        self._safety_stops = 0
        self._last_valid_rx = now
        self._frames: list[str] = []
        self._frames_received = 0
        self._malformed = 0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "DeviceSim":
        control_port, inspect_port = self._requested_ports
        try:
            self._control_listener = self._listen(control_port, backlog=1)
            self._inspect_listener = self._listen(inspect_port, backlog=8)
        except OSError as exc:
            self.stop()
            raise SimError(f"cannot bind sim ports: {exc}") from exc
        for target in (self._physics_loop, self._control_loop, self._inspect_loop):
            t = threading.Thread(target=target, name=f"sim-{self.profile.id}-{target.__name__}", daemon=True)
            t.start()
            self._threads.append(t)
        return self

    @staticmethod
    def _listen(port: int, backlog: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(("127.0.0.1", port))
        sock.listen(backlog)
        sock.settimeout(0.2)
        return sock

    @property
    def control_port(self) -> int:
        return self._control_listener.getsockname()[1]

    @property
    def inspect_port(self) -> int:
        return self._inspect_listener.getsockname()[1]

    def stop(self) -> None:
        self._stop.set()
        for listener in (self._control_listener, self._inspect_listener):
            if listener is not None:
                try:
                    listener.close()
                except OSError:
                    pass
        with self._lock:
            conns = list(self._active_conns)
        for conn in conns:
            try:
                conn.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self) -> "DeviceSim":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- state ----------------------------------------------------------------

    def snapshot(self) -> SimState:
        with self._lock:
            return SimState(
                pose=self._pose,
                wheels=self._wheels,
                encoders=(math.floor(self._enc[0]), math.floor(self._enc[1])),
                safety_stopped=self._safety_stopped,
                safety_stops=self._safety_stops,
                frames_received=self._frames_received,
                malformed_frames=self._malformed,
                frames=tuple(self._frames),
            )

    def snapshot_json(self) -> str:
        s = self.snapshot()
        return json.dumps(
            {
                "pose": {"x_m": s.pose.x_m, "y_m": s.pose.y_m, "theta_rad": s.pose.theta_rad},
                "wheels": {"left_mps": s.wheels[0], "right_mps": s.wheels[1]},
                "encoders": {"left": s.encoders[0], "right": s.encoders[1]},
                "safety_stopped": s.safety_stopped,
                "safety_stops": s.safety_stops,
                "frames_received": s.frames_received,
                "malformed_frames": s.malformed_frames,
                "frames": list(s.frames),
            }
        )

    # -- physics ----------------------------------------------------------------

    def _physics_loop(self) -> None:
        last = time.monotonic()
        timeout_s = self.profile.keepalive_timeout_ms / 1000.0
        while not self._stop.wait(_TICK_S):
            now = time.monotonic()
            dt = now - last
            last = now
            with self._lock:
                if not self._safety_stopped and now - self._last_valid_rx > timeout_s:
                    self._safety_stopped = True
                    self._safety_stops += 1
                    self._wheels = (0.0, 0.0)
                left, right = self._wheels
                twist = Twist((left + right) / 2.0, (right - left) / self.profile.physics.wheel_track_m)
                self._pose = integrate_pose(self._pose, twist, dt)
                tpm = self.profile.physics.ticks_per_meter
                self._enc[0] += left * tpm * dt
                self._enc[1] += right * tpm * dt

    # -- control protocol ---------------------------------------------------------

    def _mark_valid(self) -> None:
        self._last_valid_rx = time.monotonic()
        self._safety_stopped = False

    def _set_wheels(self, left_mps: float, right_mps: float) -> None:
        limit = self.profile.physics.max_wheel_mps
        self._wheels = (
            min(max(left_mps, -limit), limit),
            min(max(right_mps, -limit), limit),
        )

    def _log_frame(self, text: str) -> None:
        self._frames_received += 1
        if len(self._frames) < _LOG_CAP:
            self._frames.append(text)

    def _handle_positional(self, frame: bytes) -> bytes | None:
        with self._lock:
            self._log_frame(frame.hex())
            command = frame[0]
            if command == ord("M"):
                pct_l = int.from_bytes(frame[1:2], "big", signed=True)
                pct_r = int.from_bytes(frame[2:3], "big", signed=True)
                pct_l = min(max(pct_l, -100), 100)
                pct_r = min(max(pct_r, -100), 100)
                limit = self.profile.physics.max_wheel_mps
                self._set_wheels(pct_l / 100.0 * limit, pct_r / 100.0 * limit)
                self._mark_valid()
                return None
            if command == ord("K"):
                self._mark_valid()
                return None
            if command == ord("E"):
                self._mark_valid()
                reply = bytearray(8)
                reply[0] = ord("e")
                reply[1:3] = wrap_i16(math.floor(self._enc[0])).to_bytes(2, "big", signed=True)
                reply[3:5] = wrap_i16(math.floor(self._enc[1])).to_bytes(2, "big", signed=True)
                return bytes(reply)
            self._malformed += 1
            return None

    def _handle_delimited(self, line: bytes) -> bytes | None:
        with self._lock:
            self._log_frame(line[:-1].decode("latin-1"))
            tokens = line[:-1].split(b",")
            if tokens[0] == b"D" and len(tokens) == 3:
                if not (_INT_TOKEN.match(tokens[1]) and _INT_TOKEN.match(tokens[2])):
                    self._malformed += 1
                    return None
                tpm = self.profile.physics.ticks_per_meter
                self._set_wheels(int(tokens[1]) / tpm, int(tokens[2]) / tpm)
                self._mark_valid()
                return b"d\n"
            if tokens == [b"E"]:
                self._mark_valid()
                return b"e,%d,%d\n" % (math.floor(self._enc[0]), math.floor(self._enc[1]))
            if tokens == [b"K"]:
                self._mark_valid()
                return b"k\n"
            self._malformed += 1
            return None

    def _control_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._control_listener.accept()
            except (TimeoutError, socket.timeout):
                continue
            except OSError:
                return
            with self._lock:
                self._active_conns.add(conn)
            try:
                self._serve_control(conn)
            finally:
                with self._lock:
                    self._active_conns.discard(conn)
                try:
                    conn.close()
                except OSError:
                    pass

    def _serve_control(self, conn: socket.socket) -> None:
        conn.settimeout(0.2)
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        buffer = b""
        while not self._stop.is_set():
            try:
                data = conn.recv(4096)
            except (TimeoutError, socket.timeout):
                continue
            except OSError:
                return
            if not data:
                return
            buffer += data
            frames, buffer = self._split_frames(buffer)
            for frame in frames:
                try:
                    reply = (
                        self._handle_positional(frame)
                        if self.profile.framing == "positional"
                        else self._handle_delimited(frame)
                    )
                except Exception:  # a malformed frame must never kill the sim
                    logger.exception("sim %s: error handling frame %r", self.profile.id, frame)
                    with self._lock:
                        self._malformed += 1
                    continue
                if reply is not None:
                    try:
                        conn.sendall(reply)
                    except OSError:
                        return

    def _split_frames(self, buffer: bytes) -> tuple[list[bytes], bytes]:
        if self.profile.framing == "positional":
            n = len(buffer) // self.profile.frame_len
            size = self.profile.frame_len
            return [buffer[i * size : (i + 1) * size] for i in range(n)], buffer[n * size :]
        frames = []
        while True:
            idx = buffer.find(b"\n")
            if idx < 0:
                return frames, buffer
            frames.append(buffer[: idx + 1])
            buffer = buffer[idx + 1 :]

    # -- inspection ---------------------------------------------------------------

    def _inspect_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._inspect_listener.accept()
            except (TimeoutError, socket.timeout):
                continue
            except OSError:
                return
            t = threading.Thread(target=self._serve_inspect, args=(conn,), daemon=True)
            t.start()

    def _serve_inspect(self, conn: socket.socket) -> None:
        with self._lock:
            self._active_conns.add(conn)
        conn.settimeout(0.2)
        buffer = b""
        try:
            while not self._stop.is_set():
                try:
                    data = conn.recv(1024)
                except (TimeoutError, socket.timeout):
                    continue
                except OSError:
                    return
                if not data:
                    return
                buffer += data
                while b"\n" in buffer:
                    line, buffer = buffer.split(b"\n", 1)
                    if line.strip() == b"?":
                        reply = self.snapshot_json() + "\n"
                    else:
                        reply = json.dumps({"error": "bad-request"}) + "\n"
                    try:
                        conn.sendall(reply.encode("utf-8"))
                    except OSError:
                        return
        finally:
            with self._lock:
                self._active_conns.discard(conn)
            try:
                conn.close()
            except OSError:
                pass


def run_sim(
    profile: SimProfile | str,
    control_port: int = 0,
    inspect_port: int = 0,
    *,
    wheel_track_m: float | None = None,
    ticks_per_meter: float | None = None,
    max_wheel_mps: float | None = None,
    keepalive_timeout_ms: int | None = None,
) -> DeviceSim:
    """Start a simulator and return its handle; ports may be 0 (ephemeral)."""
    if isinstance(profile, str):
        try:
            profile = PROFILES[profile]
        except KeyError:
            raise SimError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    physics = profile.physics
    if wheel_track_m is not None:
        physics = replace(physics, wheel_track_m=wheel_track_m)
    if ticks_per_meter is not None:
        physics = replace(physics, ticks_per_meter=ticks_per_meter)
    if max_wheel_mps is not None:
        physics = replace(physics, max_wheel_mps=max_wheel_mps)
    profile = replace(profile, physics=physics)
    if keepalive_timeout_ms is not None:
        profile = replace(profile, keepalive_timeout_ms=keepalive_timeout_ms)
    return DeviceSim(profile, control_port, inspect_port).start()


def inspect_state(host: str, port: int, timeout_s: float = 2.0) -> dict:
    """Query a running sim's inspection port and return the decoded snapshot."""
    with socket.create_connection((host, port), timeout=timeout_s) as sock:
        sock.sendall(b"?\n")
        sock.settimeout(timeout_s)
        buffer = b""
        while b"\n" not in buffer:
            data = sock.recv(65536)
            if not data:
                raise SimError("inspection connection closed early")
            buffer += data
    return json.loads(buffer.split(b"\n", 1)[0].decode("utf-8"))
