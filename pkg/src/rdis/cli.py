"""Command-line entry point tying the toolchain together.

Subcommands: validate, inspect, generate, sim, run, drive, discover. Every
command is scriptable: results go to stdout, diagnostics to stderr, and the
exit code is 0 on success, 1 on a domain error, 2 on a usage error. Flag
defaults may be supplied via RDIS_-prefixed environment variables
(RDIS_CONNECT, RDIS_BRIDGE_PORT, ...).
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time

from . import bridge, codegen, runtime, sim
from .model import DelimitedFormat, RdisDocument
from .parser import document_to_json, load_document

PROG = "rdis"


def _env(name: str, fallback=None):
    return os.environ.get(f"RDIS_{name}", fallback)


def _fail(message: str, code: int = 1) -> int:
    print(f"{PROG}: {message}", file=sys.stderr)
    return code


def _load(path: str):
    """Returns (doc, diagnostics, exit_code); doc is None when unusable."""
    try:
        doc, diags = load_document(path)
    except OSError as exc:
        return None, [], _fail(f"cannot read {path}: {exc}", 2)
    return doc, diags, 0


# ---------------------------------------------------------------------------
# one function per subcommand


def cmd_validate(args) -> int:
    doc, diags, rc = _load(args.document)
    if rc:
        return rc
    for diag in diags:
        print(str(diag), file=sys.stderr)
    errors = sum(1 for d in diags if d.severity == "error")
    if errors or doc is None:
        print(f"{args.document}: {errors} error(s)")
        return 1
    print(f"{args.document}: ok")
    return 0


def _format_summary(fmt) -> str:
    if fmt is None:
        return "-"
    if isinstance(fmt, DelimitedFormat):
        fields = ",".join(fmt.fields)
        return f"delimited '{fmt.prefix}' [{fields}]"
    fields = ", ".join(f"{f.name}:{f.encoding}@{f.offset}" for f in fmt.fields)
    return f"positional 0x{fmt.command:02X} len {fmt.frame_len} [{fields}]"


def _summarize(doc: RdisDocument) -> str:
    lines = [f"{doc.name} v{doc.version} (rdis {doc.rdis_version})"]
    if doc.constants:
        pairs = " ".join(f"{k}={v}" for k, v in sorted(doc.constants.items()))
        lines.append(f"constants: {pairs}")
    for conn in doc.connections:
        t = conn.transport
        where = f"tcp {t.host}:{t.port}" if t.kind == "tcp" else f"serial {t.device}@{t.baud}"
        extras = [f"threading {conn.threading_model}"]
        if conn.keepalive:
            extras.append(f"keepalive {conn.keepalive.primitive} every {conn.keepalive.period_ms} ms")
        if conn.on_connect:
            extras.append("on_connect " + ",".join(conn.on_connect))
        lines.append(f"connection {conn.id}: {where}, " + ", ".join(extras))
    for prim in doc.primitives:
        freq = "adhoc" if prim.is_adhoc else f"periodic {prim.period_ms} ms"
        entry = f"primitive {prim.name} ({freq}, conn {prim.connection}): write {_format_summary(prim.write_format)}"
        if prim.read_format is not None:
            entry += f" -> read {_format_summary(prim.read_format)}"
        lines.append(entry)
    for iface in doc.interfaces:
        inputs = ", ".join(p.name for p in iface.inputs)
        entry = f"interface {iface.name}({inputs})"
        if iface.returns:
            entry += " -> " + ", ".join(iface.returns)
        lines.append(entry)
    for mapping in doc.mappings:
        lines.append(f"concept {mapping.concept} -> interface {mapping.interface}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    doc, diags, rc = _load(args.document)
    if rc:
        return rc
    if doc is None:
        for diag in diags:
            print(str(diag), file=sys.stderr)
        return 1
    if args.json:
        payload = {"document": document_to_json(doc), **bridge.describe(doc)}
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(_summarize(doc))
    return 0


def cmd_generate(args) -> int:
    doc, diags, rc = _load(args.document)
    if rc:
        return rc
    if doc is None:
        for diag in diags:
            print(str(diag), file=sys.stderr)
        return 1
    try:
        artifact = codegen.generate(doc, args.target)
        written = codegen.write_artifact(artifact, args.out, force=args.force)
    except (codegen.UnknownTargetError, codegen.UnsupportedFeatureError, FileExistsError) as exc:
        return _fail(str(exc))
    for path in written:
        print(path)
    return 0


def _wait_for_interrupt() -> None:
    done = threading.Event()
    for signum in (signal.SIGINT, signal.SIGTERM):
        signal.signal(signum, lambda *_: done.set())
    done.wait()


def cmd_sim(args) -> int:
    try:
        handle = sim.run_sim(
            args.profile,
            args.port,
            args.inspect_port,
            wheel_track_m=args.wheel_track,
            ticks_per_meter=args.ticks_per_meter,
            max_wheel_mps=args.max_wheel_mps,
            keepalive_timeout_ms=args.keepalive_timeout_ms,
        )
    except sim.SimError as exc:
        return _fail(str(exc))
    print(f"control={handle.control_port} inspect={handle.inspect_port}", flush=True)
    try:
        _wait_for_interrupt()
    finally:
        handle.stop()
    return 0


def _parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_run(args) -> int:
    doc, diags, rc = _load(args.document)
    if rc:
        return rc
    if doc is None:
        for diag in diags:
            print(str(diag), file=sys.stderr)
        return 1
    overrides = {}
    if args.connect:
        try:
            target = _parse_hostport(args.connect)
        except ValueError:
            return _fail(f"--connect expects host:port, got {args.connect!r}", 2)
        overrides = {conn.id: target for conn in doc.connections}
    try:
        handle = runtime.start(
            doc,
            runtime.TcpTransportFactory(overrides),
            reply_timeout_ms=args.reply_timeout_ms,
        )
    except (runtime.RdisRuntimeError, ValueError) as exc:
        return _fail(str(exc))
    try:
        server = bridge.serve(handle, args.bridge_port, host=args.bridge_host, ui_dir=args.ui_dir)
    except OSError as exc:
        handle.stop()
        return _fail(f"cannot bind bridge port {args.bridge_port}: {exc}")
    print(f"bridge ws://{args.bridge_host}:{server.port}/ws", flush=True)
    print(f"ui http://{args.bridge_host}:{server.port}/", flush=True)
    try:
        _wait_for_interrupt()
    finally:
        server.shutdown()
        handle.stop()
    return 0


def _ws_url(connect: str) -> str:
    if connect.startswith("ws://") or connect.startswith("wss://"):
        return connect
    return f"ws://{connect}/ws"


def cmd_drive(args) -> int:
    from websockets.sync.client import connect as ws_connect

    url = _ws_url(args.connect)
    try:
        ws = ws_connect(url, open_timeout=5)
    except OSError as exc:
        return _fail(f"cannot connect to {url}: {exc}")
    with ws:
        ws.send(json.dumps({"type": "list"}))
        listing = json.loads(ws.recv(timeout=5))
        concept = next(
            (c for c in listing.get("concepts", []) if c["name"] == "position2d.command_velocity"),
            None,
        )
        if concept is None or not concept.get("args"):
            return _fail("device declares no drivable position2d.command_velocity concept")
        arg_names = concept["args"]  # concept field -> interface input
        iface = concept["interface"]

        def send_twist(seq: int, linear: float, angular: float) -> bool:
            payload = {
                "type": "call",
                "id": f"drive-{seq}",
                "interface": iface,
                "args": {
                    arg_names["linear_mps"]: linear,
                    arg_names["angular_radps"]: angular,
                },
            }
            ws.send(json.dumps(payload))
            reply = json.loads(ws.recv(timeout=5))
            if reply.get("type") != "result":
                print(f"{PROG}: call failed: {reply.get('message')}", file=sys.stderr)
                return False
            return True

        sent = 0
        deadline = time.monotonic() + args.duration
        while time.monotonic() < deadline:
            if not send_twist(sent, args.linear, args.angular):
                return 1
            sent += 1
            time.sleep(min(0.1, max(deadline - time.monotonic(), 0)))
        if not send_twist(sent, 0.0, 0.0):
            return 1
        print(f"sent {sent} twist command(s) plus stop via {iface!r}")
    return 0


def cmd_discover(args) -> int:
    from websockets.sync.client import connect as ws_connect

    url = _ws_url(args.connect)
    try:
        ws = ws_connect(url, open_timeout=5)
    except OSError as exc:
        return _fail(f"cannot connect to {url}: {exc}")
    with ws:
        ws.send(json.dumps({"type": "rdis"}))
        reply = json.loads(ws.recv(timeout=5))
    if reply.get("type") != "rdis":
        return _fail(f"unexpected reply: {reply}")
    document = reply["document"]
    if args.summary:
        from .parser import parse_document

        doc, diags = parse_document(document)
        if doc is None:
            return _fail(f"device sent an invalid document: {diags[0]}")
        print(_summarize(doc))
    else:
        sys.stdout.write(document)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="toolchain for declarative robot device descriptions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a document")
    p.add_argument("document")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="summarize a document's connections, primitives, and concepts")
    p.add_argument("document")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("generate", help="generate driver source code")
    p.add_argument("document")
    p.add_argument("--target", default="c-cli")
    p.add_argument("--out", default=_env("OUT", "out"))
    p.add_argument("--force", action="store_true", help="overwrite existing output files")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sim", help="run an emulated device until interrupted")
    p.add_argument("--profile", default="finchling", choices=sorted(sim.PROFILES))
    p.add_argument("--port", type=int, default=0, help="control port (0 = ephemeral)")
    p.add_argument("--inspect-port", type=int, default=0)
    p.add_argument("--wheel-track", type=float, default=None)
    p.add_argument("--ticks-per-meter", type=float, default=None)
    p.add_argument("--max-wheel-mps", type=float, default=None)
    p.add_argument("--keepalive-timeout-ms", type=int, default=None)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("run", help="run the runtime plus bridge against a device or sim")
    p.add_argument("document")
    p.add_argument("--connect", default=_env("CONNECT"), help="host:port overriding the document's transport")
    p.add_argument("--bridge-port", type=int, default=int(_env("BRIDGE_PORT", 8080)))
    p.add_argument("--bridge-host", default=_env("BRIDGE_HOST", "127.0.0.1"))
    p.add_argument("--ui-dir", default=_env("UI_DIR"), help="static UI bundle to serve at /")
    p.add_argument("--reply-timeout-ms", type=int, default=runtime.DEFAULT_REPLY_TIMEOUT_MS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("drive", help="send a twist through a running bridge")
    p.add_argument("--connect", default=_env("CONNECT", "127.0.0.1:8080"))
    p.add_argument("--linear", type=float, default=0.0)
    p.add_argument("--angular", type=float, default=0.0)
    p.add_argument("--duration", type=float, default=1.0)
    p.set_defaults(func=cmd_drive)

    p = sub.add_parser("discover", help="print the device's document via the bridge")
    p.add_argument("--connect", default=_env("CONNECT", "127.0.0.1:8080"))
    p.add_argument("--summary", action="store_true", help="print a summary instead of the document")
    p.set_defaults(func=cmd_discover)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
