"""Parsing, semantic validation, and canonical serialization of device documents.

The concrete syntax is a JSON subset (UTF-8 text, closed schema, no
non-finite numbers). ``parse_document`` builds the typed model and runs
``validate``; a document is returned only when there are no error
diagnostics, so a parsed document is always safe to hand to the runtime,
the code generator, and the bridge.

``canonicalize`` produces the deterministic serialization used as the
discovery payload: keys sorted, two-space indent, all defaults
materialized, numbers in shortest round-trip decimal form.
"""

from __future__ import annotations

import json
import re
from typing import Any

from .expr import ExprError, parse_expr
from .model import (
    CONCEPTS,
    ENCODINGS,
    SCHEMA_VERSION,
    AbstractMapping,
    BoundExpr,
    Connection,
    DelimitedFormat,
    Diagnostic,
    FieldSpec,
    Interface,
    InterfaceCall,
    Keepalive,
    MessageFormat,
    OutputBinding,
    Param,
    PositionalFormat,
    Primitive,
    RdisDocument,
    SerialTransport,
    StateVar,
    TcpTransport,
)

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

_TOP_KEYS = {
    "rdis_version",
    "name",
    "version",
    "constants",
    "connections",
    "state",
    "primitives",
    "interfaces",
    "mappings",
}


class _Ctx:
    """Diagnostics collector shared by the structural build."""

    def __init__(self) -> None:
        self.diags: list[Diagnostic] = []

    def error(self, code: str, path: str, message: str) -> None:
        self.diags.append(Diagnostic("error", code, path, message))

    @property
    def failed(self) -> bool:
        return any(d.severity == "error" for d in self.diags)


def _check_keys(ctx: _Ctx, obj: dict, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            ctx.error("unknown-key", f"{path}.{key}" if path else key, f"unknown key {key!r}")


def _get_str(ctx, obj, key, path, required=True, default=None):
    if key not in obj:
        if required:
            ctx.error("missing-key", path, f"required key {key!r} is missing")
        return default
    value = obj[key]
    if not isinstance(value, str):
        ctx.error("bad-value", f"{path}.{key}", f"{key!r} must be a string")
        return default
    return value


def _get_ident(ctx, obj, key, path, required=True):
    value = _get_str(ctx, obj, key, path, required)
    if value is not None and not _IDENT_RE.match(value):
        ctx.error("bad-value", f"{path}.{key}", f"{value!r} is not a valid identifier")
        return None
    return value


def _get_int(ctx, obj, key, path, required=True, default=None, minimum=None):
    if key not in obj:
        if required:
            ctx.error("missing-key", path, f"required key {key!r} is missing")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        ctx.error("bad-value", f"{path}.{key}", f"{key!r} must be an integer")
        return default
    if minimum is not None and value < minimum:
        ctx.error("bad-value", f"{path}.{key}", f"{key!r} must be >= {minimum}")
        return default
    return value


def _get_number(ctx, obj, key, path, required=True, default=None):
    if key not in obj:
        if required:
            ctx.error("missing-key", path, f"required key {key!r} is missing")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        ctx.error("bad-value", f"{path}.{key}", f"{key!r} must be a number")
        return default
    return value


def _get_list(ctx, obj, key, path, default=()):
    if key not in obj:
        return list(default)
    value = obj[key]
    if not isinstance(value, list):
        ctx.error("bad-value", f"{path}.{key}" if path else key, f"{key!r} must be a list")
        return None
    return value


def _get_obj(ctx, obj, key, path, required=True):
    if key not in obj:
        if required:
            ctx.error("missing-key", path, f"required key {key!r} is missing")
        return None
    value = obj[key]
    if not isinstance(value, dict):
        ctx.error("bad-value", f"{path}.{key}", f"{key!r} must be an object")
        return None
    return value


def _parse_bound_expr(ctx, text: Any, path: str) -> BoundExpr | None:
    if not isinstance(text, str):
        ctx.error("bad-value", path, "expression must be a string")
        return None
    try:
        return BoundExpr(text, parse_expr(text))
    except ExprError as exc:
        ctx.error("expr-syntax", path, str(exc))
        return None


def _build_format(ctx, raw: Any, path: str) -> MessageFormat | None:
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "message format must be an object")
        return None
    kind = _get_str(ctx, raw, "kind", path)
    if kind == "positional":
        _check_keys(ctx, raw, {"kind", "frame_len", "command", "fields"}, path)
        frame_len = _get_int(ctx, raw, "frame_len", path, minimum=1)
        command = raw.get("command")
        if isinstance(command, str) and len(command) == 1 and ord(command) < 128:
            command = ord(command)
        elif isinstance(command, bool) or not isinstance(command, int) or not 0 <= command <= 255:
            ctx.error(
                "bad-value",
                f"{path}.command",
                "command must be a byte value (0..255) or a single ASCII character",
            )
            command = None
        fields_raw = _get_list(ctx, raw, "fields", path)
        fields = []
        for i, f in enumerate(fields_raw or []):
            fpath = f"{path}.fields[{i}]"
            if not isinstance(f, dict):
                ctx.error("bad-value", fpath, "field must be an object")
                continue
            _check_keys(ctx, f, {"name", "offset", "width", "encoding"}, fpath)
            name = _get_ident(ctx, f, "name", fpath)
            offset = _get_int(ctx, f, "offset", fpath, minimum=0)
            encoding = _get_str(ctx, f, "encoding", fpath, required=False, default="u8")
            if encoding not in ENCODINGS:
                ctx.error("bad-value", f"{fpath}.encoding", f"unknown encoding {encoding!r}")
                continue
            width = _get_int(ctx, f, "width", fpath, required=False, default=ENCODINGS[encoding][0])
            if name is None or offset is None or width is None:
                continue
            fields.append(FieldSpec(name, offset, width, encoding))
        if frame_len is None or command is None:
            return None
        return PositionalFormat(frame_len, command, tuple(fields))
    if kind == "delimited":
        _check_keys(ctx, raw, {"kind", "prefix", "separator", "terminator", "fields"}, path)
        prefix = _get_str(ctx, raw, "prefix", path)
        separator = _get_str(ctx, raw, "separator", path, required=False, default=",")
        terminator = _get_str(ctx, raw, "terminator", path, required=False, default="\n")
        if separator != ",":
            ctx.error("bad-value", f"{path}.separator", 'separator must be ","')
        if terminator != "\n":
            ctx.error("bad-value", f"{path}.terminator", r'terminator must be "\n"')
        fields_raw = _get_list(ctx, raw, "fields", path)
        fields = []
        for i, f in enumerate(fields_raw or []):
            if not isinstance(f, str) or not _IDENT_RE.match(f):
                ctx.error("bad-value", f"{path}.fields[{i}]", "field must be an identifier")
                continue
            fields.append(f)
        if prefix is None:
            return None
        return DelimitedFormat(prefix, tuple(fields))
    if kind is not None:
        ctx.error("bad-value", f"{path}.kind", f"format kind must be positional or delimited, got {kind!r}")
    return None


def _build_connection(ctx, raw: Any, path: str) -> Connection | None:
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "connection must be an object")
        return None
    _check_keys(ctx, raw, {"id", "transport", "threading_model", "keepalive", "on_connect"}, path)
    conn_id = _get_ident(ctx, raw, "id", path)
    transport = None
    traw = _get_obj(ctx, raw, "transport", path)
    if traw is not None:
        tpath = f"{path}.transport"
        kind = _get_str(ctx, traw, "kind", tpath)
        if kind == "tcp":
            _check_keys(ctx, traw, {"kind", "host", "port"}, tpath)
            host = _get_str(ctx, traw, "host", tpath)
            port = _get_int(ctx, traw, "port", tpath, minimum=1)
            if host is not None and port is not None:
                transport = TcpTransport(host, port)
        elif kind == "serial":
            _check_keys(ctx, traw, {"kind", "device", "baud"}, tpath)
            device = _get_str(ctx, traw, "device", tpath)
            baud = _get_int(ctx, traw, "baud", tpath, minimum=1)
            if device is not None and baud is not None:
                transport = SerialTransport(device, baud)
        elif kind is not None:
            ctx.error("bad-value", f"{tpath}.kind", f"transport kind must be tcp or serial, got {kind!r}")
    threading_model = _get_str(ctx, raw, "threading_model", path, required=False, default="single")
    keepalive = None
    if "keepalive" in raw and raw["keepalive"] is not None:
        kraw = raw["keepalive"]
        kpath = f"{path}.keepalive"
        if not isinstance(kraw, dict):
            ctx.error("bad-value", kpath, "keepalive must be an object")
        else:
            _check_keys(ctx, kraw, {"primitive", "period_ms"}, kpath)
            kprim = _get_ident(ctx, kraw, "primitive", kpath)
            kperiod = _get_int(ctx, kraw, "period_ms", kpath, minimum=1)
            if kprim is not None and kperiod is not None:
                keepalive = Keepalive(kprim, kperiod)
    on_connect = []
    for i, name in enumerate(_get_list(ctx, raw, "on_connect", path) or []):
        if not isinstance(name, str) or not _IDENT_RE.match(name):
            ctx.error("bad-value", f"{path}.on_connect[{i}]", "entry must be a primitive name")
            continue
        on_connect.append(name)
    if conn_id is None or transport is None or threading_model is None:
        return None
    return Connection(conn_id, transport, threading_model, keepalive, tuple(on_connect))


def _build_params(ctx, raw_list, path) -> tuple[Param, ...]:
    params = []
    for i, raw in enumerate(raw_list or []):
        ppath = f"{path}[{i}]"
        if not isinstance(raw, dict):
            ctx.error("bad-value", ppath, "parameter must be an object")
            continue
        _check_keys(ctx, raw, {"name", "kind"}, ppath)
        name = _get_ident(ctx, raw, "name", ppath)
        kind = _get_str(ctx, raw, "kind", ppath)
        if kind not in (None, "int", "float"):
            ctx.error("bad-value", f"{ppath}.kind", f"kind must be int or float, got {kind!r}")
            kind = None
        if name is not None and kind is not None:
            params.append(Param(name, kind))
    return tuple(params)


def _build_primitive(ctx, raw: Any, path: str) -> Primitive | None:
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "primitive must be an object")
        return None
    allowed = {"name", "connection", "frequency", "inputs", "outputs", "write_format", "read_format"}
    _check_keys(ctx, raw, allowed, path)
    name = _get_ident(ctx, raw, "name", path)
    connection = _get_ident(ctx, raw, "connection", path)
    period_ms = None
    freq = raw.get("frequency", "adhoc")
    if freq == "adhoc":
        pass
    elif isinstance(freq, dict):
        _check_keys(ctx, freq, {"periodic"}, f"{path}.frequency")
        praw = _get_obj(ctx, freq, "periodic", f"{path}.frequency")
        if praw is not None:
            _check_keys(ctx, praw, {"period_ms"}, f"{path}.frequency.periodic")
            period_ms = _get_int(ctx, praw, "period_ms", f"{path}.frequency.periodic", minimum=1)
            if period_ms is None:
                return None
    else:
        ctx.error("bad-value", f"{path}.frequency", 'frequency must be "adhoc" or {"periodic": {...}}')
        return None
    inputs = _build_params(ctx, _get_list(ctx, raw, "inputs", path), f"{path}.inputs")
    outputs = []
    for i, oraw in enumerate(_get_list(ctx, raw, "outputs", path) or []):
        opath = f"{path}.outputs[{i}]"
        if not isinstance(oraw, dict):
            ctx.error("bad-value", opath, "output must be an object")
            continue
        _check_keys(ctx, oraw, {"field", "target"}, opath)
        fname = _get_ident(ctx, oraw, "field", opath)
        target = oraw.get("target")
        state_var = None
        if target == "return":
            pass
        elif isinstance(target, dict):
            _check_keys(ctx, target, {"state"}, f"{opath}.target")
            state_var = _get_ident(ctx, target, "state", f"{opath}.target")
            if state_var is None:
                continue
        else:
            ctx.error("bad-value", f"{opath}.target", 'target must be "return" or {"state": name}')
            continue
        if fname is not None:
            outputs.append(OutputBinding(fname, state_var))
    if "write_format" not in raw:
        ctx.error("missing-key", path, "required key 'write_format' is missing")
        write_format = None
    else:
        write_format = _build_format(ctx, raw["write_format"], f"{path}.write_format")
    read_format = None
    if raw.get("read_format") is not None:
        read_format = _build_format(ctx, raw["read_format"], f"{path}.read_format")
        if read_format is None:
            return None
    if name is None or connection is None or write_format is None:
        return None
    return Primitive(name, connection, write_format, read_format, period_ms, inputs, tuple(outputs))


def _build_expr_map(ctx, raw: Any, path: str) -> dict[str, BoundExpr]:
    result: dict[str, BoundExpr] = {}
    if raw is None:
        return result
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "must be an object of name -> expression")
        return result
    for key, value in raw.items():
        if not _IDENT_RE.match(key):
            ctx.error("bad-value", f"{path}.{key}", f"{key!r} is not a valid identifier")
            continue
        bexpr = _parse_bound_expr(ctx, value, f"{path}.{key}")
        if bexpr is not None:
            result[key] = bexpr
    return result


def _build_interface(ctx, raw: Any, path: str) -> Interface | None:
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "interface must be an object")
        return None
    _check_keys(ctx, raw, {"name", "inputs", "calls", "returns"}, path)
    name = _get_ident(ctx, raw, "name", path)
    inputs = _build_params(ctx, _get_list(ctx, raw, "inputs", path), f"{path}.inputs")
    calls = []
    for i, craw in enumerate(_get_list(ctx, raw, "calls", path) or []):
        cpath = f"{path}.calls[{i}]"
        if not isinstance(craw, dict):
            ctx.error("bad-value", cpath, "call must be an object")
            continue
        _check_keys(ctx, craw, {"primitive", "args"}, cpath)
        prim = _get_ident(ctx, craw, "primitive", cpath)
        args = _build_expr_map(ctx, craw.get("args"), f"{cpath}.args")
        if prim is not None:
            calls.append(InterfaceCall(prim, args))
    returns = _build_expr_map(ctx, raw.get("returns"), f"{path}.returns")
    if name is None:
        return None
    return Interface(name, inputs, tuple(calls), returns)


def _build_mapping(ctx, raw: Any, path: str) -> AbstractMapping | None:
    if not isinstance(raw, dict):
        ctx.error("bad-value", path, "mapping must be an object")
        return None
    _check_keys(ctx, raw, {"concept", "interface", "bindings"}, path)
    concept = _get_str(ctx, raw, "concept", path)
    interface = _get_ident(ctx, raw, "interface", path)
    bindings = _build_expr_map(ctx, raw.get("bindings"), f"{path}.bindings")
    if concept is None or interface is None:
        return None
    return AbstractMapping(concept, interface, bindings)


def _build_document(ctx: _Ctx, root: dict) -> RdisDocument | None:
    _check_keys(ctx, root, _TOP_KEYS, "")
    rdis_version = _get_str(ctx, root, "rdis_version", "", required=False, default=SCHEMA_VERSION)
    if rdis_version != SCHEMA_VERSION:
        ctx.error("bad-version", "rdis_version", f"unsupported rdis_version {rdis_version!r}")
    name = _get_ident(ctx, root, "name", "")
    version = _get_str(ctx, root, "version", "")

    constants: dict[str, Any] = {}
    craw = root.get("constants", {})
    if not isinstance(craw, dict):
        ctx.error("bad-value", "constants", "constants must be an object")
    else:
        for key, value in craw.items():
            if not _IDENT_RE.match(key):
                ctx.error("bad-value", f"constants.{key}", f"{key!r} is not a valid identifier")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                ctx.error("bad-value", f"constants.{key}", "constant must be a number")
            else:
                constants[key] = value

    connections = []
    for i, raw in enumerate(_get_list(ctx, root, "connections", "") or []):
        conn = _build_connection(ctx, raw, f"connections[{i}]")
        if conn is not None:
            connections.append(conn)

    state_vars = []
    for i, raw in enumerate(_get_list(ctx, root, "state", "") or []):
        spath = f"state[{i}]"
        if not isinstance(raw, dict):
            ctx.error("bad-value", spath, "state variable must be an object")
            continue
        _check_keys(ctx, raw, {"name", "kind", "initial"}, spath)
        sname = _get_ident(ctx, raw, "name", spath)
        kind = _get_str(ctx, raw, "kind", spath)
        if kind not in (None, "int", "float"):
            ctx.error("bad-value", f"{spath}.kind", f"kind must be int or float, got {kind!r}")
            kind = None
        initial = _get_number(ctx, raw, "initial", spath)
        if sname is None or kind is None or initial is None:
            continue
        if kind == "int" and isinstance(initial, float):
            if initial.is_integer():
                initial = int(initial)
        elif kind == "float" and isinstance(initial, int):
            initial = float(initial)
        state_vars.append(StateVar(sname, kind, initial))

    primitives = []
    for i, raw in enumerate(_get_list(ctx, root, "primitives", "") or []):
        prim = _build_primitive(ctx, raw, f"primitives[{i}]")
        if prim is not None:
            primitives.append(prim)

    interfaces = []
    for i, raw in enumerate(_get_list(ctx, root, "interfaces", "") or []):
        iface = _build_interface(ctx, raw, f"interfaces[{i}]")
        if iface is not None:
            interfaces.append(iface)

    mappings = []
    for i, raw in enumerate(_get_list(ctx, root, "mappings", "") or []):
        mapping = _build_mapping(ctx, raw, f"mappings[{i}]")
        if mapping is not None:
            mappings.append(mapping)

    if name is None or version is None:
        return None
    return RdisDocument(
        name,
        version,
        SCHEMA_VERSION,
        constants,
        tuple(connections),
        tuple(state_vars),
        tuple(primitives),
        tuple(interfaces),
        tuple(mappings),
    )


class _DuplicateKeyError(ValueError):
    pass


def _pairs_hook(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise _DuplicateKeyError(f"duplicate key {key!r}")
        obj[key] = value
    return obj


def _reject_constant(const: str):
    raise ValueError(f"non-finite number {const} is not allowed")


def parse_document(text: str) -> tuple[RdisDocument | None, list[Diagnostic]]:
    """Parse JSON text into a validated document.

    Returns ``(document, diagnostics)``; the document is None whenever any
    error diagnostic was produced. A returned document always passes
    :func:`validate` with no errors.
    """
    ctx = _Ctx()
    try:
        root = json.loads(text, object_pairs_hook=_pairs_hook, parse_constant=_reject_constant)
    except _DuplicateKeyError as exc:
        ctx.error("duplicate-key", "$", str(exc))
        return None, ctx.diags
    except json.JSONDecodeError as exc:
        ctx.error("bad-json", "$", f"malformed JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})")
        return None, ctx.diags
    except ValueError as exc:
        ctx.error("bad-json", "$", str(exc))
        return None, ctx.diags
    if not isinstance(root, dict):
        ctx.error("bad-value", "$", "document root must be an object")
        return None, ctx.diags
    doc = _build_document(ctx, root)
    if ctx.failed or doc is None:
        return None, ctx.diags
    sem = validate(doc)
    diags = ctx.diags + sem
    if any(d.severity == "error" for d in diags):
        return None, diags
    return doc, diags


def load_document(path) -> tuple[RdisDocument | None, list[Diagnostic]]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_document(fh.read())


# ---------------------------------------------------------------------------
# semantic validation


def _dup_check(diags, items, category, path_fmt):
    seen = {}
    for i, name in enumerate(items):
        if name in seen:
            diags.append(
                Diagnostic(
                    "error",
                    "duplicate-id",
                    path_fmt.format(i),
                    f"{category} {name!r} already declared",
                )
            )
        else:
            seen[name] = i


def _check_expr_scope(diags, bexpr: BoundExpr, scope: set[str], path: str) -> None:
    from .expr import free_vars

    for var in sorted(free_vars(bexpr.ast)):
        if var not in scope:
            diags.append(
                Diagnostic("error", "unbound-name", path, f"name {var!r} does not resolve")
            )


def _check_lifecycle_ref(diags, doc, prim_name, path, role):
    try:
        prim = doc.primitive(prim_name)
    except KeyError:
        diags.append(
            Diagnostic("error", "dangling-ref", path, f"{role} references unknown primitive {prim_name!r}")
        )
        return
    if not prim.is_adhoc or prim.inputs:
        diags.append(
            Diagnostic(
                "error",
                "bad-lifecycle-primitive",
                path,
                f"{role} must name an adhoc primitive with zero inputs",
            )
        )


def _format_field_names(fmt: MessageFormat) -> list[str]:
    if isinstance(fmt, PositionalFormat):
        return [f.name for f in fmt.fields]
    return list(fmt.fields)


def _validate_format(diags, fmt: MessageFormat, path: str) -> None:
    names = _format_field_names(fmt)
    _dup_check(diags, names, "field", path + ".fields[{}]")
    if isinstance(fmt, PositionalFormat):
        spans = []
        for i, f in enumerate(fmt.fields):
            fpath = f"{path}.fields[{i}]"
            width, _, _ = ENCODINGS[f.encoding]
            if f.width != width:
                diags.append(
                    Diagnostic(
                        "error",
                        "encoding-width-mismatch",
                        fpath,
                        f"encoding {f.encoding} implies width {width}, got {f.width}",
                    )
                )
                continue
            if f.offset < 1 or f.offset + f.width > fmt.frame_len:
                diags.append(
                    Diagnostic(
                        "error",
                        "field-out-of-bounds",
                        fpath,
                        f"field {f.name!r} spans [{f.offset}, {f.offset + f.width}) "
                        f"outside [1, {fmt.frame_len})",
                    )
                )
                continue
            spans.append((f.offset, f.offset + f.width, f.name, fpath))
        spans.sort()
        for (s1, e1, n1, _), (s2, _, n2, p2) in zip(spans, spans[1:]):
            if s2 < e1:
                diags.append(
                    Diagnostic(
                        "error",
                        "overlapping-fields",
                        p2,
                        f"field {n2!r} overlaps field {n1!r}",
                    )
                )
    else:
        ch = fmt.prefix
        if len(ch) != 1 or not 0x20 <= ord(ch) <= 0x7E or ch in (fmt.separator, fmt.terminator):
            diags.append(
                Diagnostic(
                    "error",
                    "bad-prefix",
                    f"{path}.prefix",
                    "prefix must be one printable ASCII character distinct from separator and terminator",
                )
            )


def validate(doc: RdisDocument) -> list[Diagnostic]:
    """Return every invariant violation; an empty list means the document is valid."""
    diags: list[Diagnostic] = []

    _dup_check(diags, [c.id for c in doc.connections], "connection", "connections[{}].id")
    _dup_check(diags, [s.name for s in doc.state_vars], "state variable", "state[{}].name")
    _dup_check(diags, [p.name for p in doc.primitives], "primitive", "primitives[{}].name")
    _dup_check(diags, [i.name for i in doc.interfaces], "interface", "interfaces[{}].name")
    _dup_check(diags, [m.concept for m in doc.mappings], "mapping", "mappings[{}].concept")

    state_names = {s.name for s in doc.state_vars}
    for name in sorted(set(doc.constants) & state_names):
        diags.append(
            Diagnostic(
                "error",
                "name-collision",
                f"constants.{name}",
                f"{name!r} is both a constant and a state variable",
            )
        )

    for ci, conn in enumerate(doc.connections):
        cpath = f"connections[{ci}]"
        if conn.threading_model in ("dual", "multiple"):
            diags.append(
                Diagnostic(
                    "error",
                    "not-implemented",
                    f"{cpath}.threading_model",
                    f"threading model {conn.threading_model!r} is not implemented; only 'single' is supported",
                )
            )
        elif conn.threading_model != "single":
            diags.append(
                Diagnostic(
                    "error",
                    "bad-value",
                    f"{cpath}.threading_model",
                    f"unknown threading model {conn.threading_model!r}",
                )
            )
        if conn.keepalive is not None:
            _check_lifecycle_ref(diags, doc, conn.keepalive.primitive, f"{cpath}.keepalive.primitive", "keepalive")
        for i, name in enumerate(conn.on_connect):
            _check_lifecycle_ref(diags, doc, name, f"{cpath}.on_connect[{i}]", "on_connect")

    for si, sv in enumerate(doc.state_vars):
        if sv.kind == "int" and isinstance(sv.initial, float) and not sv.initial.is_integer():
            diags.append(
                Diagnostic(
                    "error",
                    "bad-initial",
                    f"state[{si}].initial",
                    f"initial {sv.initial!r} is not representable as int",
                )
            )

    connection_ids = {c.id for c in doc.connections}
    for pi, prim in enumerate(doc.primitives):
        ppath = f"primitives[{pi}]"
        if prim.connection not in connection_ids:
            diags.append(
                Diagnostic(
                    "error",
                    "dangling-ref",
                    f"{ppath}.connection",
                    f"unknown connection {prim.connection!r}",
                )
            )
        if not prim.is_adhoc:
            if prim.inputs:
                diags.append(
                    Diagnostic(
                        "error",
                        "periodic-has-inputs",
                        f"{ppath}.inputs",
                        "periodic primitives take no inputs",
                    )
                )
            for oi, out in enumerate(prim.outputs):
                if out.to_return:
                    diags.append(
                        Diagnostic(
                            "error",
                            "periodic-return-output",
                            f"{ppath}.outputs[{oi}]",
                            "periodic primitive outputs must target state variables",
                        )
                    )
        _validate_format(diags, prim.write_format, f"{ppath}.write_format")
        if prim.read_format is not None:
            _validate_format(diags, prim.read_format, f"{ppath}.read_format")
        write_fields = set(_format_field_names(prim.write_format))
        for inp in prim.inputs:
            if inp.name not in write_fields:
                diags.append(
                    Diagnostic(
                        "error",
                        "write-format-missing-field",
                        f"{ppath}.write_format",
                        f"input {inp.name!r} has no field in the write format",
                    )
                )
        read_fields = set(_format_field_names(prim.read_format)) if prim.read_format else set()
        seen_outputs = set()
        for oi, out in enumerate(prim.outputs):
            opath = f"{ppath}.outputs[{oi}]"
            if out.field not in read_fields:
                diags.append(
                    Diagnostic(
                        "error",
                        "read-format-missing-field",
                        opath,
                        f"output field {out.field!r} has no field in the read format",
                    )
                )
            if out.state_var is not None and out.state_var not in state_names:
                diags.append(
                    Diagnostic(
                        "error",
                        "dangling-ref",
                        f"{opath}.target",
                        f"unknown state variable {out.state_var!r}",
                    )
                )
            key = (out.field, out.state_var)
            if key in seen_outputs:
                diags.append(
                    Diagnostic("error", "duplicate-output", opath, "output binding repeated")
                )
            seen_outputs.add(key)

    prim_by_name = {p.name: p for p in doc.primitives}
    base_scope = set(doc.constants) | state_names
    for ii, iface in enumerate(doc.interfaces):
        ipath = f"interfaces[{ii}]"
        _dup_check(diags, [p.name for p in iface.inputs], "input", ipath + ".inputs[{}]")
        input_names = {p.name for p in iface.inputs}
        call_outputs: set[str] = set()
        call_connections: set[str] = set()
        for ci, call in enumerate(iface.calls):
            cpath = f"{ipath}.calls[{ci}]"
            prim = prim_by_name.get(call.primitive)
            if prim is None:
                diags.append(
                    Diagnostic(
                        "error",
                        "dangling-ref",
                        f"{cpath}.primitive",
                        f"unknown primitive {call.primitive!r}",
                    )
                )
                continue
            call_connections.add(prim.connection)
            prim_inputs = {p.name for p in prim.inputs}
            for arg in call.args:
                if arg not in prim_inputs:
                    diags.append(
                        Diagnostic(
                            "error",
                            "unknown-call-arg",
                            f"{cpath}.args.{arg}",
                            f"primitive {prim.name!r} has no input {arg!r}",
                        )
                    )
            for pname in sorted(prim_inputs - set(call.args)):
                diags.append(
                    Diagnostic(
                        "error",
                        "missing-call-arg",
                        f"{cpath}.args",
                        f"input {pname!r} of primitive {prim.name!r} is not bound",
                    )
                )
            scope = base_scope | input_names | call_outputs
            for arg, bexpr in call.args.items():
                _check_expr_scope(diags, bexpr, scope, f"{cpath}.args.{arg}")
            call_outputs |= {o.field for o in prim.outputs if o.to_return}
        if len(call_connections) > 1:
            diags.append(
                Diagnostic(
                    "error",
                    "cross-connection-interface",
                    ipath,
                    "all calls of one interface must target primitives on the same connection",
                )
            )
        ret_scope = base_scope | call_outputs
        for rname, bexpr in iface.returns.items():
            _check_expr_scope(diags, bexpr, ret_scope, f"{ipath}.returns.{rname}")

    iface_by_name = {i.name: i for i in doc.interfaces}
    for mi, mapping in enumerate(doc.mappings):
        mpath = f"mappings[{mi}]"
        concept = CONCEPTS.get(mapping.concept)
        if concept is None:
            diags.append(
                Diagnostic(
                    "error",
                    "unknown-concept",
                    f"{mpath}.concept",
                    f"unknown concept {mapping.concept!r}",
                )
            )
            continue
        iface = iface_by_name.get(mapping.interface)
        if iface is None:
            diags.append(
                Diagnostic(
                    "error",
                    "dangling-ref",
                    f"{mpath}.interface",
                    f"unknown interface {mapping.interface!r}",
                )
            )
            continue
        if concept.kind == "command":
            expected = {p.name for p in iface.inputs}
            scope = set(concept.fields) | set(doc.constants)
        else:
            expected = set(concept.fields)
            scope = set(iface.returns) | set(doc.constants)
            if iface.calls or iface.inputs:
                diags.append(
                    Diagnostic(
                        "error",
                        "mapping-interface-has-calls",
                        f"{mpath}.interface",
                        "telemetry concepts require a call-free, input-free interface",
                    )
                )
        for key in sorted(set(mapping.bindings) - expected):
            diags.append(
                Diagnostic(
                    "error",
                    "unknown-binding",
                    f"{mpath}.bindings.{key}",
                    f"{key!r} is not bindable for concept {mapping.concept}",
                )
            )
        for key in sorted(expected - set(mapping.bindings)):
            diags.append(
                Diagnostic(
                    "error",
                    "mapping-missing-binding",
                    f"{mpath}.bindings",
                    f"{key!r} is not bound",
                )
            )
        for key, bexpr in mapping.bindings.items():
            _check_expr_scope(diags, bexpr, scope, f"{mpath}.bindings.{key}")

    return diags


# ---------------------------------------------------------------------------
# canonical serialization


def _format_json(fmt: MessageFormat | None):
    if fmt is None:
        return None
    if isinstance(fmt, PositionalFormat):
        return {
            "kind": "positional",
            "frame_len": fmt.frame_len,
            "command": fmt.command,
            "fields": [
                {"name": f.name, "offset": f.offset, "width": f.width, "encoding": f.encoding}
                for f in fmt.fields
            ],
        }
    return {
        "kind": "delimited",
        "prefix": fmt.prefix,
        "separator": fmt.separator,
        "terminator": fmt.terminator,
        "fields": list(fmt.fields),
    }


def _expr_map_json(exprs) -> dict:
    return {name: bexpr.src for name, bexpr in exprs.items()}


def document_to_json(doc: RdisDocument) -> dict:
    """Plain-data rendering of a document with every default materialized."""
    return {
        "rdis_version": doc.rdis_version,
        "name": doc.name,
        "version": doc.version,
        "constants": dict(doc.constants),
        "connections": [
            {
                "id": c.id,
                "transport": (
                    {"kind": "tcp", "host": c.transport.host, "port": c.transport.port}
                    if isinstance(c.transport, TcpTransport)
                    else {"kind": "serial", "device": c.transport.device, "baud": c.transport.baud}
                ),
                "threading_model": c.threading_model,
                "keepalive": (
                    None
                    if c.keepalive is None
                    else {"primitive": c.keepalive.primitive, "period_ms": c.keepalive.period_ms}
                ),
                "on_connect": list(c.on_connect),
            }
            for c in doc.connections
        ],
        "state": [
            {"name": s.name, "kind": s.kind, "initial": s.initial} for s in doc.state_vars
        ],
        "primitives": [
            {
                "name": p.name,
                "connection": p.connection,
                "frequency": (
                    "adhoc" if p.is_adhoc else {"periodic": {"period_ms": p.period_ms}}
                ),
                "inputs": [{"name": i.name, "kind": i.kind} for i in p.inputs],
                "outputs": [
                    {
                        "field": o.field,
                        "target": "return" if o.to_return else {"state": o.state_var},
                    }
                    for o in p.outputs
                ],
                "write_format": _format_json(p.write_format),
                "read_format": _format_json(p.read_format),
            }
            for p in doc.primitives
        ],
        "interfaces": [
            {
                "name": i.name,
                "inputs": [{"name": p.name, "kind": p.kind} for p in i.inputs],
                "calls": [
                    {"primitive": c.primitive, "args": _expr_map_json(c.args)} for c in i.calls
                ],
                "returns": _expr_map_json(i.returns),
            }
            for i in doc.interfaces
        ],
        "mappings": [
            {
                "concept": m.concept,
                "interface": m.interface,
                "bindings": _expr_map_json(m.bindings),
            }
            for m in doc.mappings
        ],
    }


def canonicalize(doc: RdisDocument) -> str:
    """Deterministic serialization; refuses documents that do not validate."""
    problems = [d for d in validate(doc) if d.severity == "error"]
    if problems:
        raise ValueError(f"document does not validate: {problems[0]}")
    return json.dumps(document_to_json(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
