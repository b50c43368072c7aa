"""The c-cli target: one portable C source file per document.

The generated program carries one function per primitive (frame building is
split out so frames can be inspected without a device), one function per
interface with the binding expressions compiled to C arithmetic, a connect
routine for the tcp transport, and a line-oriented read-eval loop. An
``emit`` argv mode prints a primitive's encoded frame without connecting,
which is what the golden-file cross-checks drive.

State variables become globals; periodic primitives are not scheduled (the
program is single threaded) but a ``poll`` command fires each of them once.
"""

from __future__ import annotations

from ..expr import BinOp, ExprAst, Name, Num
from ..model import Interface, PositionalFormat, Primitive, RdisDocument, TcpTransport
from .engine import Template


class UnsupportedFeatureError(Exception):
    """The document uses features this target cannot express."""

    def __init__(self, features: list[str]):
        super().__init__("unsupported for the c-cli target: " + "; ".join(features))
        self.features = features


_C_RESERVED = {
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double",
    "else", "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long",
    "main", "register", "restrict", "return", "short", "signed", "sizeof", "static",
    "struct", "switch", "typedef", "union", "unsigned", "void", "volatile", "while",
    # names the generated skeleton already uses
    "emit", "poll", "quit", "emit_main", "poll_periodic", "clamp_checked", "round",
    "fmin", "fmax", "put_u8", "put_i8", "put_u16be", "put_i16be", "get_u8", "get_i8",
    "get_u16be", "get_i16be", "tcp_connect", "send_all", "read_exact", "read_line",
    "print_hex", "args", "nargs", "line", "save", "tok", "cmd", "frame", "reply", "fd",
}


def _c_number(value: float) -> str:
    text = repr(float(value))
    return text


def compile_expr(ast: ExprAst, resolve: dict[str, str]) -> str:
    """Lower an expression tree to C source over double values."""
    if isinstance(ast, Num):
        return _c_number(ast.value)
    if isinstance(ast, Name):
        return resolve[ast.ident]
    if isinstance(ast, BinOp):
        left = compile_expr(ast.left, resolve)
        right = compile_expr(ast.right, resolve)
        return f"({left} {ast.op} {right})"
    args = [compile_expr(a, resolve) for a in ast.args]
    if ast.func == "round":
        return f"round({args[0]})"
    if ast.func == "min":
        return f"fmin({args[0]}, {args[1]})"
    if ast.func == "max":
        return f"fmax({args[0]}, {args[1]})"
    return f"clamp_checked({args[0]}, {args[1]}, {args[2]})"


def _collect_unsupported(doc: RdisDocument) -> list[str]:
    problems = []
    for conn in doc.connections:
        if not isinstance(conn.transport, TcpTransport):
            problems.append(f"connection {conn.id!r}: only the tcp transport is supported")
    names = [p.name for p in doc.primitives] + [i.name for i in doc.interfaces]
    seen = set()
    for name in names:
        if name in seen:
            problems.append(f"name {name!r} is used by both a primitive and an interface")
        seen.add(name)
    for name in sorted(set(names) & _C_RESERVED):
        problems.append(f"name {name!r} collides with a reserved word in generated code")
    return problems


def _putter(encoding: str) -> str:
    return {"u8": "put_u8", "i8": "put_i8", "u16be": "put_u16be", "i16be": "put_i16be"}[encoding]


def _getter(encoding: str) -> str:
    return {"u8": "get_u8", "i8": "get_i8", "u16be": "get_u16be", "i16be": "get_i16be"}[encoding]


def _primitive_ctx(prim: Primitive, resolve_state: dict[str, str]) -> dict:
    positional = isinstance(prim.write_format, PositionalFormat)
    inputs = [p.name for p in prim.inputs]
    ctx: dict = {
        "name": prim.name,
        "is_positional": positional,
        "is_delimited": not positional,
        "inputs": [
            {"name": n, "argv_index": i + 1, "comma_first": True} for i, n in enumerate(inputs)
        ],
        "n_inputs": len(inputs),
        "emit_argc": len(inputs) + 1,
        "param_decl": "".join(f", double {n}" for n in inputs),
        "pass_args": "".join(f", {n}" for n in inputs),
        "has_reply": prim.read_format is not None,
        "is_periodic": not prim.is_adhoc,
        "is_adhoc": prim.is_adhoc,
    }
    if positional:
        fmt = prim.write_format
        by_name = {f.name: f for f in fmt.fields}
        ctx["frame_len"] = fmt.frame_len
        ctx["command_hex"] = f"0x{fmt.command:02X}"
        ctx["put_lines"] = [
            {
                "line": f"if ({_putter(by_name[n].encoding)}(buf, {by_name[n].offset}, "
                f"(long)llround({n})) != 0) return -1;"
            }
            for n in inputs
        ]
        zero_fields = [f for f in fmt.fields if f.name not in inputs]
        ctx["zero_put_lines"] = [
            {"line": f"if ({_putter(f.encoding)}(buf, {f.offset}, 0) != 0) return -1;"}
            for f in zero_fields
        ]
    else:
        fmt = prim.write_format
        ctx["prefix"] = fmt.prefix
        ctx["fmt_string"] = fmt.prefix + "".join(",%ld" for _ in fmt.fields) + "\\n"
        order = list(fmt.fields)
        ctx["fmt_args"] = "".join(
            f", (long)llround({n})" if n in inputs else ", 0L" for n in order
        )

    returned = [o.field for o in prim.outputs if o.to_return]
    stored = [(o.field, o.state_var) for o in prim.outputs if not o.to_return]
    ctx["ret_params"] = [{"name": f} for f in returned]
    ctx["ret_param_decl"] = "".join(f", double *ret_{f}" for f in returned)
    ctx["store_lines"] = [
        {"line": f"{resolve_state[sv]} = f_{field};"} for field, sv in stored
    ]
    ctx["ret_lines"] = [{"line": f"*ret_{f} = f_{f};"} for f in returned]

    if prim.read_format is not None:
        rf = prim.read_format
        if isinstance(rf, PositionalFormat):
            ctx["reply_is_positional"] = True
            ctx["reply_is_delimited"] = False
            ctx["reply_len"] = rf.frame_len
            ctx["reply_command_hex"] = f"0x{rf.command:02X}"
            ctx["reply_reads"] = [
                {"line": f"double f_{f.name} = (double){_getter(f.encoding)}(reply, {f.offset});"}
                for f in rf.fields
                if any(o.field == f.name for o in prim.outputs)
            ]
        else:
            ctx["reply_is_positional"] = False
            ctx["reply_is_delimited"] = True
            ctx["reply_prefix"] = rf.prefix
            ctx["reply_reads"] = [
                {
                    "line": f'tok = strtok_r(NULL, ",\\n", &save); if (tok == NULL) return -1; '
                    f"double f_{name} = strtod(tok, NULL);"
                }
                for name in rf.fields
            ]
            ctx["reply_unused"] = [
                {"name": name}
                for name in rf.fields
                if not any(o.field == name for o in prim.outputs)
            ]
    else:
        ctx["reply_is_positional"] = False
        ctx["reply_is_delimited"] = False
    return ctx


def _interface_ctx(doc: RdisDocument, iface: Interface, resolve_base: dict[str, str]) -> dict:
    inputs = [p.name for p in iface.inputs]
    resolve = dict(resolve_base)
    resolve.update({n: n for n in inputs})
    calls = []
    for call in iface.calls:
        prim = doc.primitive(call.primitive)
        returned = [o.field for o in prim.outputs if o.to_return]
        arg_exprs = "".join(
            ", " + compile_expr(call.args[p.name].ast, resolve) for p in prim.inputs
        )
        calls.append(
            {
                "primitive": prim.name,
                "arg_exprs": arg_exprs,
                "out_decls": [{"cname": f"out_{f}"} for f in returned],
                "out_refs": "".join(f", &out_{f}" for f in returned),
            }
        )
        resolve.update({f: f"out_{f}" for f in returned})
    returns = [
        {"name": rname, "c_expr": compile_expr(bexpr.ast, resolve)}
        for rname, bexpr in iface.returns.items()
    ]
    return {
        "name": iface.name,
        "param_decl": "".join(f", double {n}" for n in inputs),
        "n_inputs": len(inputs),
        "usage_hint": " ".join([iface.name] + [f"<{n}>" for n in inputs]),
        "call_args": "".join(f", args[{i}]" for i in range(len(inputs))),
        "calls": calls,
        "returns": returns,
        "ret_param_decl": "".join(f", double *ret_{r['name']}" for r in returns),
        "ret_refs": "".join(f", &ret_{r['name']}" for r in returns),
        "ret_decls": [{"cname": f"ret_{r['name']}"} for r in returns],
    }


def build_context(doc: RdisDocument, content_hash: str) -> dict:
    problems = _collect_unsupported(doc)
    if problems:
        raise UnsupportedFeatureError(problems)

    resolve_state = {sv.name: f"state_{sv.name}" for sv in doc.state_vars}
    resolve_base = {name: f"CONST_{name.upper()}" for name in doc.constants}
    resolve_base.update(resolve_state)

    transport = doc.connections[0].transport if doc.connections else TcpTransport("127.0.0.1", 0)
    primitives = [_primitive_ctx(p, resolve_state) for p in doc.primitives]
    interfaces = [_interface_ctx(doc, i, resolve_base) for i in doc.interfaces]
    on_connect = []
    for conn in doc.connections:
        for name in conn.on_connect:
            prim = doc.primitive(name)
            returned = [o.field for o in prim.outputs if o.to_return]
            on_connect.append(
                {
                    "name": name,
                    "out_decls": [{"cname": f"scratch_{f}"} for f in returned],
                    "out_refs": "".join(f", &scratch_{f}" for f in returned),
                }
            )
    commands = [i["name"] for i in interfaces]
    return {
        "doc_name": doc.name,
        "doc_version": doc.version,
        "content_hash": content_hash,
        "default_host": transport.host,
        "default_port": transport.port,
        "constants": [
            {"macro": f"CONST_{name.upper()}", "value": _c_number(value)}
            for name, value in doc.constants.items()
        ],
        "state_vars": [
            {"cname": f"state_{sv.name}", "initial": _c_number(sv.initial)}
            for sv in doc.state_vars
        ],
        "primitives": primitives,
        "adhoc_primitives": [p for p in primitives if p["is_adhoc"]],
        "periodic_primitives": [p for p in primitives if p["is_periodic"]],
        "has_periodic": any(p["is_periodic"] for p in primitives),
        "interfaces": interfaces,
        "on_connect": on_connect,
        "command_list": ", ".join(commands + ["poll", "quit"]),
    }


MAIN_TEMPLATE = Template(
    "c-cli/main.c",
    r"""/*
 * Command-line driver for device "{{doc_name}}" (document version {{doc_version}}).
 * Source document sha256: {{content_hash}}
 *
 * Build:   cc -O2 -o {{doc_name}}-cli main.c -lm
 * Usage:   ./{{doc_name}}-cli [host [port]]     interactive driver
 *          ./{{doc_name}}-cli emit <primitive> <args...>   print a frame, no device
 */

#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

{{#each constants}}#define {{macro}} {{value}}
{{/each}}
{{#each state_vars}}static double {{cname}} = {{initial}};
{{/each}}
static double clamp_checked(double x, double lo, double hi) {
    if (lo > hi) {
        fprintf(stderr, "clamp: lower bound %g above upper bound %g\n", lo, hi);
        exit(1);
    }
    return x < lo ? lo : (x > hi ? hi : x);
}

static int put_u8(unsigned char *buf, int off, long v) {
    if (v < 0 || v > 255) { fprintf(stderr, "value %ld out of range for u8\n", v); return -1; }
    buf[off] = (unsigned char)v;
    return 0;
}

static int put_i8(unsigned char *buf, int off, long v) {
    if (v < -128 || v > 127) { fprintf(stderr, "value %ld out of range for i8\n", v); return -1; }
    buf[off] = (unsigned char)(v & 0xFF);
    return 0;
}

static int put_u16be(unsigned char *buf, int off, long v) {
    if (v < 0 || v > 65535) { fprintf(stderr, "value %ld out of range for u16be\n", v); return -1; }
    buf[off] = (unsigned char)((v >> 8) & 0xFF);
    buf[off + 1] = (unsigned char)(v & 0xFF);
    return 0;
}

static int put_i16be(unsigned char *buf, int off, long v) {
    if (v < -32768 || v > 32767) { fprintf(stderr, "value %ld out of range for i16be\n", v); return -1; }
    buf[off] = (unsigned char)((v >> 8) & 0xFF);
    buf[off + 1] = (unsigned char)(v & 0xFF);
    return 0;
}

static long get_u8(const unsigned char *buf, int off) { return (long)buf[off]; }

static long get_i8(const unsigned char *buf, int off) {
    long v = (long)buf[off];
    return v >= 128 ? v - 256 : v;
}

static long get_u16be(const unsigned char *buf, int off) {
    return ((long)buf[off] << 8) | (long)buf[off + 1];
}

static long get_i16be(const unsigned char *buf, int off) {
    long v = get_u16be(buf, off);
    return v >= 32768 ? v - 65536 : v;
}

static int tcp_connect(const char *host, int port) {
    char service[16];
    struct addrinfo hints, *res, *ai;
    int fd = -1;
    snprintf(service, sizeof service, "%d", port);
    memset(&hints, 0, sizeof hints);
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    if (getaddrinfo(host, service, &hints, &res) != 0) {
        fprintf(stderr, "cannot resolve %s\n", host);
        return -1;
    }
    for (ai = res; ai != NULL; ai = ai->ai_next) {
        fd = socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        close(fd);
        fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) fprintf(stderr, "cannot connect to %s:%d\n", host, port);
    return fd;
}

static int send_all(int fd, const unsigned char *buf, int len) {
    int sent = 0;
    while (sent < len) {
        ssize_t n = write(fd, buf + sent, (size_t)(len - sent));
        if (n <= 0) { perror("write"); return -1; }
        sent += (int)n;
    }
    return 0;
}

static int read_exact(int fd, unsigned char *buf, int len) {
    int got = 0;
    while (got < len) {
        ssize_t n = read(fd, buf + got, (size_t)(len - got));
        if (n <= 0) { perror("read"); return -1; }
        got += (int)n;
    }
    return 0;
}

static int read_line(int fd, char *buf, int cap) {
    int got = 0;
    while (got < cap - 1) {
        ssize_t n = read(fd, buf + got, 1);
        if (n <= 0) { perror("read"); return -1; }
        got += 1;
        if (buf[got - 1] == '\n') { buf[got] = '\0'; return 0; }
    }
    fprintf(stderr, "reply line too long\n");
    return -1;
}

static void print_hex(const unsigned char *buf, int len) {
    int i;
    for (i = 0; i < len; i++) printf("%02x", buf[i]);
    printf("\n");
}

/* ------------------------------------------------------------------ */
/* primitives                                                          */
/* ------------------------------------------------------------------ */
{{#each primitives}}
{{#if is_positional}}
static int build_{{name}}(unsigned char *buf{{param_decl}}) {
    memset(buf, 0, {{frame_len}});
    buf[0] = {{command_hex}};
{{#each put_lines}}    {{line}}
{{/each}}{{#each zero_put_lines}}    {{line}}
{{/each}}    return {{frame_len}};
}

static int {{name}}(int fd{{param_decl}}{{ret_param_decl}}) {
    unsigned char frame[{{frame_len}}];
    int n = build_{{name}}(frame{{pass_args}});
    if (n < 0) return -1;
    if (send_all(fd, frame, n) != 0) return -1;
{{#if has_reply}}{{#if reply_is_positional}}    unsigned char reply[{{reply_len}}];
    if (read_exact(fd, reply, {{reply_len}}) != 0) return -1;
    if (reply[0] != {{reply_command_hex}}) {
        fprintf(stderr, "{{name}}: unexpected reply 0x%02X\n", reply[0]);
        return -1;
    }
{{#each reply_reads}}    {{line}}
{{/each}}{{/if}}{{#if reply_is_delimited}}    char reply[256];
    char *save = NULL;
    char *tok;
    if (read_line(fd, reply, (int)sizeof reply) != 0) return -1;
    tok = strtok_r(reply, ",\n", &save);
    if (tok == NULL || strcmp(tok, "{{reply_prefix}}") != 0) {
        fprintf(stderr, "{{name}}: unexpected reply\n");
        return -1;
    }
{{#each reply_reads}}    {{line}}
{{/each}}{{#each reply_unused}}    (void)f_{{name}};
{{/each}}{{/if}}{{#each store_lines}}    {{line}}
{{/each}}{{#each ret_lines}}    {{line}}
{{/each}}{{/if}}    return 0;
}
{{/if}}{{#if is_delimited}}
static int build_{{name}}(char *buf, int cap{{param_decl}}) {
    int n = snprintf(buf, (size_t)cap, "{{fmt_string}}"{{fmt_args}});
    if (n < 0 || n >= cap) return -1;
    return n;
}

static int {{name}}(int fd{{param_decl}}{{ret_param_decl}}) {
    char frame[256];
    int n = build_{{name}}(frame, (int)sizeof frame{{pass_args}});
    if (n < 0) return -1;
    if (send_all(fd, (const unsigned char *)frame, n) != 0) return -1;
{{#if has_reply}}{{#if reply_is_positional}}    unsigned char reply[{{reply_len}}];
    if (read_exact(fd, reply, {{reply_len}}) != 0) return -1;
    if (reply[0] != {{reply_command_hex}}) {
        fprintf(stderr, "{{name}}: unexpected reply 0x%02X\n", reply[0]);
        return -1;
    }
{{#each reply_reads}}    {{line}}
{{/each}}{{/if}}{{#if reply_is_delimited}}    char reply[256];
    char *save = NULL;
    char *tok;
    if (read_line(fd, reply, (int)sizeof reply) != 0) return -1;
    tok = strtok_r(reply, ",\n", &save);
    if (tok == NULL || strcmp(tok, "{{reply_prefix}}") != 0) {
        fprintf(stderr, "{{name}}: unexpected reply\n");
        return -1;
    }
{{#each reply_reads}}    {{line}}
{{/each}}{{#each reply_unused}}    (void)f_{{name}};
{{/each}}{{/if}}{{#each store_lines}}    {{line}}
{{/each}}{{#each ret_lines}}    {{line}}
{{/each}}{{/if}}    return 0;
}
{{/if}}{{/each}}
/* ------------------------------------------------------------------ */
/* interfaces                                                          */
/* ------------------------------------------------------------------ */
{{#each interfaces}}
static int {{name}}(int fd{{param_decl}}{{ret_param_decl}}) {
{{#each calls}}{{#each out_decls}}    double {{cname}} = 0.0;
{{/each}}    if ({{primitive}}(fd{{arg_exprs}}{{out_refs}}) != 0) return -1;
{{/each}}{{#each returns}}    *ret_{{name}} = {{c_expr}};
{{/each}}    (void)fd;
    return 0;
}
{{/each}}
static int poll_periodic(int fd) {
{{#each periodic_primitives}}    if ({{name}}(fd) != 0) return -1;
{{/each}}    (void)fd;
    return 0;
}

static int emit_main(int argc, char **argv) {
    if (argc < 1) {
        fprintf(stderr, "usage: emit <primitive> <args...>\n");
        return 2;
    }
{{#each primitives}}    if (strcmp(argv[0], "{{name}}") == 0) {
        if (argc != {{emit_argc}}) {
            fprintf(stderr, "{{name}} takes {{n_inputs}} argument(s)\n");
            return 2;
        }
{{#if is_positional}}        unsigned char frame[{{frame_len}}];
        int n = build_{{name}}(frame{{#each inputs}}, strtod(argv[{{argv_index}}], NULL){{/each}});
        if (n < 0) return 1;
        print_hex(frame, n);
{{/if}}{{#if is_delimited}}        char frame[256];
        int n = build_{{name}}(frame, (int)sizeof frame{{#each inputs}}, strtod(argv[{{argv_index}}], NULL){{/each}});
        if (n < 0) return 1;
        fwrite(frame, 1, (size_t)n, stdout);
{{/if}}        return 0;
    }
{{/each}}    fprintf(stderr, "unknown primitive %s\n", argv[0]);
    return 2;
}

int main(int argc, char **argv) {
    if (argc >= 2 && strcmp(argv[1], "emit") == 0) {
        return emit_main(argc - 2, argv + 2);
    }
    const char *host = "{{default_host}}";
    int port = {{default_port}};
    if (argc >= 2) host = argv[1];
    if (argc >= 3) port = atoi(argv[2]);
    int fd = tcp_connect(host, port);
    if (fd < 0) return 1;
{{#each on_connect}}    {
{{#each out_decls}}        double {{cname}} = 0.0;
{{/each}}        if ({{name}}(fd{{out_refs}}) != 0) {
            fprintf(stderr, "on_connect {{name}} failed\n");
            close(fd);
            return 1;
        }
    }
{{/each}}
    fprintf(stderr, "connected to %s:%d; commands: {{command_list}}\n", host, port);
    char line[512];
    while (fgets(line, sizeof line, stdin) != NULL) {
        char *save = NULL;
        char *cmd = strtok_r(line, " \t\r\n", &save);
        double args[8];
        int nargs = 0;
        char *tok;
        if (cmd == NULL) continue;
        while ((tok = strtok_r(NULL, " \t\r\n", &save)) != NULL && nargs < 8) {
            args[nargs++] = strtod(tok, NULL);
        }
        if (strcmp(cmd, "quit") == 0) break;
        if (strcmp(cmd, "poll") == 0) {
            if (poll_periodic(fd) != 0) fprintf(stderr, "poll: error\n");
            else printf("ok\n");
            continue;
        }
{{#each interfaces}}        if (strcmp(cmd, "{{name}}") == 0) {
            if (nargs != {{n_inputs}}) {
                fprintf(stderr, "usage: {{usage_hint}}\n");
                continue;
            }
{{#each ret_decls}}            double {{cname}} = 0.0;
{{/each}}            if ({{name}}(fd{{call_args}}{{ret_refs}}) != 0) {
                fprintf(stderr, "{{name}}: error\n");
                continue;
            }
            printf("ok{{#each returns}} {{name}}=%g{{/each}}"{{#each returns}}, ret_{{name}}{{/each}});
            printf("\n");
            continue;
        }
{{/each}}        fprintf(stderr, "unknown command %s\n", cmd);
    }
    close(fd);
    return 0;
}
""",
)

README_TEMPLATE = Template(
    "c-cli/README.md",
    """# {{doc_name}} driver (c-cli target)

Generated from device document "{{doc_name}}" version {{doc_version}}.
Canonical document sha256: {{content_hash}}

Build:

    cc -O2 -o {{doc_name}}-cli main.c -lm

Run against a device or simulator:

    ./{{doc_name}}-cli [host [port]]

Defaults to {{default_host}}:{{default_port}}. Commands are read line by
line from stdin: an interface name followed by numeric arguments
({{command_list}}). `poll` fires every periodic primitive once and `quit`
exits.

`emit <primitive> <args...>` prints the encoded frame and exits without
connecting: hex for positional formats, the raw line otherwise.
""",
)


def generate_c_cli(doc: RdisDocument, content_hash: str) -> dict[str, str]:
    context = build_context(doc, content_hash)
    return {
        "main.c": MAIN_TEMPLATE.render(context),
        "README.md": README_TEMPLATE.render(context),
    }
