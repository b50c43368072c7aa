"""Typed model of a robot device description.

A document declares how to talk to a device: physical connections, the wire
formats of firmware messages (primitives), developer-facing interfaces that
convert units via expressions, and mappings from framework-neutral concepts
(differential-drive velocity commands, odometry) to those interfaces.

Instances are built by :mod:`rdis.parser` and are immutable; all semantic
checks live in :func:`rdis.parser.validate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Union

from .expr import ExprAst

Number = Union[int, float]

SCHEMA_VERSION = "0.1"

#: positional field encoding -> (byte width, min value, max value)
ENCODINGS = {
    "u8": (1, 0, 255),
    "i8": (1, -128, 127),
    "u16be": (2, 0, 65535),
    "i16be": (2, -32768, 32767),
}


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding. ``path`` points into the document."""

    severity: str  # "error" | "warning"
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.severity} [{self.code}] at {self.path}: {self.message}"


@dataclass(frozen=True)
class TcpTransport:
    host: str
    port: int
    kind: str = "tcp"


@dataclass(frozen=True)
class SerialTransport:
    """Parses and validates, but cannot be opened by the runtime."""

    device: str
    baud: int
    kind: str = "serial"


Transport = Union[TcpTransport, SerialTransport]


@dataclass(frozen=True)
class Keepalive:
    primitive: str
    period_ms: int


@dataclass(frozen=True)
class Connection:
    id: str
    transport: Transport
    threading_model: str = "single"
    keepalive: Keepalive | None = None
    on_connect: tuple[str, ...] = ()


@dataclass(frozen=True)
class StateVar:
    name: str
    kind: str  # "int" | "float"
    initial: Number


@dataclass(frozen=True)
class FieldSpec:
    """One field of a positional frame. Width is implied by the encoding."""

    name: str
    offset: int
    width: int
    encoding: str  # u8 | i8 | i16be | u16be


@dataclass(frozen=True)
class PositionalFormat:
    frame_len: int
    command: int  # byte value at offset 0
    fields: tuple[FieldSpec, ...]
    kind: str = "positional"


@dataclass(frozen=True)
class DelimitedFormat:
    prefix: str
    fields: tuple[str, ...]
    separator: str = ","
    terminator: str = "\n"
    kind: str = "delimited"


MessageFormat = Union[PositionalFormat, DelimitedFormat]


@dataclass(frozen=True)
class Param:
    name: str
    kind: str  # "int" | "float"


@dataclass(frozen=True)
class OutputBinding:
    """Routes one decoded reply field to the caller or to a state variable."""

    field: str
    state_var: str | None = None  # None means return-targeted

    @property
    def to_return(self) -> bool:
        return self.state_var is None


@dataclass(frozen=True)
class Primitive:
    name: str
    connection: str
    write_format: MessageFormat
    read_format: MessageFormat | None = None
    period_ms: int | None = None  # None means adhoc
    inputs: tuple[Param, ...] = ()
    outputs: tuple[OutputBinding, ...] = ()

    @property
    def is_adhoc(self) -> bool:
        return self.period_ms is None


@dataclass(frozen=True)
class BoundExpr:
    """An expression as authored (kept verbatim for canonicalization) plus its AST."""

    src: str
    ast: ExprAst


@dataclass(frozen=True)
class InterfaceCall:
    primitive: str
    args: Mapping[str, BoundExpr] = field(default_factory=dict)


@dataclass(frozen=True)
class Interface:
    name: str
    inputs: tuple[Param, ...] = ()
    calls: tuple[InterfaceCall, ...] = ()
    returns: Mapping[str, BoundExpr] = field(default_factory=dict)


@dataclass(frozen=True)
class ConceptSpec:
    """A framework-neutral concept a mapping may target."""

    name: str
    kind: str  # "command" | "telemetry"
    fields: tuple[str, ...]


#: the recognized abstract concepts
CONCEPTS: dict[str, ConceptSpec] = {
    "position2d.command_velocity": ConceptSpec(
        "position2d.command_velocity", "command", ("linear_mps", "angular_radps")
    ),
    "position2d.odometry": ConceptSpec(
        "position2d.odometry", "telemetry", ("x_m", "y_m", "theta_rad")
    ),
}


@dataclass(frozen=True)
class AbstractMapping:
    """Binds a concept to an interface.

    For command concepts the binding keys are the interface inputs and the
    expressions range over the concept's fields; for telemetry concepts the
    keys are the concept's output fields and the expressions range over the
    interface's return names.
    """

    concept: str
    interface: str
    bindings: Mapping[str, BoundExpr] = field(default_factory=dict)


@dataclass(frozen=True)
class RdisDocument:
    name: str
    version: str
    rdis_version: str = SCHEMA_VERSION
    constants: Mapping[str, Number] = field(default_factory=dict)
    connections: tuple[Connection, ...] = ()
    state_vars: tuple[StateVar, ...] = ()
    primitives: tuple[Primitive, ...] = ()
    interfaces: tuple[Interface, ...] = ()
    mappings: tuple[AbstractMapping, ...] = ()

    def connection(self, conn_id: str) -> Connection:
        for c in self.connections:
            if c.id == conn_id:
                return c
        raise KeyError(conn_id)

    def primitive(self, name: str) -> Primitive:
        for p in self.primitives:
            if p.name == name:
                return p
        raise KeyError(name)

    def interface(self, name: str) -> Interface:
        for i in self.interfaces:
            if i.name == name:
                return i
        raise KeyError(name)

    def mapping(self, concept: str) -> AbstractMapping:
        for m in self.mappings:
            if m.concept == concept:
                return m
        raise KeyError(concept)

    def state_var(self, name: str) -> StateVar:
        for s in self.state_vars:
            if s.name == name:
                return s
        raise KeyError(name)
