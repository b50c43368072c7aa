"""Byte-level encoding and decoding of firmware frames.

Positional frames are fixed-length with a command byte at offset 0, named
fields at fixed byte offsets (16-bit fields big-endian), and zero fill
everywhere else. Delimited frames are one ASCII line: a prefix character,
comma-separated signed decimal integers in declared field order, and a
newline terminator. ``frame_scan`` splits a raw byte stream into complete
frames plus the unconsumed tail; it holds no state, so callers own buffering.
"""

from __future__ import annotations

import re

from .model import ENCODINGS, MessageFormat, PositionalFormat


class CodecError(Exception):
    pass


class CommandMismatch(CodecError):
    """The frame is well formed but carries a different command or prefix."""


_INT_RE = re.compile(rb"^-?[0-9]+$")


def _coerce_int(name: str, value) -> int:
    if isinstance(value, bool):
        raise CodecError(f"field {name!r}: booleans are not frame values")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    raise CodecError(f"field {name!r}: {value!r} is not an integer")


def encode(fmt: MessageFormat, values) -> bytes:
    """Build one frame from a name -> integer mapping covering every field."""
    names = (
        [f.name for f in fmt.fields] if isinstance(fmt, PositionalFormat) else list(fmt.fields)
    )
    extra = set(values) - set(names)
    if extra:
        raise CodecError(f"values {sorted(extra)} are not fields of this format")
    missing = set(names) - set(values)
    if missing:
        raise CodecError(f"missing values for fields {sorted(missing)}")

    if isinstance(fmt, PositionalFormat):
        frame = bytearray(fmt.frame_len)
        frame[0] = fmt.command
        for f in fmt.fields:
            value = _coerce_int(f.name, values[f.name])
            _, lo, hi = ENCODINGS[f.encoding]
            if not lo <= value <= hi:
                raise CodecError(
                    f"field {f.name!r}: {value} out of range for {f.encoding} ({lo}..{hi})"
                )
            frame[f.offset : f.offset + f.width] = value.to_bytes(
                f.width, "big", signed=f.encoding.startswith("i")
            )
        return bytes(frame)

    parts = [fmt.prefix]
    for name in fmt.fields:
        parts.append(str(_coerce_int(name, values[name])))
    return (fmt.separator.join(parts) + fmt.terminator).encode("ascii")


def decode(fmt: MessageFormat, frame: bytes) -> dict[str, int]:
    """Inverse of :func:`encode`. The command/prefix byte is verified."""
    if isinstance(fmt, PositionalFormat):
        if len(frame) != fmt.frame_len:
            raise CodecError(f"expected {fmt.frame_len} bytes, got {len(frame)}")
        if frame[0] != fmt.command:
            raise CommandMismatch(
                f"expected command 0x{fmt.command:02X}, got 0x{frame[0]:02X}"
            )
        return {
            f.name: int.from_bytes(
                frame[f.offset : f.offset + f.width], "big", signed=f.encoding.startswith("i")
            )
            for f in fmt.fields
        }

    term = fmt.terminator.encode("ascii")
    if not frame.endswith(term):
        raise CodecError("frame does not end with the terminator")
    body = frame[: -len(term)]
    if term in body:
        raise CodecError("frame contains an interior terminator")
    tokens = body.split(fmt.separator.encode("ascii"))
    if tokens[0] != fmt.prefix.encode("ascii"):
        raise CommandMismatch(f"expected prefix {fmt.prefix!r}, got {tokens[0]!r}")
    if len(tokens) - 1 != len(fmt.fields):
        raise CodecError(f"expected {len(fmt.fields)} fields, got {len(tokens) - 1}")
    out = {}
    for name, token in zip(fmt.fields, tokens[1:]):
        if not _INT_RE.match(token):
            raise CodecError(f"field {name!r}: {token!r} is not a signed decimal integer")
        out[name] = int(token)
    return out


def frame_scan(fmt: MessageFormat, buffer: bytes) -> tuple[list[bytes], bytes]:
    """Split ``buffer`` into complete frames and the incomplete remainder.

    Concatenating the frames and the remainder always reproduces the buffer;
    malformed frames surface later, at decode.
    """
    if isinstance(fmt, PositionalFormat):
        n = len(buffer) // fmt.frame_len
        frames = [buffer[i * fmt.frame_len : (i + 1) * fmt.frame_len] for i in range(n)]
        return frames, buffer[n * fmt.frame_len :]

    term = fmt.terminator.encode("ascii")
    frames = []
    start = 0
    while True:
        idx = buffer.find(term, start)
        if idx < 0:
            break
        frames.append(buffer[start : idx + len(term)])
        start = idx + len(term)
    return frames, buffer[start:]
