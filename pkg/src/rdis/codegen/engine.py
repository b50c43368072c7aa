"""Minimal deterministic template engine: placeholders, each, if.

Syntax::

    {{name}}                substitute a value (dotted paths allowed)
    {{#each items}}...{{/each}}   repeat the body once per item; the item
                                  becomes the innermost scope ({{.}} is the
                                  item itself, dict keys resolve directly)
    {{#if flag}}...{{/if}}        render the body when the value is truthy

Lookups walk the scope stack innermost-first. An unknown placeholder is a
render error, never silent empty output.
"""

from __future__ import annotations

import re
from typing import Any

_TAG = re.compile(r"\{\{(.*?)\}\}")

_MISSING = object()


class TemplateError(Exception):
    pass


def _parse(text: str, name: str):
    """Build a node tree: ("text", s) | ("var", path) | ("each"/"if", path, children)."""
    pos = 0
    stack: list[tuple[str, str, list]] = [("root", "", [])]
    for m in _TAG.finditer(text):
        if m.start() > pos:
            stack[-1][2].append(("text", text[pos : m.start()]))
        pos = m.end()
        tag = m.group(1).strip()
        if tag.startswith("#each "):
            stack.append(("each", tag[6:].strip(), []))
        elif tag.startswith("#if "):
            stack.append(("if", tag[4:].strip(), []))
        elif tag in ("/each", "/if"):
            kind, path, children = stack.pop()
            if kind != tag[1:] or kind == "root":
                raise TemplateError(f"{name}: unbalanced {{{{{tag}}}}}")
            stack[-1][2].append((kind, path, children))
        elif tag.startswith("#") or tag.startswith("/"):
            raise TemplateError(f"{name}: unknown construct {{{{{tag}}}}}")
        else:
            stack[-1][2].append(("var", tag))
    if len(stack) != 1:
        raise TemplateError(f"{name}: unclosed {{{{#{stack[-1][0]}}}}}")
    if pos < len(text):
        stack[-1][2].append(("text", text[pos:]))
    return stack[0][2]


def _lookup(path: str, scopes: list[Any], name: str):
    if path == ".":
        return scopes[-1]
    head, _, rest = path.partition(".")
    for scope in reversed(scopes):
        if isinstance(scope, dict) and head in scope:
            value = scope[head]
            while rest:
                key, _, rest = rest.partition(".")
                if not (isinstance(value, dict) and key in value):
                    raise TemplateError(f"{name}: unknown placeholder {path!r}")
                value = value[key]
            return value
    raise TemplateError(f"{name}: unknown placeholder {path!r}")


def _render_nodes(nodes, scopes, out: list[str], name: str) -> None:
    for node in nodes:
        kind = node[0]
        if kind == "text":
            out.append(node[1])
        elif kind == "var":
            value = _lookup(node[1], scopes, name)
            if isinstance(value, bool) or value is None or isinstance(value, (dict, list)):
                raise TemplateError(f"{name}: {node[1]!r} is not a printable value")
            out.append(str(value))
        elif kind == "if":
            if _lookup(node[1], scopes, name):
                _render_nodes(node[2], scopes, out, name)
        else:  # each
            items = _lookup(node[1], scopes, name)
            if not isinstance(items, (list, tuple)):
                raise TemplateError(f"{name}: {node[1]!r} is not iterable")
            for item in items:
                _render_nodes(node[2], scopes + [item], out, name)


class Template:
    """A named template; rendering is deterministic in the context."""

    def __init__(self, name: str, text: str):
        self.name = name
        self.text = text
        self._nodes = _parse(text, name)

    def render(self, context: dict) -> str:
        out: list[str] = []
        _render_nodes(self._nodes, [context], out, self.name)
        return "".join(out)
