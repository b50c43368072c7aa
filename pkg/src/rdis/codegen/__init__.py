"""Driver source generation from validated documents.

Targets are registered here; each consumes a document plus the sha256 of
its canonical form and produces a file map. Identical documents always
yield byte-identical artifacts, so golden files are the contract.
"""

from __future__ import annotations

import hashlib
import pathlib
from dataclasses import dataclass

from ..model import RdisDocument
from ..parser import canonicalize, validate
from .c_cli import UnsupportedFeatureError, generate_c_cli
from .engine import Template, TemplateError

__all__ = [
    "GeneratedArtifact",
    "Template",
    "TemplateError",
    "TargetDescriptor",
    "UnknownTargetError",
    "UnsupportedFeatureError",
    "generate",
    "list_targets",
    "write_artifact",
]


class UnknownTargetError(Exception):
    pass


@dataclass(frozen=True)
class TargetDescriptor:
    name: str
    description: str
    files: tuple[str, ...]


@dataclass(frozen=True)
class GeneratedArtifact:
    target: str
    document: str  # document name
    content_hash: str  # sha256 of the canonical document
    files: dict[str, str]


_TARGETS = {
    "c-cli": (
        TargetDescriptor(
            "c-cli",
            "standalone C command-line driver (tcp connect, read-eval loop, emit mode)",
            ("main.c", "README.md"),
        ),
        generate_c_cli,
    ),
}


def list_targets() -> list[TargetDescriptor]:
    return [desc for desc, _ in _TARGETS.values()]


def generate(doc: RdisDocument, target: str) -> GeneratedArtifact:
    """Render ``target`` for ``doc``; the document must validate cleanly."""
    if target not in _TARGETS:
        known = ", ".join(sorted(_TARGETS))
        raise UnknownTargetError(f"unknown target {target!r} (known: {known})")
    problems = [d for d in validate(doc) if d.severity == "error"]
    if problems:
        raise ValueError(f"document does not validate: {problems[0]}")
    canonical = canonicalize(doc)
    content_hash = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    _, render = _TARGETS[target]
    files = render(doc, content_hash)
    return GeneratedArtifact(target, doc.name, content_hash, files)


def write_artifact(artifact: GeneratedArtifact, out_dir, force: bool = False) -> list[pathlib.Path]:
    """Write files under ``<out_dir>/<document>/<target>/``; refuse overwrites unless forced."""
    root = pathlib.Path(out_dir) / artifact.document / artifact.target
    written = []
    for name, text in sorted(artifact.files.items()):
        path = root / name
        if path.exists() and not force:
            raise FileExistsError(f"{path} exists; pass force to overwrite")
        written.append(path)
    root.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(artifact.files.items()):
        (root / name).write_text(text, encoding="utf-8")
    return written
