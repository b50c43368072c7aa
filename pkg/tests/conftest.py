import pathlib

import pytest

from rdis.parser import parse_document

REPO_ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO_ROOT / "fixtures"
NEGATIVE_DIR = pathlib.Path(__file__).parent / "fixtures" / "negative"
GOLDEN_DIR = pathlib.Path(__file__).parent / "golden"


def parse_fixture(name: str):
    text = (FIXTURE_DIR / name).read_text(encoding="utf-8")
    doc, diags = parse_document(text)
    assert doc is not None, f"fixture {name} failed to parse: {[str(d) for d in diags]}"
    return doc


@pytest.fixture(scope="session")
def finchling_text() -> str:
    return (FIXTURE_DIR / "finchling.rdis.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def koalette_text() -> str:
    return (FIXTURE_DIR / "koalette.rdis.json").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def finchling_doc():
    return parse_fixture("finchling.rdis.json")


@pytest.fixture(scope="session")
def koalette_doc():
    return parse_fixture("koalette.rdis.json")
