from __future__ import annotations

import csv
import io
from pathlib import Path

import pytest

from skillgate import fixtures
from skillgate.schema import SkillInventory, parse_inventory, serialize_inventory
from skillgate.simulate import synthetic_instances
from skillgate.store import CorpusStore

SYNTHETIC_SCHEMA = """\
version: "synthetic-tests"
skills:
  - id: S1
    name: Shape
    level: lexical
    labels: [circle, square, triangle, hexagon]
    rules: ["Pick the drawn shape."]
    examples:
      - text: "a round thing"
        label: circle
  - id: S2
    name: Size
    level: syntactic
    labels: ["1", "2", "3"]
  - id: S3
    name: Shade
    level: semantic
    labels: [light, dark, mixed, unknown_shade]
  - id: S4
    name: Texture
    level: pragmatic
    labels: [smooth, rough, striped, dotted, plain]
"""


@pytest.fixture(scope="session")
def reference_inventory() -> SkillInventory:
    return fixtures.reference_inventory()


@pytest.fixture(scope="session")
def synthetic_inventory() -> SkillInventory:
    return parse_inventory(SYNTHETIC_SCHEMA)


@pytest.fixture
def synthetic_store(tmp_path: Path, synthetic_inventory) -> CorpusStore:
    store = CorpusStore.create(tmp_path / "store", serialize_inventory(synthetic_inventory))
    store.upsert_instances(synthetic_instances(30, [f"lex{i}" for i in range(6)]))
    return store


def write_csv(path: Path, header: list[str], rows: list[list[object]]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buffer.getvalue(), encoding="utf-8")
    return path


@pytest.fixture
def csv_writer():
    return write_csv
