from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillgate.errors import SchemaError
from skillgate.schema import (
    LabelOutcome,
    normalize_label,
    parse_inventory,
    serialize_inventory,
    structurally_equal,
)

# Per-skill (label count, example count) from the published inventory.
PUBLISHED_COUNTS = {
    "F1": (7, 3), "F2": (5, 3), "F3": (6, 2), "F4": (8, 2), "F5": (10, 2),
    "F6": (6, 2), "F7": (5, 2), "F8": (10, 2), "F9": (8, 2), "F10a": (8, 3),
    "F10b": (7, 3), "F11": (8, 3), "F12a": (4, 3), "F12b": (5, 3),
}

MINIMAL = """\
skills:
  - id: X1
    name: Minimal
    level: lexical
    labels: [only]
"""


def test_reference_inventory_matches_published_counts(reference_inventory):
    assert len(reference_inventory) == 14
    triples = {
        s.skill_id: (len(s.labels), len(s.examples)) for s in reference_inventory
    }
    assert triples == PUBLISHED_COUNTS


def test_reference_inventory_levels(reference_inventory):
    levels = {s.skill_id: s.level.value for s in reference_inventory}
    assert levels["F1"] == "lexical"
    assert levels["F4"] == "syntactic"
    assert levels["F7"] == "semantic"
    assert levels["F10a"] == "collocation"
    assert levels["F12b"] == "pragmatic"
    assert reference_inventory["F7"].applicability  # valency is predicative-only


def test_minimal_document():
    inventory = parse_inventory(MINIMAL)
    assert len(inventory) == 1
    assert inventory["X1"].labels == ("only",)
    assert inventory.version == "unversioned"


def test_duplicate_skill_id_rejected():
    doc = MINIMAL + "  - id: X1\n    name: Again\n    level: lexical\n    labels: [a]\n"
    with pytest.raises(SchemaError, match="duplicate skill id"):
        parse_inventory(doc)


def test_duplicate_label_after_normalization_rejected():
    doc = """\
skills:
  - id: X1
    name: Dup
    level: lexical
    labels: ["3", "3.0"]
"""
    with pytest.raises(SchemaError, match="duplicate label"):
        parse_inventory(doc)


def test_unknown_level_rejected():
    doc = MINIMAL.replace("lexical", "phonological")
    with pytest.raises(SchemaError, match="unknown linguistic level"):
        parse_inventory(doc)


def test_syntax_error_reports_position():
    with pytest.raises(SchemaError) as err:
        parse_inventory("skills:\n  - id: X1\n   bad indent: [\n")
    assert err.value.line is not None


def test_label_colliding_with_missing_marker_rejected():
    doc = MINIMAL.replace("[only]", "['-']")
    with pytest.raises(SchemaError, match="missing-value marker"):
        parse_inventory(doc)


def test_example_with_off_schema_label_rejected():
    doc = """\
skills:
  - id: X1
    name: Bad example
    level: lexical
    labels: [a, b]
    examples:
      - text: whatever
        label: c
"""
    with pytest.raises(SchemaError, match="off-schema label"):
        parse_inventory(doc)


def test_roundtrip_serialize_parse(reference_inventory, synthetic_inventory):
    for inventory in (reference_inventory, synthetic_inventory):
        again = parse_inventory(serialize_inventory(inventory))
        assert structurally_equal(inventory, again)


# -- normalization ---------------------------------------------------------


def test_numeric_equivalents_collapse(reference_inventory):
    f2 = reference_inventory["F2"]  # labels "1".."5"
    for raw in ("3", "3.0", ' "3" ', "'3'", "03", " 3 "):
        assert normalize_label(f2, raw) == LabelOutcome.in_schema("3"), raw


def test_empty_and_markers_are_null(reference_inventory):
    f1 = reference_inventory["F1"]
    for raw in ("", "   ", "NA", "n/a", "null", "-", None):
        assert normalize_label(f1, raw).is_null, repr(raw)


def test_off_schema_keeps_raw(reference_inventory):
    f4 = reference_inventory["F4"]
    outcome = normalize_label(f4, "AT")
    assert outcome.is_off_schema and outcome.value == "AT"
    assert normalize_label(f4, "AD").is_off_schema


def test_whitespace_collapsed_before_membership():
    inventory = parse_inventory(
        "skills:\n  - {id: X1, name: N, level: lexical, labels: ['two words']}\n"
    )
    assert inventory["X1"].labels == ("two words",)
    assert normalize_label(inventory["X1"], "  two   words ").is_in_schema


def test_case_insensitive_flag():
    doc = "skills:\n  - {id: X1, name: N, level: lexical, labels: [Noun], case_insensitive: true}\n"
    skill = parse_inventory(doc)["X1"]
    assert normalize_label(skill, "noun") == LabelOutcome.in_schema("Noun")
    # default is case-sensitive
    strict = parse_inventory("skills:\n  - {id: X1, name: N, level: lexical, labels: [Noun]}\n")["X1"]
    assert normalize_label(strict, "noun").is_off_schema


def test_canonical_labels_are_fixed_points(reference_inventory):
    for skill in reference_inventory:
        for label in skill.labels:
            assert normalize_label(skill, label) == LabelOutcome.in_schema(label)


def test_normalize_idempotent_on_in_schema(reference_inventory):
    f2 = reference_inventory["F2"]
    first = normalize_label(f2, "3.0")
    assert normalize_label(f2, first.value) == first


@given(raw=st.text(max_size=30))
@settings(max_examples=300, deadline=None)
def test_normalize_never_invents_in_schema_labels(raw):
    inventory = parse_inventory(SYNTH)
    for skill in inventory:
        outcome = normalize_label(skill, raw, missing_markers=inventory.missing_markers)
        if outcome.is_in_schema:
            assert outcome.value in skill.labels
        elif outcome.is_null:
            assert outcome.value is None


SYNTH = """\
skills:
  - {id: A, name: A, level: lexical, labels: ["1", "2", "10"]}
  - {id: B, name: B, level: semantic, labels: [x, Y z]}
"""


def test_custom_missing_markers():
    doc = "missing_markers: [none, '']\n" + MINIMAL
    inventory = parse_inventory(doc)
    assert inventory.normalize("X1", "NONE").is_null
    assert inventory.normalize("X1", "").is_null
    # default markers no longer apply
    assert inventory.normalize("X1", "NA").is_off_schema
