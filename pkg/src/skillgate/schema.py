"""Skill inventory: parse and validate the external schema file, normalize raw labels.

The schema file is a YAML document with a ``skills`` list; each entry defines one
annotation skill (id, name, linguistic level, label inventory, decision rules,
examples). Labels are canonicalized at parse time so that membership tests and
agreement statistics always operate on one canonical form per label.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import yaml

from .errors import SchemaError

DEFAULT_MISSING_MARKERS = frozenset({"", "na", "n/a", "null", "-"})

_WS_RUN = re.compile(r"\s+")


class LinguisticLevel(str, Enum):
    LEXICAL = "lexical"
    SYNTACTIC = "syntactic"
    SEMANTIC = "semantic"
    COLLOCATION = "collocation"
    PRAGMATIC = "pragmatic"


class OutcomeKind(str, Enum):
    IN_SCHEMA = "in_schema"
    OFF_SCHEMA = "off_schema"
    NULL = "null"


@dataclass(frozen=True)
class LabelOutcome:
    """Result of normalizing one raw value against a skill's label inventory."""

    kind: OutcomeKind
    value: str | None

    @classmethod
    def in_schema(cls, label: str) -> "LabelOutcome":
        return cls(OutcomeKind.IN_SCHEMA, label)

    @classmethod
    def off_schema(cls, raw: str) -> "LabelOutcome":
        return cls(OutcomeKind.OFF_SCHEMA, raw)

    @classmethod
    def null(cls) -> "LabelOutcome":
        return cls(OutcomeKind.NULL, None)

    @property
    def is_in_schema(self) -> bool:
        return self.kind is OutcomeKind.IN_SCHEMA

    @property
    def is_off_schema(self) -> bool:
        return self.kind is OutcomeKind.OFF_SCHEMA

    @property
    def is_null(self) -> bool:
        return self.kind is OutcomeKind.NULL


@dataclass(frozen=True)
class SkillExample:
    text: str
    label: str


@dataclass(frozen=True)
class SkillSpec:
    """One annotation skill: label inventory plus the material needed to apply it."""

    skill_id: str
    name: str
    level: LinguisticLevel
    labels: tuple[str, ...]
    rules: tuple[str, ...] = ()
    examples: tuple[SkillExample, ...] = ()
    applicability: str | None = None
    case_insensitive: bool = False

    def __post_init__(self) -> None:
        if not self.labels:
            raise SchemaError(f"skill {self.skill_id!r} has an empty label inventory")


@dataclass(frozen=True)
class SkillInventory:
    """Ordered, immutable collection of skills as read from one schema file."""

    skills: tuple[SkillSpec, ...]
    version: str
    source_digest: str
    missing_markers: frozenset[str] = field(default=DEFAULT_MISSING_MARKERS)

    def __iter__(self) -> Iterator[SkillSpec]:
        return iter(self.skills)

    def __len__(self) -> int:
        return len(self.skills)

    def __contains__(self, skill_id: str) -> bool:
        return any(s.skill_id == skill_id for s in self.skills)

    def __getitem__(self, skill_id: str) -> SkillSpec:
        for s in self.skills:
            if s.skill_id == skill_id:
                return s
        raise KeyError(skill_id)

    def get(self, skill_id: str) -> SkillSpec | None:
        try:
            return self[skill_id]
        except KeyError:
            return None

    @property
    def skill_ids(self) -> tuple[str, ...]:
        return tuple(s.skill_id for s in self.skills)

    def normalize(self, skill_id: str, raw: object) -> LabelOutcome:
        return normalize_label(self[skill_id], raw, missing_markers=self.missing_markers)


def _clean_text(raw: object) -> str:
    """Collapse whitespace runs and strip the ends; tolerate non-string input."""
    if raw is None:
        return ""
    return _WS_RUN.sub(" ", str(raw)).strip()


def _unquote_numeral(text: str) -> str:
    """Strip one layer of matching quotes when the quoted content is numeric."""
    if len(text) >= 3 and text[0] == text[-1] and text[0] in ("'", '"'):
        inner = text[1:-1].strip()
        if _canonical_numeral(inner) is not None:
            return inner
    return text


def _canonical_numeral(text: str) -> str | None:
    """Return the canonical string form of a numeric value, or None if not numeric.

    Integer-valued numbers collapse to the minimal integer string ("3.0" -> "3",
    "07" -> "7"); other finite numbers use Python's shortest float repr.
    """
    try:
        value = float(text)
    except ValueError:
        return None
    if value != value or value in (float("inf"), float("-inf")):
        return None
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def canonical_label(raw: object) -> str:
    """Canonical form used for both schema labels and annotated values."""
    text = _unquote_numeral(_clean_text(raw))
    numeral = _canonical_numeral(text)
    return numeral if numeral is not None else text


def normalize_label(
    skill: SkillSpec,
    raw: object,
    *,
    missing_markers: frozenset[str] = DEFAULT_MISSING_MARKERS,
) -> LabelOutcome:
    """Map one raw annotated value onto the skill's canonical label space.

    Total function: empty/whitespace/missing-marker input gives Null, canonical
    membership gives InSchema, anything else gives OffSchema with the cleaned raw
    text. Idempotent on its own InSchema results.
    """
    text = _clean_text(raw)
    if text.casefold() in missing_markers:
        return LabelOutcome.null()
    candidate = canonical_label(text)
    if candidate in skill.labels:
        return LabelOutcome.in_schema(candidate)
    if skill.case_insensitive:
        folded = candidate.casefold()
        for label in skill.labels:
            if label.casefold() == folded:
                return LabelOutcome.in_schema(label)
    return LabelOutcome.off_schema(candidate)


_REQUIRED_KEYS = ("id", "name", "level", "labels")
_OPTIONAL_KEYS = ("rules", "examples", "applicability", "case_insensitive")


def _parse_skill(entry: object, index: int, missing_markers: frozenset[str]) -> SkillSpec:
    where = f"skills[{index}]"
    if not isinstance(entry, dict):
        raise SchemaError(f"{where}: expected a mapping, got {type(entry).__name__}")
    unknown = set(entry) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
    for key in _REQUIRED_KEYS:
        if key not in entry:
            raise SchemaError(f"{where}: missing required key {key!r}")

    skill_id = _clean_text(entry["id"])
    if not skill_id:
        raise SchemaError(f"{where}: empty skill id")
    where = f"skill {skill_id!r}"

    level_raw = _clean_text(entry["level"]).lower()
    try:
        level = LinguisticLevel(level_raw)
    except ValueError:
        valid = ", ".join(l.value for l in LinguisticLevel)
        raise SchemaError(f"{where}: unknown linguistic level {level_raw!r} (expected one of: {valid})")

    raw_labels = entry["labels"]
    if not isinstance(raw_labels, list) or not raw_labels:
        raise SchemaError(f"{where}: 'labels' must be a non-empty list")
    labels: list[str] = []
    for raw in raw_labels:
        label = canonical_label(raw)
        if not label:
            raise SchemaError(f"{where}: empty label after normalization")
        if label.casefold() in missing_markers:
            raise SchemaError(f"{where}: label {label!r} collides with a missing-value marker")
        if label in labels:
            raise SchemaError(f"{where}: duplicate label {label!r} after normalization")
        labels.append(label)

    rules = tuple(_clean_text(r) for r in entry.get("rules") or ())
    case_insensitive = bool(entry.get("case_insensitive", False))

    examples: list[SkillExample] = []
    for j, ex in enumerate(entry.get("examples") or ()):
        if not isinstance(ex, dict) or "text" not in ex or "label" not in ex:
            raise SchemaError(f"{where}: examples[{j}] must be a mapping with 'text' and 'label'")
        label = canonical_label(ex["label"])
        if label not in labels:
            if not case_insensitive or label.casefold() not in {l.casefold() for l in labels}:
                raise SchemaError(f"{where}: examples[{j}] uses off-schema label {label!r}")
        examples.append(SkillExample(text=str(ex["text"]), label=label))

    applicability = entry.get("applicability")
    return SkillSpec(
        skill_id=skill_id,
        name=_clean_text(entry["name"]),
        level=level,
        labels=tuple(labels),
        rules=rules,
        examples=tuple(examples),
        applicability=_clean_text(applicability) if applicability else None,
        case_insensitive=case_insensitive,
    )


def parse_inventory(document: str) -> SkillInventory:
    """Parse a schema document into an immutable skill inventory.

    Raises SchemaError with position information for syntax problems and with the
    offending skill id for semantic problems (duplicate ids, duplicate labels,
    unknown levels).
    """
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise SchemaError(f"schema syntax error: {getattr(exc, 'problem', exc)}",
                              line=mark.line + 1, column=mark.column + 1) from exc
        raise SchemaError(f"schema syntax error: {exc}") from exc

    if not isinstance(data, dict):
        raise SchemaError("schema document must be a mapping with a 'skills' list")
    unknown = set(data) - {"version", "skills", "missing_markers"}
    if unknown:
        raise SchemaError(f"unknown top-level keys {sorted(unknown)}")
    entries = data.get("skills")
    if not isinstance(entries, list) or not entries:
        raise SchemaError("schema document must contain a non-empty 'skills' list")

    markers = data.get("missing_markers")
    if markers is None:
        missing_markers = DEFAULT_MISSING_MARKERS
    else:
        if not isinstance(markers, list):
            raise SchemaError("'missing_markers' must be a list of strings")
        missing_markers = frozenset(_clean_text(m).casefold() for m in markers) | frozenset({""})

    skills: list[SkillSpec] = []
    seen: set[str] = set()
    for i, entry in enumerate(entries):
        skill = _parse_skill(entry, i, missing_markers)
        if skill.skill_id in seen:
            raise SchemaError(f"duplicate skill id {skill.skill_id!r}")
        seen.add(skill.skill_id)
        skills.append(skill)

    return SkillInventory(
        skills=tuple(skills),
        version=_clean_text(data.get("version", "unversioned")),
        source_digest=hashlib.sha256(document.encode("utf-8")).hexdigest(),
        missing_markers=missing_markers,
    )


def load_inventory(path: str | Path) -> SkillInventory:
    return parse_inventory(Path(path).read_text(encoding="utf-8"))


def serialize_inventory(inventory: SkillInventory) -> str:
    """Render an inventory back to schema-file text; parse(serialize(x)) == x structurally."""
    doc: dict = {"version": inventory.version}
    if inventory.missing_markers != DEFAULT_MISSING_MARKERS:
        doc["missing_markers"] = sorted(inventory.missing_markers)
    doc["skills"] = []
    for s in inventory.skills:
        entry: dict = {
            "id": s.skill_id,
            "name": s.name,
            "level": s.level.value,
            "labels": list(s.labels),
        }
        if s.rules:
            entry["rules"] = list(s.rules)
        if s.examples:
            entry["examples"] = [{"text": e.text, "label": e.label} for e in s.examples]
        if s.applicability:
            entry["applicability"] = s.applicability
        if s.case_insensitive:
            entry["case_insensitive"] = True
        doc["skills"].append(entry)
    return yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)


def structurally_equal(a: SkillInventory, b: SkillInventory) -> bool:
    """Equality ignoring the source digest (which tracks file bytes, not content)."""
    return a.skills == b.skills and a.version == b.version and a.missing_markers == b.missing_markers


def lint_report(document: str) -> list[str]:
    """Validate a schema document; returns human-readable findings (empty = clean)."""
    try:
        inventory = parse_inventory(document)
    except SchemaError as exc:
        return [f"error: {exc}"]
    findings: list[str] = []
    for skill in inventory:
        if not skill.rules:
            findings.append(f"note: skill {skill.skill_id} has no decision rules")
        if not skill.examples:
            findings.append(f"note: skill {skill.skill_id} has no examples")
    return findings


def resolve_skills(inventory: SkillInventory, selector: str) -> tuple[SkillSpec, ...]:
    """Resolve a feature selector ('all' or one skill id) against the inventory."""
    if selector == "all":
        return inventory.skills
    skill = inventory.get(selector)
    if skill is None:
        raise KeyError(f"unknown skill id {selector!r} (have: {', '.join(inventory.skill_ids)})")
    return (skill,)


def ensure_ids_exist(inventory: SkillInventory, ids: Iterable[str]) -> None:
    missing = [i for i in ids if i not in inventory]
    if missing:
        raise KeyError(f"unknown skill ids: {', '.join(missing)}")
