"""Skill-screened annotation workbench.

Parses an external skill schema, runs the two-round human gold protocol and
model annotation under constrained output, and derives operability, retention,
feasibility, and agreement reports from the stored cells.
"""
from .schema import (
    LabelOutcome,
    LinguisticLevel,
    OutcomeKind,
    SkillInventory,
    SkillSpec,
    load_inventory,
    normalize_label,
    parse_inventory,
    serialize_inventory,
)
from .store import CorpusStore, Instance, LabelCell, Round, Split

__all__ = [
    "CorpusStore",
    "Instance",
    "LabelCell",
    "LabelOutcome",
    "LinguisticLevel",
    "OutcomeKind",
    "Round",
    "SkillInventory",
    "SkillSpec",
    "Split",
    "load_inventory",
    "normalize_label",
    "parse_inventory",
    "serialize_inventory",
]

__version__ = "0.1.0"
