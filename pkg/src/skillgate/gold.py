"""Two-round gold protocol: disputes, focused re-annotation worklists, and the
two gold standards (first-pass agreement vs post-reconciliation convergence).

A position is assessable only when both annotators gave in-schema labels; a
position where either side is empty is excluded from disputes, agreement
statistics, and gold alike.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ProtocolViolation
from .schema import LabelOutcome
from .stats import AgreementResult, safe_kappa
from .store import LabelCell, Round


class Resolution(str, Enum):
    UNRESOLVED = "unresolved"
    RECONCILED = "reconciled"
    PERSISTENT = "persistent"


class Provenance(str, Enum):
    ROUND1_AGREEMENT = "round1_agreement"
    ROUND2_RECONCILED = "round2_reconciled"


@dataclass(frozen=True)
class DisputeCell:
    instance_id: str
    skill_id: str
    labels: tuple[str, str]
    resolution: Resolution = Resolution.UNRESOLVED

    @property
    def position(self) -> tuple[str, str]:
        return (self.instance_id, self.skill_id)


@dataclass(frozen=True)
class GoldCell:
    instance_id: str
    skill_id: str
    label: str
    provenance: Provenance

    @property
    def position(self) -> tuple[str, str]:
        return (self.instance_id, self.skill_id)


@dataclass(frozen=True)
class OperabilityRecord:
    """Per-skill outcome of the two-round protocol (one table row per skill)."""

    skill_id: str
    round1_kappa: float | None
    final_kappa: float | None
    gold_coverage: float
    reconciliation_rate: float | None
    round1_disagreements: int
    round2_reconciled: int


Position = tuple[str, str]


def _outcome_pairs(
    cells: Iterable[LabelCell],
    annotators: tuple[str, str],
    round: Round,
) -> dict[Position, tuple[LabelOutcome | None, LabelOutcome | None]]:
    """Positions -> (first annotator outcome, second annotator outcome) for one round."""
    pairs: dict[Position, list[LabelOutcome | None]] = {}
    index = {a: i for i, a in enumerate(annotators)}
    for cell in cells:
        if cell.round is not round or cell.annotator_id not in index:
            continue
        slot = pairs.setdefault((cell.instance_id, cell.skill_id), [None, None])
        slot[index[cell.annotator_id]] = cell.outcome
    return {pos: (a, b) for pos, (a, b) in pairs.items()}


def final_outcome_pairs(
    cells: Iterable[LabelCell],
    annotators: tuple[str, str],
) -> dict[Position, tuple[LabelOutcome | None, LabelOutcome | None]]:
    """Per-annotator final outcome per position: the round-2 value where one
    exists, the round-1 value otherwise (the protocol's only revision path)."""
    cells = list(cells)
    r1 = _outcome_pairs(cells, annotators, Round.ROUND1)
    r2 = _outcome_pairs(cells, annotators, Round.ROUND2)
    final: dict[Position, tuple[LabelOutcome | None, LabelOutcome | None]] = {}
    for pos, (a1, a2) in r1.items():
        b1, b2 = r2.get(pos, (None, None))
        final[pos] = (b1 if b1 is not None else a1, b2 if b2 is not None else a2)
    return final


def _missing_annotators(cells: Sequence[LabelCell], annotators: tuple[str, str]) -> list[str]:
    present = {c.annotator_id for c in cells if c.round is Round.ROUND1}
    return [a for a in annotators if a not in present]


def round2_worklist(cells: Iterable[LabelCell], annotators: tuple[str, str]) -> list[DisputeCell]:
    """Exactly the round-1 disputes, ordered (instance_id, skill_id).

    A dispute needs two in-schema labels that differ; both annotators receive
    the same worklist.
    """
    cells = list(cells)
    missing = _missing_annotators(cells, annotators)
    if missing:
        raise ProtocolViolation(f"no round-1 cells for annotator(s): {', '.join(missing)}")
    disputes: list[DisputeCell] = []
    for pos, (a, b) in sorted(_outcome_pairs(cells, annotators, Round.ROUND1).items()):
        if a is None or b is None or not (a.is_in_schema and b.is_in_schema):
            continue  # not assessable: never a dispute
        if a.value != b.value:
            disputes.append(DisputeCell(pos[0], pos[1], (a.value, b.value)))  # type: ignore[arg-type]
    return disputes


def resolve_disputes(cells: Iterable[LabelCell], annotators: tuple[str, str]) -> list[DisputeCell]:
    """Worklist with each dispute's resolution from the round-2 cells.

    Reconciled requires equal in-schema round-2 labels from both annotators;
    anything else (absent, partial, null, or still different) is persistent.
    """
    cells = list(cells)
    r2 = _outcome_pairs(cells, annotators, Round.ROUND2)
    resolved: list[DisputeCell] = []
    for dispute in round2_worklist(cells, annotators):
        a, b = r2.get(dispute.position, (None, None))
        if a is not None and b is not None and a.is_in_schema and b.is_in_schema and a.value == b.value:
            resolution = Resolution.RECONCILED
        else:
            resolution = Resolution.PERSISTENT
        resolved.append(DisputeCell(dispute.instance_id, dispute.skill_id, dispute.labels, resolution))
    return resolved


def _check_round2_scope(cells: Sequence[LabelCell], annotators: tuple[str, str]) -> None:
    dispute_positions = {d.position for d in round2_worklist(cells, annotators)}
    r2_positions = set(_outcome_pairs(cells, annotators, Round.ROUND2))
    rogue = sorted(r2_positions - dispute_positions)
    if rogue:
        raise ProtocolViolation(
            f"round-2 cells exist for non-disputed position(s): {rogue[:5]}"
            + (f" (+{len(rogue) - 5} more)" if len(rogue) > 5 else "")
        )


def build_gold(
    cells: Iterable[LabelCell],
    mode: str,
    annotators: tuple[str, str],
) -> list[GoldCell]:
    """Construct the gold standard.

    mode="round1": first-pass agreements only. mode="final": first-pass
    agreements plus disputes reconciled in round 2. Persistent disputes and
    not-assessable positions never enter either gold.
    """
    if mode not in ("round1", "final"):
        raise ValueError(f"mode must be 'round1' or 'final', got {mode!r}")
    cells = list(cells)
    _check_round2_scope(cells, annotators)
    gold: list[GoldCell] = []
    for pos, (a, b) in sorted(_outcome_pairs(cells, annotators, Round.ROUND1).items()):
        if a is None or b is None or not (a.is_in_schema and b.is_in_schema):
            continue
        if a.value == b.value:
            gold.append(GoldCell(pos[0], pos[1], a.value, Provenance.ROUND1_AGREEMENT))  # type: ignore[arg-type]
    if mode == "final":
        r2 = _outcome_pairs(cells, annotators, Round.ROUND2)
        for dispute in round2_worklist(cells, annotators):
            a, b = r2.get(dispute.position, (None, None))
            if a is not None and b is not None and a.is_in_schema and b.is_in_schema and a.value == b.value:
                gold.append(
                    GoldCell(dispute.instance_id, dispute.skill_id, a.value, Provenance.ROUND2_RECONCILED)
                )
    return sorted(gold, key=lambda g: g.position)


def operability_record(
    skill_id: str,
    cells: Iterable[LabelCell],
    annotators: tuple[str, str],
    validation_size: int,
    kappa_fn: Callable[[Sequence[tuple[str, str]]], AgreementResult] = safe_kappa,
) -> OperabilityRecord:
    """All Table-row quantities for one skill from its stored cells.

    round1 kappa runs over assessable first-pass pairs; final kappa over the
    per-annotator final labels (round-2 value where revisited) at positions where
    both are in-schema, so persistent disputes still depress it.
    """
    skill_cells = [c for c in cells if c.skill_id == skill_id]
    r1_pairs = [
        (a.value, b.value)
        for (a, b) in _outcome_pairs(skill_cells, annotators, Round.ROUND1).values()
        if a is not None and b is not None and a.is_in_schema and b.is_in_schema
    ]
    r1 = kappa_fn(sorted(r1_pairs))  # type: ignore[arg-type]

    disputes = resolve_disputes(skill_cells, annotators)
    reconciled = sum(1 for d in disputes if d.resolution is Resolution.RECONCILED)
    rate = reconciled / len(disputes) if disputes else None

    final_pairs = [
        (a.value, b.value)
        for (a, b) in final_outcome_pairs(skill_cells, annotators).values()
        if a is not None and b is not None and a.is_in_schema and b.is_in_schema
    ]
    final = kappa_fn(sorted(final_pairs))  # type: ignore[arg-type]

    gold = build_gold(skill_cells, "final", annotators)
    coverage = len(gold) / validation_size if validation_size else 0.0

    return OperabilityRecord(
        skill_id=skill_id,
        round1_kappa=r1.kappa,
        final_kappa=final.kappa,
        gold_coverage=coverage,
        reconciliation_rate=rate,
        round1_disagreements=len(disputes),
        round2_reconciled=reconciled,
    )


def operability_records(
    cells: Iterable[LabelCell],
    skill_ids: Sequence[str],
    annotators: tuple[str, str],
    validation_size: int,
) -> list[OperabilityRecord]:
    cells = list(cells)
    return [operability_record(s, cells, annotators, validation_size) for s in skill_ids]


def gold_label_counts(gold: Iterable[GoldCell]) -> Mapping[str, int]:
    """Distinct attested gold labels per skill (retention's degeneracy test)."""
    per_skill: dict[str, set[str]] = {}
    for g in gold:
        per_skill.setdefault(g.skill_id, set()).add(g.label)
    return {s: len(labels) for s, labels in per_skill.items()}
