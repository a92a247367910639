"""Decision layers over the reliability statistics: operability classification,
retention screening, feasibility tiers, three-level difficulty correlations,
invalid-output diagnosis, and the third-voice agreement summary.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .gold import GoldCell, OperabilityRecord, round2_worklist
from .schema import SkillInventory
from .stats import (
    AgreementMatrix,
    CorrelationResult,
    eval_vs_gold,
    pairwise_matrix,
    pearson_r_p,
)
from .store import LabelCell, Round


class Status(str, Enum):
    DIRECTLY_OPERABLE = "directly_operable"
    RECOVERABLE = "recoverable"
    STRUCTURALLY_UNDERSPECIFIED = "structurally_underspecified"


class Tier(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass(frozen=True)
class ClassifierConfig:
    """Thresholds of the operability decision rule (defaults are the published cutoffs)."""

    round1_threshold: float = 0.50
    final_direct_threshold: float = 0.60
    final_recoverable_threshold: float = 0.50
    reconciliation_threshold: float = 0.30
    degenerate_policy: Status = Status.STRUCTURALLY_UNDERSPECIFIED


@dataclass(frozen=True)
class OperabilityStatus:
    status: Status
    reason: str


def classify_operability(
    record: OperabilityRecord,
    config: ClassifierConfig = ClassifierConfig(),
) -> OperabilityStatus:
    """Three-way operability decision.

    The reconciliation rate, not the final kappa alone, decides recoverability:
    a skill whose first-pass disputes never close in round 2 stays structurally
    underspecified no matter how high its final kappa.
    """
    if record.round1_kappa is None:
        return OperabilityStatus(config.degenerate_policy, "degenerate: no label variance at round 1")
    if (
        record.round1_kappa >= config.round1_threshold
        and record.final_kappa is not None
        and record.final_kappa >= config.final_direct_threshold
    ):
        return OperabilityStatus(Status.DIRECTLY_OPERABLE, "round-1 and final agreement above thresholds")
    if (
        record.final_kappa is not None
        and record.final_kappa >= config.final_recoverable_threshold
        and record.reconciliation_rate is not None
        and record.reconciliation_rate > config.reconciliation_threshold
    ):
        return OperabilityStatus(Status.RECOVERABLE, "focused re-annotation closes first-pass disputes")
    if record.final_kappa is None:
        return OperabilityStatus(Status.STRUCTURALLY_UNDERSPECIFIED, "degenerate final agreement")
    if record.final_kappa < config.final_recoverable_threshold:
        return OperabilityStatus(Status.STRUCTURALLY_UNDERSPECIFIED, "final agreement below threshold")
    return OperabilityStatus(
        Status.STRUCTURALLY_UNDERSPECIFIED,
        "reconciliation rate too low: final agreement reflects spontaneous first-pass matches",
    )


def classify_all(
    records: Iterable[OperabilityRecord],
    config: ClassifierConfig = ClassifierConfig(),
) -> dict[str, OperabilityStatus]:
    return {r.skill_id: classify_operability(r, config) for r in records}


@dataclass(frozen=True)
class RetentionConfig:
    """Which skills enter the model-facing evaluation."""

    min_final_kappa: float = 0.50
    exclusions: tuple[str, ...] = ()


def retained_set(
    records: Iterable[OperabilityRecord],
    config: RetentionConfig = RetentionConfig(),
    gold_label_counts: Mapping[str, int] | None = None,
) -> list[str]:
    """Skills with a non-degenerate final gold and final kappa above threshold,
    minus configured exclusions. When attested gold label counts are available
    they decide degeneracy; otherwise an undefined final kappa does.
    """
    retained: list[str] = []
    for record in records:
        if record.skill_id in config.exclusions:
            continue
        if gold_label_counts is not None:
            if gold_label_counts.get(record.skill_id, 0) < 2:
                continue
        elif record.final_kappa is None:
            continue
        if record.final_kappa is None or record.final_kappa < config.min_final_kappa:
            continue
        retained.append(record.skill_id)
    return sorted(retained)


@dataclass(frozen=True)
class TierConfig:
    high_threshold: float = 0.60
    medium_threshold: float = 0.40


def feasibility_tier(kappa: float, config: TierConfig = TierConfig()) -> Tier:
    if kappa >= config.high_threshold:
        return Tier.HIGH
    if kappa >= config.medium_threshold:
        return Tier.MEDIUM
    return Tier.LOW


@dataclass(frozen=True)
class InvalidOutputRecord:
    model: str
    skill_id: str
    null_rate: float
    off_schema_rate: float
    invalid_rate: float


def invalid_output_report(model_cells: Iterable[LabelCell]) -> list[InvalidOutputRecord]:
    """Null / off-schema / invalid rates per (model, skill), sorted."""
    buckets: dict[tuple[str, str], list[LabelCell]] = {}
    for cell in model_cells:
        if cell.round is not Round.MODEL:
            continue
        buckets.setdefault((cell.annotator_id, cell.skill_id), []).append(cell)
    records: list[InvalidOutputRecord] = []
    for (model, skill_id), cells in sorted(buckets.items()):
        total = len(cells)
        nulls = sum(1 for c in cells if c.outcome.is_null) / total
        offs = sum(1 for c in cells if c.outcome.is_off_schema) / total
        records.append(InvalidOutputRecord(model, skill_id, nulls, offs, nulls + offs))
    return records


@dataclass(frozen=True)
class ThirdVoiceSummary:
    """Where the frontier model sits between the human pair and the rest."""

    human_human_kappa: float
    frontier_human_mean: float
    ratio: float
    open_source_means: dict[str, float] = field(default_factory=dict)


def third_voice_summary(
    matrix: AgreementMatrix,
    humans: tuple[str, str],
    frontier: str,
) -> ThirdVoiceSummary:
    for name in (*humans, frontier):
        if name not in matrix.annotators:
            raise KeyError(f"annotator {name!r} not in matrix (have {matrix.annotators})")
    hh = matrix.get(humans[0], humans[1])
    if hh is None:
        raise ValueError("human-human agreement is undefined")
    frontier_vals = [matrix.get(frontier, h) for h in humans]
    if any(v is None for v in frontier_vals):
        raise ValueError("frontier-human agreement is undefined")
    frontier_mean = sum(frontier_vals) / len(frontier_vals)  # type: ignore[arg-type]
    others = [a for a in matrix.annotators if a not in (*humans, frontier)]
    open_source = {}
    for model in others:
        vals = [matrix.get(model, h) for h in humans]
        if all(v is not None for v in vals):
            open_source[model] = sum(vals) / len(vals)  # type: ignore[arg-type]
    return ThirdVoiceSummary(hh, frontier_mean, frontier_mean / hh, open_source)


def instance_difficulty_vectors(
    human_cells: Sequence[LabelCell],
    model_cells: Sequence[LabelCell],
    gold: Sequence[GoldCell],
    instance_ids: Sequence[str],
    inventory_size: int,
    retained_skills: Sequence[str],
    annotators: tuple[str, str],
) -> tuple[list[str], list[float | None], list[float | None]]:
    """Per-instance difficulty pair: (round-1 disputed-skill fraction, model error
    rate over the instance's retained-skill gold cells; None when no gold there)."""
    disputes_by_instance: dict[str, int] = {}
    for dispute in round2_worklist(human_cells, annotators):
        disputes_by_instance[dispute.instance_id] = disputes_by_instance.get(dispute.instance_id, 0) + 1

    retained = set(retained_skills)
    gold_by_instance: dict[str, list[GoldCell]] = {}
    for g in gold:
        if g.skill_id in retained:
            gold_by_instance.setdefault(g.instance_id, []).append(g)
    model_map = {
        (c.instance_id, c.skill_id): c.outcome for c in model_cells if c.skill_id in retained
    }

    human_difficulty: list[float | None] = []
    model_difficulty: list[float | None] = []
    for instance_id in instance_ids:
        human_difficulty.append(disputes_by_instance.get(instance_id, 0) / inventory_size)
        cells = gold_by_instance.get(instance_id, [])
        if not cells:
            model_difficulty.append(None)
            continue
        errors = 0
        for g in cells:
            outcome = model_map.get((g.instance_id, g.skill_id))
            if outcome is None or not outcome.is_in_schema or outcome.value != g.label:
                errors += 1
        model_difficulty.append(errors / len(cells))
    return list(instance_ids), human_difficulty, model_difficulty


@dataclass(frozen=True)
class ThreeLevelCorrelations:
    skill: CorrelationResult
    instance: CorrelationResult
    lexical: CorrelationResult

    def as_list(self) -> list[CorrelationResult]:
        return [self.skill, self.instance, self.lexical]


def difficulty_correlations(
    human_cells: Iterable[LabelCell],
    model_cells: Iterable[LabelCell],
    gold: Sequence[GoldCell],
    target_map: Mapping[str, tuple[str, str]],
    inventory: SkillInventory,
    retained_skills: Sequence[str],
    annotators: tuple[str, str],
    operability: Sequence[OperabilityRecord],
    *,
    human_difficulty_index: str = "final_kappa",
) -> ThreeLevelCorrelations:
    """Human-vs-model difficulty alignment at skill, instance, and lexeme level.

    Skill level pairs per-skill human agreement with per-skill model-vs-gold
    kappa. Instance level pairs the fraction of skills disputed at round 1 with
    the model's error rate over that instance's gold cells (retained skills).
    Lexeme level averages the instance vectors per target lexeme. Pearson r is
    unchanged (up to sign convention) whether agreements or difficulties are
    correlated, so agreement values are used directly.
    """
    human_cells = list(human_cells)
    model_cells = list(model_cells)

    # Skill level.
    by_skill = {r.skill_id: r for r in operability}
    xs: list[float | None] = []
    ys: list[float | None] = []
    for skill in inventory:
        record = by_skill.get(skill.skill_id)
        if record is None:
            continue
        human_value = getattr(record, human_difficulty_index)
        model_value = eval_vs_gold(model_cells, gold, skill.skill_id).kappa
        xs.append(human_value)
        ys.append(model_value)
    skill_result = pearson_r_p(xs, ys, level="skill")

    # Instance level.
    instance_ids, human_difficulty, model_difficulty = instance_difficulty_vectors(
        human_cells, model_cells, gold, sorted(target_map), len(inventory), retained_skills, annotators
    )
    instance_result = pearson_r_p(human_difficulty, model_difficulty, level="instance")

    # Lexeme level: per-lexeme means of the usable instance pairs.
    by_lexeme: dict[str, list[tuple[float, float]]] = {}
    for instance_id, h, m in zip(instance_ids, human_difficulty, model_difficulty):
        if h is None or m is None:
            continue
        lexeme = target_map[instance_id][0]
        by_lexeme.setdefault(lexeme, []).append((h, m))
    lex_x: list[float | None] = []
    lex_y: list[float | None] = []
    for lexeme in sorted(by_lexeme):
        pts = by_lexeme[lexeme]
        lex_x.append(sum(p[0] for p in pts) / len(pts))
        lex_y.append(sum(p[1] for p in pts) / len(pts))
    lexical_result = pearson_r_p(lex_x, lex_y, level="lexical")

    return ThreeLevelCorrelations(skill_result, instance_result, lexical_result)


def annotator_label_map(
    cells: Iterable[LabelCell],
    annotator_id: str,
    rounds: Sequence[Round],
) -> dict[tuple[str, str], str]:
    """(instance, skill) -> in-schema label for one annotator, preferring earlier
    rounds in the given order (e.g. [FINAL] for humans, [MODEL] for models)."""
    out: dict[tuple[str, str], str] = {}
    for round in reversed(rounds):
        for c in cells:
            if c.annotator_id == annotator_id and c.round is round and c.outcome.is_in_schema:
                out[(c.instance_id, c.skill_id)] = c.outcome.value  # type: ignore[assignment]
    return out


def build_pairwise_matrix(
    cells: Iterable[LabelCell],
    humans: Sequence[str],
    models: Sequence[str],
    *,
    derived_finals: Mapping[str, Mapping[tuple[str, str], str]] | None = None,
) -> AgreementMatrix:
    """Agreement matrix over humans (final labels) and models (model round).

    derived_finals can supply per-human final-label maps computed by the gold
    protocol when the store has no explicit final cells.
    """
    cells = list(cells)
    label_maps: dict[str, Mapping[tuple[str, str], str]] = {}
    for human in humans:
        stored = annotator_label_map(cells, human, [Round.FINAL])
        if not stored and derived_finals and human in derived_finals:
            stored = dict(derived_finals[human])
        label_maps[human] = stored
    for model in models:
        label_maps[model] = annotator_label_map(cells, model, [Round.MODEL])
    return pairwise_matrix(label_maps, [*humans, *models])
