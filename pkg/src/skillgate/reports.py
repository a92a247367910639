"""Report emission and the four-stage workflow (pilot, screen, deploy, triangulate).

All emitted files are plain delimiter-separated data (figures included), carry a
header comment with the config and inventory digests, and are byte-stable: two
emissions over the same store are identical.
"""
from __future__ import annotations

import dataclasses
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import analysis as _analysis
from . import gold as _gold
from . import stats as _stats
from .errors import StatsError, WorkflowError
from .runner import RunConfig, build_client, run_annotation
from .store import CorpusStore, Round


def fmt(value: float | int | str | None, places: int = 4) -> str:
    """Fixed-width numeric formatting so report bytes never drift."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.{places}f}"
    return str(value)


def write_table(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    *,
    digests: Mapping[str, str] | None = None,
) -> Path:
    lines = []
    for key, digest in sorted((digests or {}).items()):
        lines.append(f"# {key}={digest}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@dataclass
class AnalysisBundle:
    """Everything the report layer derives from one store snapshot."""

    annotators: tuple[str, str]
    validation_size: int
    operability: list[_gold.OperabilityRecord]
    statuses: dict[str, _analysis.OperabilityStatus]
    retained: list[str]
    gold_final: list[_gold.GoldCell]
    gold_round1: list[_gold.GoldCell]
    eval_records: list[_stats.EvalRecord] = field(default_factory=list)
    pooled: _stats.EvalRecord | None = None
    tiers: dict[str, _analysis.Tier] = field(default_factory=dict)
    correlations: _analysis.ThreeLevelCorrelations | None = None
    invalid: list[_analysis.InvalidOutputRecord] = field(default_factory=list)
    matrix: _stats.AgreementMatrix | None = None
    dendrogram: _stats.Dendrogram | None = None
    third_voice: _analysis.ThirdVoiceSummary | None = None
    model_id: str | None = None


def human_annotators(store: CorpusStore) -> tuple[str, str]:
    annotators = store.annotator_ids(round=Round.ROUND1)
    if len(annotators) != 2:
        raise WorkflowError(
            f"need exactly two round-1 annotators, found {annotators}",
            hint="ingest the two-round file or run both round-1 sessions first",
        )
    return (annotators[0], annotators[1])


def compute_bundle(
    store: CorpusStore,
    *,
    classifier: _analysis.ClassifierConfig | None = None,
    retention: _analysis.RetentionConfig | None = None,
    model_id: str | None = None,
    frontier: str | None = None,
) -> AnalysisBundle:
    """Derive every report input the store can support; model-facing parts are
    filled only when model cells are present."""
    classifier = classifier or _analysis.ClassifierConfig()
    retention = retention or _analysis.RetentionConfig()
    cells = store.cells()
    annotators = human_annotators(store)
    validation = store.validation_ids()
    if not validation:
        raise WorkflowError("store has no validation instances", hint="ingest the target map first")

    inventory = store.inventory
    records = _gold.operability_records(cells, inventory.skill_ids, annotators, len(validation))
    statuses = _analysis.classify_all(records, classifier)
    gold_final = _gold.build_gold(cells, "final", annotators)
    gold_round1 = _gold.build_gold(cells, "round1", annotators)
    label_counts = _gold.gold_label_counts(gold_final)
    retained = _analysis.retained_set(records, retention, label_counts)

    bundle = AnalysisBundle(
        annotators=annotators,
        validation_size=len(validation),
        operability=records,
        statuses=statuses,
        retained=retained,
        gold_final=gold_final,
        gold_round1=gold_round1,
    )

    model_ids = store.annotator_ids(round=Round.MODEL)
    if not model_ids:
        return bundle
    bundle.model_id = model_id or (frontier if frontier in model_ids else model_ids[0])
    model_cells = store.cells(round=Round.MODEL, annotator_id=bundle.model_id)

    for skill_id in retained:
        bundle.eval_records.append(_stats.eval_vs_gold(model_cells, gold_final, skill_id))
    bundle.pooled = _stats.pooled_eval(model_cells, gold_final, retained)
    bundle.tiers = {
        r.skill_id: _analysis.feasibility_tier(r.kappa)
        for r in bundle.eval_records
        if r.kappa is not None
    }
    bundle.correlations = _analysis.difficulty_correlations(
        [c for c in cells if c.round in (Round.ROUND1, Round.ROUND2, Round.FINAL)],
        model_cells,
        bundle.gold_final,
        store.target_map(),
        inventory,
        retained,
        annotators,
        records,
    )
    bundle.invalid = _analysis.invalid_output_report(store.cells(round=Round.MODEL))

    finals = {
        a: {
            pos: pair[i].value
            for pos, pair in _gold.final_outcome_pairs(cells, annotators).items()
            if pair[i] is not None and pair[i].is_in_schema
        }
        for i, a in enumerate(annotators)
    }
    bundle.matrix = _analysis.build_pairwise_matrix(
        cells, annotators, model_ids, derived_finals=finals
    )
    try:
        bundle.dendrogram = _stats.average_linkage(bundle.matrix)
    except StatsError:  # undefined pairwise entries: leave the dendrogram out
        bundle.dendrogram = None
    frontier_id = frontier or bundle.model_id
    if frontier_id in bundle.matrix.annotators:
        try:
            bundle.third_voice = _analysis.third_voice_summary(bundle.matrix, annotators, frontier_id)
        except ValueError:
            bundle.third_voice = None
    return bundle


def emit_reports(bundle: AnalysisBundle, out_dir: str | Path, digests: Mapping[str, str]) -> list[Path]:
    """Write every table and figure-data file the bundle supports."""
    out = Path(out_dir)
    written: list[Path] = []

    written.append(write_table(
        out / "operability.csv",
        ("feature", "round1_kappa", "final_kappa", "gold_coverage",
         "reconciliation_rate", "round1_disagreements", "round2_reconciled", "skill_status", "reason"),
        [
            (r.skill_id, r.round1_kappa, r.final_kappa, r.gold_coverage, r.reconciliation_rate,
             r.round1_disagreements, r.round2_reconciled,
             bundle.statuses[r.skill_id].status.value, bundle.statuses[r.skill_id].reason)
            for r in bundle.operability
        ],
        digests=digests,
    ))

    deployable = sorted(
        s for s, st in bundle.statuses.items()
        if st.status in (_analysis.Status.DIRECTLY_OPERABLE, _analysis.Status.RECOVERABLE)
    )
    written.append(write_table(
        out / "screening.csv",
        ("feature", "skill_status", "deployable", "retained_for_eval"),
        [
            (r.skill_id, bundle.statuses[r.skill_id].status.value,
             "yes" if r.skill_id in deployable else "no",
             "yes" if r.skill_id in bundle.retained else "no")
            for r in bundle.operability
        ],
        digests=digests,
    ))

    if bundle.eval_records:
        rows = [
            (e.skill_id, e.n, e.accuracy, e.kappa, e.macro_f1, e.weighted_f1, e.random_baseline)
            for e in bundle.eval_records
        ]
        if bundle.pooled:
            p = bundle.pooled
            rows.append((p.skill_id, p.n, p.accuracy, p.kappa, p.macro_f1, p.weighted_f1, None))
        written.append(write_table(
            out / "model_eval.csv",
            ("feature", "n", "accuracy", "kappa", "macro_f1", "weighted_f1", "random_baseline"),
            rows, digests=digests,
        ))

    if bundle.tiers:
        tier_rows = sorted(
            ((s, e.kappa, e.accuracy, bundle.tiers[s].value)
             for e in bundle.eval_records if (s := e.skill_id) in bundle.tiers),
            key=lambda r: (-(r[1] or 0.0), r[0]),
        )
        written.append(write_table(
            out / "feasibility_tiers.csv",
            ("feature", "kappa", "accuracy", "feasibility_tier"),
            tier_rows, digests=digests,
        ))

    if bundle.correlations:
        written.append(write_table(
            out / "level_correlations.csv",
            ("level", "N", "r", "p"),
            [(c.level, c.n, c.r, c.p) for c in bundle.correlations.as_list()],
            digests=digests,
        ))
        written.append(write_table(
            out / "fig_level_correlations.csv",
            ("level", "N", "r", "p"),
            [(c.level, c.n, c.r, c.p) for c in bundle.correlations.as_list()],
            digests=digests,
        ))

    if bundle.invalid:
        written.append(write_table(
            out / "invalid_outputs.csv",
            ("model", "feature", "null_rate", "off_schema_rate", "invalid_rate"),
            [(r.model, r.skill_id, r.null_rate, r.off_schema_rate, r.invalid_rate) for r in bundle.invalid],
            digests=digests,
        ))

    if bundle.matrix:
        names = bundle.matrix.annotators
        written.append(write_table(
            out / "pairwise_kappa.csv",
            ("annotator", *names),
            [(a, *bundle.matrix.values[i]) for i, a in enumerate(names)],
            digests=digests,
        ))
        written.append(write_table(
            out / "fig_pairwise_heatmap.csv",
            ("annotator_a", "annotator_b", "kappa"),
            [
                (a, b, bundle.matrix.values[i][j])
                for i, a in enumerate(names)
                for j, b in enumerate(names)
            ],
            digests=digests,
        ))

    if bundle.dendrogram:
        written.append(write_table(
            out / "fig_dendrogram.csv",
            ("merge_index", "cluster_a", "cluster_b", "distance"),
            [
                (i, "+".join(m.cluster_a), "+".join(m.cluster_b), m.distance)
                for i, m in enumerate(bundle.dendrogram.merges, start=1)
            ],
            digests=digests,
        ))

    written.append(write_table(
        out / "fig_reconciliation.csv",
        ("feature", "reconciliation_rate", "round1_disagreements", "round2_reconciled"),
        [
            (r.skill_id, r.reconciliation_rate, r.round1_disagreements, r.round2_reconciled)
            for r in bundle.operability
        ],
        digests=digests,
    ))
    written.append(write_table(
        out / "fig_round1_vs_final.csv",
        ("feature", "round1_kappa", "final_kappa", "skill_status"),
        [
            (r.skill_id, r.round1_kappa, r.final_kappa, bundle.statuses[r.skill_id].status.value)
            for r in bundle.operability
        ],
        digests=digests,
    ))

    summary = {
        "annotators": list(bundle.annotators),
        "validation_instances": bundle.validation_size,
        "status_counts": {
            status.value: sum(1 for s in bundle.statuses.values() if s.status is status)
            for status in _analysis.Status
        },
        "deployable_skills": deployable,
        "retained_skills": bundle.retained,
        "gold_final_cells": len(bundle.gold_final),
        "gold_round1_cells": len(bundle.gold_round1),
        "model_id": bundle.model_id,
        "pooled": None if bundle.pooled is None else {
            "n": bundle.pooled.n,
            "accuracy": bundle.pooled.accuracy,
            "kappa": bundle.pooled.kappa,
            "macro_f1": bundle.pooled.macro_f1,
            "weighted_f1": bundle.pooled.weighted_f1,
        },
        "third_voice": None if bundle.third_voice is None else {
            "human_human_kappa": bundle.third_voice.human_human_kappa,
            "frontier_human_mean": bundle.third_voice.frontier_human_mean,
            "ratio": bundle.third_voice.ratio,
            "open_source_means": bundle.third_voice.open_source_means,
        },
        "digests": dict(sorted(digests.items())),
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(summary_path)
    return written


class Stage(str, Enum):
    PILOTED = "piloted"
    SCREENED = "screened"
    MODEL_DEPLOYED = "model_deployed"
    GOLD_TRIANGULATED = "gold_triangulated"


_STAGE_ORDER = [Stage.PILOTED, Stage.SCREENED, Stage.MODEL_DEPLOYED, Stage.GOLD_TRIANGULATED]


@dataclass
class WorkflowState:
    stages: dict[str, dict] = field(default_factory=dict)

    @property
    def stage(self) -> Stage | None:
        done = [s for s in _STAGE_ORDER if s.value in self.stages]
        return done[-1] if done else None

    def record(self, stage: Stage, artifacts: list[str], digests: Mapping[str, str]) -> None:
        self.stages[stage.value] = {"artifacts": artifacts, "digests": dict(digests)}

    def matches(self, stage: Stage, digests: Mapping[str, str]) -> bool:
        entry = self.stages.get(stage.value)
        if entry is None:
            return False
        if entry["digests"] != dict(digests):
            return False
        return all(Path(p).exists() for p in entry["artifacts"])

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(self.stages, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "WorkflowState":
        if path.exists():
            return cls(stages=json.loads(path.read_text(encoding="utf-8")))
        return cls()


def _config_digest(config: RunConfig | None) -> str:
    return config.digest() if config is not None else "none"


def run_workflow(
    store: CorpusStore,
    out_dir: str | Path,
    *,
    run_config: RunConfig | None = None,
    classifier: _analysis.ClassifierConfig | None = None,
    retention: _analysis.RetentionConfig | None = None,
) -> WorkflowState:
    """Execute stages 1-4 in order, skipping stages whose inputs are unchanged.

    1 pilot: per-skill operability from the two-round human cells.
    2 screen: operability statuses, deployable and retained sets.
    3 deploy: model annotation restricted to the retained skills.
    4 triangulate: three-way cell table with 2-of-3 adjudication suggestions.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "workflow_state.json"
    state = WorkflowState.load(state_path)

    inventory = store.inventory
    human_rounds = (Round.ROUND1, Round.ROUND2, Round.FINAL)
    base_digests = {
        "inventory_digest": inventory.source_digest,
        "human_cells_digest": store.cells_digest(human_rounds),
    }

    bundle = compute_bundle(store, classifier=classifier, retention=retention)

    # Stage 1: pilot the skills.
    stage1_digests = dict(base_digests)
    if not state.matches(Stage.PILOTED, stage1_digests):
        path = write_table(
            out / "stage1_operability.csv",
            ("feature", "round1_kappa", "final_kappa", "gold_coverage",
             "reconciliation_rate", "round1_disagreements", "round2_reconciled"),
            [
                (r.skill_id, r.round1_kappa, r.final_kappa, r.gold_coverage,
                 r.reconciliation_rate, r.round1_disagreements, r.round2_reconciled)
                for r in bundle.operability
            ],
            digests=stage1_digests,
        )
        state.record(Stage.PILOTED, [str(path)], stage1_digests)
        state.save(state_path)

    # Stage 2: screen skills by operability.
    if not state.matches(Stage.SCREENED, stage1_digests):
        deployable = sorted(
            s for s, st in bundle.statuses.items()
            if st.status in (_analysis.Status.DIRECTLY_OPERABLE, _analysis.Status.RECOVERABLE)
        )
        path = write_table(
            out / "stage2_screening.csv",
            ("feature", "skill_status", "reason", "deployable", "retained_for_eval"),
            [
                (r.skill_id, bundle.statuses[r.skill_id].status.value, bundle.statuses[r.skill_id].reason,
                 "yes" if r.skill_id in deployable else "no",
                 "yes" if r.skill_id in bundle.retained else "no")
                for r in bundle.operability
            ],
            digests=stage1_digests,
        )
        state.record(Stage.SCREENED, [str(path)], stage1_digests)
        state.save(state_path)

    # Stage 3: deploy the model as an additional annotator on the retained skills.
    if run_config is None:
        raise WorkflowError("stage 3 needs a run config", hint="pass --config with a run section")
    if not bundle.retained:
        raise WorkflowError("no retained skills to deploy on", hint="check stage-2 screening output")
    stage3_digests = dict(base_digests)
    stage3_digests["run_config_digest"] = _config_digest(run_config)
    stage3_digests["retained"] = ",".join(bundle.retained)
    if not state.matches(Stage.MODEL_DEPLOYED, stage3_digests):
        gold_map = {(g.instance_id, g.skill_id): g.label for g in bundle.gold_final}
        client = build_client(run_config, gold=gold_map)
        instances = store.instances()
        validation = set(store.validation_ids())
        instances = [i for i in instances if i.instance_id in validation]
        produced: list[Path] = []
        for skill_id in bundle.retained:
            skill_config = dataclasses.replace(
                run_config,
                feature=skill_id,
                checkpoint_path=str(out / f"stage3_{skill_id}.ckpt"),
            )
            run_annotation(
                skill_config, instances, inventory, client,
                sink=lambda cells: store.add_cells(cells, allow_overwrite=True),
            )
            produced.append(out / f"stage3_{skill_id}.ckpt")
        state.record(Stage.MODEL_DEPLOYED, [str(p) for p in produced], stage3_digests)
        state.save(state_path)

    # Stage 4: three-way comparison with adjudication suggestions.
    stage4_digests = dict(base_digests)
    stage4_digests["model_cells_digest"] = store.cells_digest((Round.MODEL,))
    if not state.matches(Stage.GOLD_TRIANGULATED, stage4_digests):
        cells = store.cells()
        finals = _gold.final_outcome_pairs(
            [c for c in cells if c.round in (Round.ROUND1, Round.ROUND2)], bundle.annotators
        )
        model_id = run_config.model
        model_map = {
            (c.instance_id, c.skill_id): c.outcome
            for c in store.cells(round=Round.MODEL, annotator_id=model_id)
        }
        rows = []
        agree_all = 0
        total = 0
        for (instance_id, skill_id), (a, b) in sorted(finals.items()):
            if skill_id not in bundle.retained:
                continue
            la = a.value if a is not None and a.is_in_schema else None
            lb = b.value if b is not None and b.is_in_schema else None
            mo = model_map.get((instance_id, skill_id))
            lm = mo.value if mo is not None and mo.is_in_schema else None
            votes = [l for l in (la, lb, lm) if l is not None]
            suggestion = ""
            pattern = "none"
            if la is not None and la == lb and lb == lm:
                pattern, suggestion = "all_three", la
                agree_all += 1
            elif votes:
                top, count = Counter(votes).most_common(1)[0]
                if count >= 2:
                    pattern, suggestion = "two_of_three", top
                else:
                    pattern = "no_majority"
            total += 1
            rows.append((instance_id, skill_id, la, lb, lm, pattern, suggestion))
        path = write_table(
            out / "stage4_three_way.csv",
            ("instance_id", "feature", bundle.annotators[0], bundle.annotators[1],
             model_id, "agreement", "suggestion"),
            rows, digests=stage4_digests,
        )
        summary = {
            "three_way_positions": total,
            "three_way_agreement": (agree_all / total) if total else None,
            "retained_skills": bundle.retained,
        }
        summary_path = out / "stage4_summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
        state.record(Stage.GOLD_TRIANGULATED, [str(path), str(summary_path)], stage4_digests)
        state.save(state_path)

    return state
