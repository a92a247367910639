"""Corpus store: ingest and align the annotation data sources, persist all cells.

Layout is a single directory of append-only delimiter-separated files plus a
manifest with content hashes, so an experiment can be copied and diffed as
plain files:

    store/
      manifest.json       ingested-source digests, inventory digest
      inventory.yaml      the skill schema the store was created against
      instances.csv       instance_id, text, span, lexeme, color, split
      cells.csv           append-only label-cell log (last write wins per key)
      alignment.json      most recent cross-source alignment report

Writes are serialized through one lock (single writer); reads return snapshot
copies of the in-memory indexes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import threading
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IngestError
from .schema import LabelOutcome, OutcomeKind, SkillInventory, parse_inventory

COLOR_CATEGORIES = ("black", "white", "red", "yellow", "blue", "green")

TWO_ROUND_COLUMNS = (
    "instance_id", "skill_id",
    "ann1_r1", "ann2_r1", "ann1_r2", "ann2_r2", "ann1_final", "ann2_final",
)


class Round(str, Enum):
    ROUND1 = "round1"
    ROUND2 = "round2"
    FINAL = "final"
    MODEL = "model"


class Split(str, Enum):
    VALIDATION = "validation"
    FULL = "full"


@dataclass(frozen=True)
class Instance:
    instance_id: str
    text: str = ""
    span: tuple[int, int] | None = None
    target_lexeme: str | None = None
    color_category: str | None = None
    split: Split = Split.VALIDATION

    def marked_text(self, open_mark: str = "⟦", close_mark: str = "⟧") -> str:
        """Concordance line with the target span delimited for display/prompts."""
        if self.span is None or not self.text:
            return self.text
        a, b = self.span
        return self.text[:a] + open_mark + self.text[a:b] + close_mark + self.text[b:]


@dataclass(frozen=True)
class LabelCell:
    """One (instance x skill x annotator x round) judgment."""

    instance_id: str
    skill_id: str
    annotator_id: str
    round: Round
    outcome: LabelOutcome
    timestamp: str = field(default="", compare=False)

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.instance_id, self.skill_id, self.annotator_id, self.round.value)


@dataclass
class AlignmentReport:
    """Cross-source referential-integrity result; failures are entries, not raises."""

    source_rows: dict[str, int] = field(default_factory=dict)
    unmatched_instances: dict[str, list[str]] = field(default_factory=dict)
    invalid_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    passed: bool = True

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def read_table(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    """Read a delimiter-separated file with a header row (comma or tab)."""
    text = Path(path).read_text(encoding="utf-8-sig")
    if not text.strip():
        raise IngestError(f"{path}: empty file")
    first_line = text.splitlines()[0]
    delimiter = "\t" if "\t" in first_line else ","
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    header = [h.strip() for h in reader.fieldnames or []]
    rows = []
    for row in reader:
        rows.append({(k.strip() if k else k): (v if v is not None else "") for k, v in row.items()})
    return header, rows


def _require_columns(header: Sequence[str], required: Sequence[str], path: str | Path) -> None:
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"{path}: missing required column(s) {missing}; found {list(header)}")


class CorpusStore:
    """Single-directory annotation store. Create with an inventory, then ingest."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._cells: dict[tuple[str, str, str, str], LabelCell] = {}
        self._instances: dict[str, Instance] = {}
        self._manifest: dict = {"sources": [], "inventory_digest": None}
        self._inventory: SkillInventory | None = None

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, root: str | Path, inventory_text: str) -> "CorpusStore":
        store = cls(root)
        store.root.mkdir(parents=True, exist_ok=True)
        inventory = parse_inventory(inventory_text)
        (store.root / "inventory.yaml").write_text(inventory_text, encoding="utf-8")
        store._inventory = inventory
        store._manifest["inventory_digest"] = inventory.source_digest
        store._save_manifest()
        return store

    @classmethod
    def open(cls, root: str | Path) -> "CorpusStore":
        store = cls(root)
        manifest_path = store.root / "manifest.json"
        if not manifest_path.exists():
            raise IngestError(f"{root}: not a store (no manifest.json); create it by ingesting a schema first")
        store._manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        inv_path = store.root / "inventory.yaml"
        if inv_path.exists():
            store._inventory = parse_inventory(inv_path.read_text(encoding="utf-8"))
        store._load_instances()
        store._load_cells()
        return store

    @property
    def inventory(self) -> SkillInventory:
        if self._inventory is None:
            raise IngestError(f"{self.root}: store has no skill inventory")
        return self._inventory

    def _save_manifest(self) -> None:
        (self.root / "manifest.json").write_text(
            json.dumps(self._manifest, indent=2, sort_keys=True), encoding="utf-8"
        )

    def _already_ingested(self, kind: str, digest: str) -> bool:
        return any(s["kind"] == kind and s["sha256"] == digest for s in self._manifest["sources"])

    def _record_source(self, kind: str, path: str | Path, digest: str, rows: int, cells: int) -> None:
        self._manifest["sources"].append(
            {"kind": kind, "path": str(path), "sha256": digest, "rows": rows, "cells": cells}
        )
        self._save_manifest()

    # -- persistence -------------------------------------------------------

    _CELL_HEADER = ("instance_id", "skill_id", "annotator_id", "round", "outcome", "value", "timestamp")

    def _cells_path(self) -> Path:
        return self.root / "cells.csv"

    def _load_cells(self) -> None:
        path = self._cells_path()
        if not path.exists():
            return
        with path.open(encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                outcome = LabelOutcome(OutcomeKind(row["outcome"]), row["value"] or None)
                cell = LabelCell(
                    instance_id=row["instance_id"],
                    skill_id=row["skill_id"],
                    annotator_id=row["annotator_id"],
                    round=Round(row["round"]),
                    outcome=outcome,
                    timestamp=row["timestamp"],
                )
                self._cells[cell.key] = cell  # last write wins

    def _append_cells(self, cells: Sequence[LabelCell]) -> None:
        path = self._cells_path()
        new_file = not path.exists()
        with path.open("a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(self._CELL_HEADER)
            for c in cells:
                writer.writerow(
                    (c.instance_id, c.skill_id, c.annotator_id, c.round.value,
                     c.outcome.kind.value, c.outcome.value or "", c.timestamp)
                )

    def _instances_path(self) -> Path:
        return self.root / "instances.csv"

    def _load_instances(self) -> None:
        path = self._instances_path()
        if not path.exists():
            return
        with path.open(encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                span = None
                if row.get("span_start") and row.get("span_end"):
                    span = (int(row["span_start"]), int(row["span_end"]))
                inst = Instance(
                    instance_id=row["instance_id"],
                    text=row.get("text", ""),
                    span=span,
                    target_lexeme=row.get("target_lexeme") or None,
                    color_category=row.get("color_category") or None,
                    split=Split(row.get("split") or "validation"),
                )
                self._instances[inst.instance_id] = inst

    def _save_instances(self) -> None:
        with self._instances_path().open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("instance_id", "text", "span_start", "span_end",
                             "target_lexeme", "color_category", "split"))
            for inst in sorted(self._instances.values(), key=lambda i: i.instance_id):
                a, b = inst.span if inst.span else ("", "")
                writer.writerow((inst.instance_id, inst.text, a, b,
                                 inst.target_lexeme or "", inst.color_category or "", inst.split.value))

    # -- reads (snapshot) ----------------------------------------------------

    def cells(
        self,
        *,
        round: Round | None = None,
        annotator_id: str | None = None,
        skill_id: str | None = None,
    ) -> list[LabelCell]:
        with self._lock:
            out = list(self._cells.values())
        if round is not None:
            out = [c for c in out if c.round is round]
        if annotator_id is not None:
            out = [c for c in out if c.annotator_id == annotator_id]
        if skill_id is not None:
            out = [c for c in out if c.skill_id == skill_id]
        return sorted(out, key=lambda c: c.key)

    def instances(self, split: Split | None = None) -> list[Instance]:
        with self._lock:
            out = list(self._instances.values())
        if split is not None:
            out = [i for i in out if i.split is split]
        return sorted(out, key=lambda i: i.instance_id)

    def validation_ids(self) -> list[str]:
        return [i.instance_id for i in self.instances(Split.VALIDATION)]

    def annotator_ids(self, round: Round | None = None) -> list[str]:
        return sorted({c.annotator_id for c in self.cells(round=round)})

    def cell_log_digest(self) -> str:
        path = self._cells_path()
        return _digest_bytes(path.read_bytes()) if path.exists() else _digest_bytes(b"")

    def cells_digest(self, rounds: Sequence[Round] | None = None) -> str:
        """Content hash over the effective cells of the given rounds (order-free)."""
        selected = self.cells()
        if rounds is not None:
            wanted = set(rounds)
            selected = [c for c in selected if c.round in wanted]
        digest = hashlib.sha256()
        for c in selected:
            digest.update(
                repr((c.instance_id, c.skill_id, c.annotator_id, c.round.value,
                      c.outcome.kind.value, c.outcome.value)).encode("utf-8")
            )
        return digest.hexdigest()

    # -- writes --------------------------------------------------------------

    def add_cells(self, cells: Iterable[LabelCell], *, allow_overwrite: bool = False) -> int:
        """Append cells; duplicate keys with different content raise unless overwriting."""
        batch = list(cells)
        with self._lock:
            to_write: list[LabelCell] = []
            for cell in batch:
                existing = self._cells.get(cell.key)
                if existing is not None:
                    if existing == cell:
                        continue  # identical content: idempotent no-op
                    if not allow_overwrite:
                        raise IngestError(f"duplicate cell for {cell.key} with conflicting content")
                self._cells[cell.key] = cell
                to_write.append(cell)
            if to_write:
                self._append_cells(to_write)
            return len(to_write)

    def upsert_instances(self, instances: Iterable[Instance]) -> None:
        with self._lock:
            for inst in instances:
                old = self._instances.get(inst.instance_id)
                if old is not None:
                    inst = Instance(
                        instance_id=inst.instance_id,
                        text=inst.text or old.text,
                        span=inst.span or old.span,
                        target_lexeme=inst.target_lexeme or old.target_lexeme,
                        color_category=inst.color_category or old.color_category,
                        split=inst.split,
                    )
                self._instances[inst.instance_id] = inst
            self._save_instances()

    # -- ingest ---------------------------------------------------------------

    def ingest_two_round_file(
        self,
        path: str | Path,
        annotators: tuple[str, str],
        *,
        timestamp: str | None = None,
    ) -> int:
        """Ingest the two-annotator, two-round human file.

        Emits round1 and final cells for every row (empty values become Null) and
        round2 cells only where a second-round value is present. Returns the
        number of cells stored; re-ingesting an identical file is a no-op.
        """
        inventory = self.inventory
        raw = Path(path).read_bytes()
        digest = _digest_bytes(raw)
        if self._already_ingested("two_round", digest):
            return 0
        header, rows = read_table(path)
        _require_columns(header, TWO_ROUND_COLUMNS, path)
        ts = timestamp or _now()
        cells: list[LabelCell] = []
        seen: set[tuple[str, str, str, str]] = set()
        for line_no, row in enumerate(rows, start=2):
            instance_id = row["instance_id"].strip()
            skill_id = row["skill_id"].strip()
            if inventory.get(skill_id) is None:
                raise IngestError(f"{path} line {line_no}: unknown skill_id {skill_id!r}")
            for ann_idx, annotator in enumerate(annotators, start=1):
                specs = (
                    (Round.ROUND1, row[f"ann{ann_idx}_r1"], True),
                    (Round.ROUND2, row[f"ann{ann_idx}_r2"], False),
                    (Round.FINAL, row[f"ann{ann_idx}_final"], True),
                )
                for rnd, value, keep_empty in specs:
                    if not keep_empty and not value.strip():
                        continue  # absent round-2 value: cell was not revisited
                    outcome = inventory.normalize(skill_id, value)
                    cell = LabelCell(instance_id, skill_id, annotator, rnd, outcome, ts)
                    if cell.key in seen:
                        raise IngestError(
                            f"{path} line {line_no}: duplicate cell {cell.key}"
                        )
                    seen.add(cell.key)
                    cells.append(cell)
        stored = self.add_cells(cells)
        self._record_source("two_round", path, digest, len(rows), stored)
        return stored

    def ingest_model_outputs(
        self,
        path: str | Path,
        model_id: str | None = None,
        *,
        timestamp: str | None = None,
    ) -> int:
        """Ingest model predictions (wide: one column per skill; or long format).

        Long format needs instance_id/skill_id/label and may carry a model column
        (required when model_id is not given). Null and off-schema outcomes are
        preserved; nothing is filtered at ingest.
        """
        inventory = self.inventory
        raw = Path(path).read_bytes()
        digest = _digest_bytes(raw)
        kind = f"model:{model_id or 'merged'}"
        if self._already_ingested(kind, digest):
            return 0
        header, rows = read_table(path)
        if "instance_id" not in header:
            raise IngestError(f"{path}: missing required column(s) ['instance_id']")
        ts = timestamp or _now()
        cells: list[LabelCell] = []
        seen: set[tuple[str, str, str, str]] = set()

        long_format = "skill_id" in header and "label" in header
        if long_format:
            for line_no, row in enumerate(rows, start=2):
                skill_id = row["skill_id"].strip()
                if inventory.get(skill_id) is None:
                    raise IngestError(f"{path} line {line_no}: unknown skill_id {skill_id!r}")
                annotator = (row.get("model") or "").strip() or model_id
                if not annotator:
                    raise IngestError(f"{path} line {line_no}: no model column and no model_id given")
                outcome = inventory.normalize(skill_id, row["label"])
                cell = LabelCell(row["instance_id"].strip(), skill_id, annotator, Round.MODEL, outcome, ts)
                if cell.key in seen:
                    raise IngestError(f"{path} line {line_no}: duplicate cell {cell.key}")
                seen.add(cell.key)
                cells.append(cell)
        else:
            if model_id is None:
                raise IngestError(f"{path}: wide-format model file requires an explicit model id")
            skill_columns = [c for c in header if c != "instance_id"]
            unknown = [c for c in skill_columns if inventory.get(c) is None]
            if unknown:
                raise IngestError(f"{path}: unknown skill_id column(s) {unknown}")
            for line_no, row in enumerate(rows, start=2):
                instance_id = row["instance_id"].strip()
                for skill_id in skill_columns:
                    outcome = inventory.normalize(skill_id, row[skill_id])
                    cell = LabelCell(instance_id, skill_id, model_id, Round.MODEL, outcome, ts)
                    if cell.key in seen:
                        raise IngestError(f"{path} line {line_no}: duplicate cell {cell.key}")
                    seen.add(cell.key)
                    cells.append(cell)

        stored = self.add_cells(cells)
        self._record_source(kind, path, digest, len(rows), stored)
        return stored

    def ingest_target_map(self, path: str | Path) -> int:
        """Ingest the instance -> (target lexeme, color) map; defines the validation split."""
        raw = Path(path).read_bytes()
        digest = _digest_bytes(raw)
        if self._already_ingested("target_map", digest):
            return 0
        header, rows = read_table(path)
        _require_columns(header, ("instance_id", "target_lexeme", "color"), path)
        instances: list[Instance] = []
        seen: set[str] = set()
        for line_no, row in enumerate(rows, start=2):
            instance_id = row["instance_id"].strip()
            if not instance_id:
                raise IngestError(f"{path} line {line_no}: empty instance_id")
            if instance_id in seen:
                raise IngestError(f"{path} line {line_no}: instance_id {instance_id!r} mapped twice")
            seen.add(instance_id)
            color = row["color"].strip().lower()
            if color not in COLOR_CATEGORIES:
                raise IngestError(
                    f"{path} line {line_no}: unknown color {color!r} (expected one of {COLOR_CATEGORIES})"
                )
            instances.append(
                Instance(
                    instance_id=instance_id,
                    target_lexeme=row["target_lexeme"].strip(),
                    color_category=color,
                    split=Split.VALIDATION,
                )
            )
        self.upsert_instances(instances)
        self._record_source("target_map", path, digest, len(rows), 0)
        return len(instances)

    def ingest_corpus(self, path: str | Path) -> int:
        """Ingest concordance lines (instance_id, text, optional span columns).

        Optional: all analyses over the validation split run without the corpus;
        the annotation service needs it for display text.
        """
        raw = Path(path).read_bytes()
        digest = _digest_bytes(raw)
        if self._already_ingested("corpus", digest):
            return 0
        header, rows = read_table(path)
        _require_columns(header, ("instance_id", "text"), path)
        known_validation = {i.instance_id for i in self.instances(Split.VALIDATION)}
        instances = []
        for line_no, row in enumerate(rows, start=2):
            instance_id = row["instance_id"].strip()
            if not instance_id:
                raise IngestError(f"{path} line {line_no}: empty instance_id")
            span = None
            if row.get("span_start", "").strip() and row.get("span_end", "").strip():
                span = (int(row["span_start"]), int(row["span_end"]))
            split = Split.VALIDATION if instance_id in known_validation else Split.FULL
            instances.append(Instance(instance_id=instance_id, text=row["text"], span=span, split=split))
        self.upsert_instances(instances)
        self._record_source("corpus", path, digest, len(rows), 0)
        return len(instances)

    def target_map(self) -> dict[str, tuple[str, str]]:
        """instance_id -> (target_lexeme, color) over the validation split."""
        return {
            i.instance_id: (i.target_lexeme or "", i.color_category or "")
            for i in self.instances(Split.VALIDATION)
        }

    # -- alignment -------------------------------------------------------------

    def check_alignment(self) -> AlignmentReport:
        """Cross-source referential integrity; persists and returns the report."""
        report = AlignmentReport()
        validation = set(self.validation_ids())
        report.source_rows["validation_instances"] = len(validation)

        human_rounds = (Round.ROUND1, Round.ROUND2, Round.FINAL)
        human_cells = [c for c in self.cells() if c.round in human_rounds]
        model_cells = self.cells(round=Round.MODEL)
        report.source_rows["human_cells"] = len(human_cells)
        report.source_rows["model_cells"] = len(model_cells)

        if validation:
            orphans = sorted({c.instance_id for c in human_cells} - validation)
            if orphans:
                report.unmatched_instances["human_cells_not_in_target_map"] = orphans
                report.passed = False

        # Per-(model, skill) coverage of the validation split plus invalid tallies.
        by_model_skill: dict[tuple[str, str], list[LabelCell]] = {}
        for c in model_cells:
            by_model_skill.setdefault((c.annotator_id, c.skill_id), []).append(c)
        for (model, skill_id), cells in sorted(by_model_skill.items()):
            nulls = sum(1 for c in cells if c.outcome.is_null)
            offs = sum(1 for c in cells if c.outcome.is_off_schema)
            report.invalid_counts[f"{model}/{skill_id}"] = {
                "cells": len(cells), "null": nulls, "off_schema": offs,
            }
            if validation:
                missing = sorted(validation - {c.instance_id for c in cells})
                if missing:
                    report.unmatched_instances[f"{model}/{skill_id}_missing"] = missing
                    report.passed = False

        # Lexeme cardinality: the validation split is built as equal-sized groups.
        per_lexeme: dict[str, int] = {}
        for inst in self.instances(Split.VALIDATION):
            per_lexeme[inst.target_lexeme or "?"] = per_lexeme.get(inst.target_lexeme or "?", 0) + 1
        if per_lexeme:
            sizes = set(per_lexeme.values())
            if len(sizes) > 1:
                detail = ", ".join(f"{k}={v}" for k, v in sorted(per_lexeme.items()) if v != max(sizes))
                report.warnings.append(f"uneven instances per lexeme: {detail}")

        # Human off-schema labels are schema-protocol violations: flag, never coerce.
        off_schema_human = [c for c in human_cells if c.outcome.is_off_schema]
        if off_schema_human:
            report.warnings.append(
                f"{len(off_schema_human)} off-schema human cell(s), e.g. "
                f"{off_schema_human[0].key} -> {off_schema_human[0].outcome.value!r}"
            )

        # Stored final labels should match the derived (round2-else-round1) label.
        by_key = {c.key: c for c in human_cells}
        mismatches = 0
        for c in human_cells:
            if c.round is not Round.FINAL:
                continue
            r2 = by_key.get((c.instance_id, c.skill_id, c.annotator_id, Round.ROUND2.value))
            r1 = by_key.get((c.instance_id, c.skill_id, c.annotator_id, Round.ROUND1.value))
            derived = r2.outcome if r2 is not None else (r1.outcome if r1 is not None else None)
            if derived is not None and derived != c.outcome:
                mismatches += 1
        if mismatches:
            report.warnings.append(
                f"{mismatches} stored final label(s) differ from the derived round2-else-round1 label"
            )

        (self.root / "alignment.json").write_text(report.to_json(), encoding="utf-8")
        return report
