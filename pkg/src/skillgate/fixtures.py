"""Loaders for the reference tables and inventory shipped inside the package.

The raw annotation data behind the published study is not distributed, so these
tables are the ground truth the decision and statistics layers are validated
against.
"""
from __future__ import annotations

import csv
import io
from importlib import resources

from .analysis import InvalidOutputRecord
from .gold import OperabilityRecord
from .schema import SkillInventory, parse_inventory
from .stats import AgreementMatrix


def _read(name: str) -> str:
    return resources.files("skillgate.data").joinpath(name).read_text(encoding="utf-8")


def reference_inventory_text() -> str:
    return _read("bp_inventory.yaml")


def reference_inventory() -> SkillInventory:
    return parse_inventory(reference_inventory_text())


def default_prompt_template() -> str:
    return _read("prompt_default.j2")


def _rows(name: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(_read(f"tables/{name}"))))


def _opt_float(value: str) -> float | None:
    value = value.strip()
    return float(value) if value else None


def reference_operability() -> list[OperabilityRecord]:
    records = []
    for row in _rows("operability.csv"):
        records.append(
            OperabilityRecord(
                skill_id=row["feature"],
                round1_kappa=_opt_float(row["round1_kappa"]),
                final_kappa=_opt_float(row["final_kappa"]),
                gold_coverage=float(row["gold_coverage"]),
                reconciliation_rate=_opt_float(row["reconciliation_rate"]),
                round1_disagreements=int(row["round1_disagreements"]),
                round2_reconciled=int(row["round2_reconciled"]),
            )
        )
    return records


def reference_model_eval() -> list[dict]:
    out = []
    for row in _rows("model_eval.csv"):
        out.append(
            {
                "skill_id": row["feature"],
                "n": int(row["n"]),
                "accuracy": float(row["accuracy"]),
                "kappa": float(row["kappa"]),
                "macro_f1": float(row["macro_f1"]),
                "weighted_f1": float(row["weighted_f1"]),
                "random_baseline": _opt_float(row["random_baseline"]),
            }
        )
    return out


def reference_tiers() -> list[dict]:
    return [
        {"skill_id": r["feature"], "kappa": float(r["kappa"]),
         "accuracy": float(r["accuracy"]), "tier": r["feasibility_tier"]}
        for r in _rows("feasibility_tiers.csv")
    ]


def reference_correlations() -> list[dict]:
    return [
        {"level": r["level"], "n": int(r["N"]), "r": float(r["r"]), "p": float(r["p"])}
        for r in _rows("level_correlations.csv")
    ]


def reference_pairwise() -> AgreementMatrix:
    rows = _rows("pairwise_kappa.csv")
    names = tuple(r["annotator"] for r in rows)
    values = tuple(tuple(float(row[name]) for name in names) for row in rows)
    return AgreementMatrix(names, values)


def reference_invalid_outputs() -> list[InvalidOutputRecord]:
    return [
        InvalidOutputRecord(
            model=r["model"],
            skill_id=r["feature"],
            null_rate=float(r["null_rate"]),
            off_schema_rate=float(r["off_schema_rate"]),
            invalid_rate=float(r["invalid_rate"]),
        )
        for r in _rows("invalid_outputs.csv")
    ]
