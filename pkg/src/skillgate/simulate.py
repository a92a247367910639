"""Deterministic simulated annotators for desk-scale end-to-end runs and tests.

Each judgment is drawn from an RNG seeded by (seed, annotator, instance, skill),
so outputs are independent of execution order and survive interruption/resume
unchanged.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .schema import SkillInventory, SkillSpec
from .store import Instance, LabelCell, Round


@dataclass(frozen=True)
class NoiseProfile:
    """Per-judgment outcome probabilities; the remainder goes to wrong in-schema labels."""

    correct: float = 1.0
    off_schema: float = 0.0
    null: float = 0.0

    def __post_init__(self) -> None:
        for name in ("correct", "off_schema", "null"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} probability {p} outside [0, 1]")
        if self.correct + self.off_schema + self.null > 1.0 + 1e-9:
            raise ValueError("outcome probabilities sum above 1")


GoldSource = Mapping[tuple[str, str], str] | Callable[[str, str], str]


def _cell_rng(seed: int, annotator: str, instance_id: str, skill_id: str, salt: str = "") -> random.Random:
    key = f"{seed}|{annotator}|{instance_id}|{skill_id}|{salt}".encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))


def pseudo_gold_label(skill: SkillSpec, instance_id: str) -> str:
    """Stable stand-in gold label when no real gold is available."""
    key = f"gold|{instance_id}|{skill.skill_id}".encode("utf-8")
    index = int.from_bytes(hashlib.sha256(key).digest()[:4], "big") % len(skill.labels)
    return skill.labels[index]


@dataclass
class SimulatedAnnotator:
    """Annotator client drawing labels around a gold source under a noise profile.

    Usable anywhere a model client is expected: ``annotate`` returns a raw JSON
    response string with one key per requested skill.
    """

    name: str = "simulated"
    seed: int = 0
    default_profile: NoiseProfile = field(default_factory=NoiseProfile)
    profiles: dict[str, NoiseProfile] = field(default_factory=dict)
    gold: GoldSource | None = None

    def _gold_label(self, instance_id: str, skill: SkillSpec) -> str | None:
        if self.gold is None:
            return pseudo_gold_label(skill, instance_id)
        if callable(self.gold):
            return self.gold(instance_id, skill.skill_id)
        return self.gold.get((instance_id, skill.skill_id))

    def _off_schema_token(self, skill: SkillSpec, rng: random.Random) -> str:
        while True:
            token = "".join(rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ") for _ in range(2))
            if token not in skill.labels:
                return token

    def raw_value(self, instance_id: str, skill: SkillSpec) -> str:
        """The raw string this annotator would write for one cell ("" = left empty)."""
        profile = self.profiles.get(skill.skill_id, self.default_profile)
        rng = _cell_rng(self.seed, self.name, instance_id, skill.skill_id)
        gold = self._gold_label(instance_id, skill)
        u = rng.random()
        if u < profile.null or gold is None:
            return ""
        u -= profile.null
        if u < profile.off_schema:
            return self._off_schema_token(skill, rng)
        u -= profile.off_schema
        if u < profile.correct:
            return gold
        wrong = [l for l in skill.labels if l != gold]
        return rng.choice(wrong) if wrong else gold

    def annotate(self, prompt: str, instance: Instance, skills: Sequence[SkillSpec]) -> str:
        payload = {s.skill_id: self.raw_value(instance.instance_id, s) for s in skills}
        return json.dumps(payload, ensure_ascii=False)


def simulate_two_round_cells(
    instances: Iterable[Instance],
    inventory: SkillInventory,
    gold: GoldSource,
    annotators: tuple[str, str],
    seed: int,
    round1_profiles: Mapping[str, NoiseProfile],
    round2_profile: NoiseProfile = NoiseProfile(correct=0.9),
    *,
    timestamp: str = "1970-01-01T00:00:00+00:00",
) -> list[LabelCell]:
    """Two simulated humans executing the two-round protocol: independent round-1
    labels, then independent focused re-annotation of exactly the round-1 disputes.
    """
    from .gold import round2_worklist  # local import avoids a cycle at module load

    sims = {
        name: SimulatedAnnotator(
            name=name,
            seed=seed,
            profiles=dict(round1_profiles),
            gold=gold,
        )
        for name in annotators
    }
    instances = list(instances)
    cells: list[LabelCell] = []
    for inst in instances:
        for skill in inventory:
            for name, sim in sims.items():
                outcome = inventory.normalize(skill.skill_id, sim.raw_value(inst.instance_id, skill))
                cells.append(LabelCell(inst.instance_id, skill.skill_id, name, Round.ROUND1, outcome, timestamp))

    r2_sims = {
        name: SimulatedAnnotator(
            name=f"{name}|round2",
            seed=seed,
            default_profile=round2_profile,
            gold=gold,
        )
        for name in annotators
    }
    for dispute in round2_worklist(cells, annotators):
        skill = inventory[dispute.skill_id]
        for name, sim in r2_sims.items():
            outcome = inventory.normalize(skill.skill_id, sim.raw_value(dispute.instance_id, skill))
            cells.append(
                LabelCell(dispute.instance_id, dispute.skill_id, name, Round.ROUND2, outcome, timestamp)
            )
    return cells


def synthetic_instances(count: int, lexemes: Sequence[str]) -> list[Instance]:
    """Evenly distributed synthetic validation instances for tests and demos."""
    colors = ("black", "white", "red", "yellow", "blue", "green")
    out = []
    for i in range(count):
        lexeme = lexemes[i % len(lexemes)]
        text = f"synthetic line {i:04d} mentioning {lexeme} in context"
        start = text.index(lexeme)
        out.append(
            Instance(
                instance_id=f"inst{i:04d}",
                text=text,
                span=(start, start + len(lexeme)),
                target_lexeme=lexeme,
                color_category=colors[i % len(colors)],
            )
        )
    return out


def synthetic_gold(instances: Iterable[Instance], inventory: SkillInventory) -> dict[tuple[str, str], str]:
    return {
        (inst.instance_id, skill.skill_id): pseudo_gold_label(skill, inst.instance_id)
        for inst in instances
        for skill in inventory
    }
