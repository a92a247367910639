"""Model annotation runs: schema-injected prompts, constrained-output parsing,
and checkpointed, resumable batch execution against a chat-completion endpoint
or a deterministic simulated annotator.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import jinja2
import yaml

from .errors import CheckpointMismatch, RunPaused, SkillgateError, TemplateError
from .schema import LabelOutcome, SkillInventory, SkillSpec, resolve_skills
from .simulate import NoiseProfile, SimulatedAnnotator
from .store import Instance, LabelCell, Round

OPEN_MARK = "⟦"
CLOSE_MARK = "⟧"


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff_base: float = 0.5
    backoff_factor: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    """Everything one annotation run depends on; hashable for resume safety."""

    model: str
    provider: str = "http"  # http | simulated
    endpoint: str | None = None
    token_env: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 256
    feature: str = "all"
    batch_size: int = 20
    concurrency: int = 4
    checkpoint_path: str = "run.ckpt"
    template_path: str | None = None
    expected_input_columns: tuple[str, ...] = ("instance_id", "text")
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    run_id: str = "run"
    simulated: dict = field(default_factory=dict, hash=False)

    def digest(self) -> str:
        payload = {
            "model": self.model,
            "provider": self.provider,
            "endpoint": self.endpoint,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "feature": self.feature,
            "template_path": self.template_path,
            "expected_input_columns": list(self.expected_input_columns),
            "run_id": self.run_id,
            "simulated": self.simulated,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        retry = RetryPolicy(**data.pop("retry", {}))
        columns = tuple(data.pop("expected_input_columns", ("instance_id", "text")))
        data.pop("store", None)  # store location is CLI-level, not run semantics
        if "checkpoint" in data:
            data["checkpoint_path"] = data.pop("checkpoint")
        if "template" in data:
            data["template_path"] = data.pop("template")
        return cls(retry=retry, expected_input_columns=columns, **data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {})


class AnnotatorClient(Protocol):
    def annotate(self, prompt: str, instance: Instance, skills: Sequence[SkillSpec]) -> str: ...


def load_instances_table(path: str | Path, expected_columns: Sequence[str]) -> list[Instance]:
    """Read instances from a delimiter-separated file, enforcing the configured columns."""
    from .store import read_table

    header, rows = read_table(path)
    missing = [c for c in expected_columns if c not in header]
    if missing:
        raise SkillgateError(f"{path}: missing expected input column(s) {missing}; found {list(header)}")
    instances = []
    for row in rows:
        span = None
        if row.get("span_start", "").strip() and row.get("span_end", "").strip():
            span = (int(row["span_start"]), int(row["span_end"]))
        instances.append(Instance(instance_id=row["instance_id"].strip(),
                                  text=row.get("text", ""), span=span))
    return instances


class ClientError(SkillgateError):
    """Transport or endpoint failure for one annotation request."""


class HttpChatClient:
    """Minimal chat-completion client: one user message, fixed decoding settings."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        token: str | None = None,
        temperature: float = 0.0,
        max_output_tokens: int = 256,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.token = token
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self._client = httpx.Client(timeout=timeout)

    def annotate(self, prompt: str, instance: Instance, skills: Sequence[SkillSpec]) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
        }
        try:
            response = self._client.post(self.endpoint, json=body, headers=headers)
            response.raise_for_status()
            data = response.json()
            return data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ClientError(f"endpoint failure: {exc}") from exc


def _environment() -> jinja2.Environment:
    return jinja2.Environment(undefined=jinja2.StrictUndefined, keep_trailing_newline=True)


def render_prompt(
    skills: Sequence[SkillSpec],
    instance: Instance,
    template: str,
) -> str:
    """Render the annotation prompt; byte-identical for identical inputs.

    The prompt carries, per skill: the label table, decision rules, and examples
    (each section elided when empty), the concordance line with the target span
    marked, and the fixed output keys (one per skill).
    """
    env = _environment()
    keys = json.dumps([s.skill_id for s in skills])
    try:
        return env.from_string(template).render(
            skills=list(skills),
            instance=instance,
            marked_text=instance.marked_text(OPEN_MARK, CLOSE_MARK),
            keys=keys,
            open_mark=OPEN_MARK,
            close_mark=CLOSE_MARK,
        )
    except jinja2.UndefinedError as exc:
        raise TemplateError(f"unresolved template variable: {exc}") from exc


def extract_first_object(text: str) -> dict | None:
    """First well-formed JSON object embedded anywhere in the text, else None."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            value, _ = decoder.raw_decode(text[start:])
        except ValueError:
            start = text.find("{", start + 1)
            continue
        if isinstance(value, dict):
            return value
        start = text.find("{", start + 1)
    return None


@dataclass(frozen=True)
class ParsedResponse:
    outcomes: dict[str, LabelOutcome]
    parsed: dict[str, str] | None
    parse_failed: bool


def parse_response(
    raw: str,
    expected_keys: Sequence[str],
    inventory: SkillInventory,
) -> ParsedResponse:
    """Constrained-output parse: every expected key gets an outcome, always.

    Missing keys normalize to Null; values pass through label normalization; a
    response with no JSON object yields Null everywhere plus a failure flag.
    """
    obj = extract_first_object(raw)
    if obj is None:
        return ParsedResponse(
            outcomes={k: inventory.normalize(k, "") for k in expected_keys},
            parsed=None,
            parse_failed=True,
        )
    parsed = {k: ("" if obj.get(k) is None else str(obj.get(k))) for k in expected_keys}
    outcomes = {k: inventory.normalize(k, parsed[k]) for k in expected_keys}
    return ParsedResponse(outcomes=outcomes, parsed=parsed, parse_failed=False)


@dataclass
class ModelResponse:
    instance_id: str
    raw: str
    parsed: dict[str, str] | None
    outcomes: dict[str, LabelOutcome]
    parse_failed: bool
    latency: float
    attempts: int


class Checkpoint:
    """Append-only resume log: a digest header line, then completed (instance, skill) pairs."""

    def __init__(self, path: str | Path, run_id: str, config_digest: str, inventory_digest: str):
        self.path = Path(path)
        self.run_id = run_id
        self.config_digest = config_digest
        self.inventory_digest = inventory_digest
        self.completed: set[tuple[str, str]] = set()

    @classmethod
    def create(cls, path: str | Path, run_id: str, config_digest: str, inventory_digest: str) -> "Checkpoint":
        ckpt = cls(path, run_id, config_digest, inventory_digest)
        ckpt.path.parent.mkdir(parents=True, exist_ok=True)
        header = json.dumps(
            {"run_id": run_id, "config_digest": config_digest, "inventory_digest": inventory_digest}
        )
        ckpt.path.write_text(header + "\n", encoding="utf-8")
        return ckpt

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise CheckpointMismatch(f"{path}: empty checkpoint")
        header = json.loads(lines[0])
        ckpt = cls(path, header["run_id"], header["config_digest"], header["inventory_digest"])
        for line in lines[1:]:
            if line.strip():
                instance_id, skill_id = line.split("\t")
                ckpt.completed.add((instance_id, skill_id))
        return ckpt

    @classmethod
    def open_or_create(
        cls, path: str | Path, run_id: str, config_digest: str, inventory_digest: str
    ) -> "Checkpoint":
        if Path(path).exists():
            ckpt = cls.load(path)
            if ckpt.config_digest != config_digest:
                raise CheckpointMismatch(
                    f"{path}: run config changed since this checkpoint was written; "
                    "refusing to resume (start a new run id or delete the checkpoint)"
                )
            if ckpt.inventory_digest != inventory_digest:
                raise CheckpointMismatch(
                    f"{path}: skill inventory changed since this checkpoint was written; refusing to resume"
                )
            return ckpt
        return cls.create(path, run_id, config_digest, inventory_digest)

    def mark(self, pairs: Sequence[tuple[str, str]]) -> None:
        with self.path.open("a", encoding="utf-8") as fh:
            for instance_id, skill_id in pairs:
                fh.write(f"{instance_id}\t{skill_id}\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.completed.update(pairs)


@dataclass
class RunResult:
    cells: list[LabelCell]
    checkpoint: Checkpoint
    responses: list[ModelResponse]
    requests_made: int
    mode: str  # "single_skill" or "all_skills": recorded because prompting
    # load may shift outputs, so reports must say which mode produced each cell


def build_client(config: RunConfig, gold=None) -> AnnotatorClient:
    if config.provider == "simulated":
        sim = config.simulated or {}
        profiles = {
            skill_id: NoiseProfile(**p) for skill_id, p in (sim.get("per_skill") or {}).items()
        }
        default = NoiseProfile(**(sim.get("profile") or {"correct": 1.0}))
        return SimulatedAnnotator(
            name=sim.get("name", config.model),
            seed=int(sim.get("seed", 0)),
            default_profile=default,
            profiles=profiles,
            gold=gold,
        )
    if config.provider == "http":
        if not config.endpoint:
            raise SkillgateError("http provider requires an endpoint URL")
        token = os.environ.get(config.token_env) if config.token_env else None
        return HttpChatClient(
            config.endpoint,
            config.model,
            token=token,
            temperature=config.temperature,
            max_output_tokens=config.max_output_tokens,
        )
    raise SkillgateError(f"unknown provider {config.provider!r}")


def run_annotation(
    config: RunConfig,
    instances: Sequence[Instance],
    inventory: SkillInventory,
    client: AnnotatorClient,
    *,
    template: str | None = None,
    sink: Callable[[Sequence[LabelCell]], None] | None = None,
    timestamp: str = "",
) -> RunResult:
    """Annotate every (instance, selected skill) pair not already checkpointed.

    Responses are gathered with bounded concurrency, canonicalized by
    (instance_id, skill_id), persisted batch-by-batch through the sink, and only
    then checkpointed, so an interrupted run resumed later yields exactly the
    cells of an uninterrupted one (given a deterministic annotator).
    """
    skills = resolve_skills(inventory, config.feature)
    if template is None:
        if config.template_path:
            template = Path(config.template_path).read_text(encoding="utf-8")
        else:
            from .fixtures import default_prompt_template

            template = default_prompt_template()

    checkpoint = Checkpoint.open_or_create(
        config.checkpoint_path, config.run_id, config.digest(), inventory.source_digest
    )

    pending: list[tuple[Instance, tuple[SkillSpec, ...]]] = []
    for instance in sorted(instances, key=lambda i: i.instance_id):
        todo = tuple(
            s for s in skills if (instance.instance_id, s.skill_id) not in checkpoint.completed
        )
        if todo:
            pending.append((instance, todo))

    def one_request(item: tuple[Instance, tuple[SkillSpec, ...]]) -> ModelResponse:
        instance, todo = item
        prompt = render_prompt(todo, instance, template)
        started = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(1, config.retry.attempts + 1):
            try:
                raw = client.annotate(prompt, instance, todo)
                parsed = parse_response(raw, [s.skill_id for s in todo], inventory)
                return ModelResponse(
                    instance_id=instance.instance_id,
                    raw=raw,
                    parsed=parsed.parsed,
                    outcomes=parsed.outcomes,
                    parse_failed=parsed.parse_failed,
                    latency=time.monotonic() - started,
                    attempts=attempt,
                )
            except ClientError as exc:
                last_error = exc
                if attempt < config.retry.attempts:
                    time.sleep(config.retry.backoff_base * config.retry.backoff_factor ** (attempt - 1))
        raise RunPaused(
            f"endpoint failed after {config.retry.attempts} attempt(s) on "
            f"{instance.instance_id}: {last_error}",
            completed=len(checkpoint.completed),
        )

    cells: list[LabelCell] = []
    responses: list[ModelResponse] = []
    requests_made = 0
    mode = "all_skills" if config.feature == "all" else "single_skill"

    for batch_start in range(0, len(pending), config.batch_size):
        batch = pending[batch_start : batch_start + config.batch_size]
        with ThreadPoolExecutor(max_workers=max(1, config.concurrency)) as pool:
            try:
                results = list(pool.map(one_request, batch))
            except RunPaused:
                raise  # completed batches are persisted and checkpointed; this one is not
        requests_made += len(batch)
        batch_cells: list[LabelCell] = []
        for (instance, todo), response in zip(batch, results):
            responses.append(response)
            for skill in todo:
                batch_cells.append(
                    LabelCell(
                        instance_id=instance.instance_id,
                        skill_id=skill.skill_id,
                        annotator_id=config.model,
                        round=Round.MODEL,
                        outcome=response.outcomes[skill.skill_id],
                        timestamp=timestamp,
                    )
                )
        batch_cells.sort(key=lambda c: (c.instance_id, c.skill_id))
        if sink is not None:
            sink(batch_cells)
        checkpoint.mark([(c.instance_id, c.skill_id) for c in batch_cells])
        cells.extend(batch_cells)

    return RunResult(cells=cells, checkpoint=checkpoint, responses=responses,
                     requests_made=requests_made, mode=mode)
