"""Command-line interface.

Exit codes: 0 success; 2 usage or configuration problem; 3 schema validation
failure; 4 ingest failure; 5 analysis or workflow failure; 6 no data in store;
1 anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import analysis as _analysis
from . import gold as _gold
from . import reports as _reports
from .errors import (
    CheckpointMismatch,
    IngestError,
    ProtocolViolation,
    RunPaused,
    SchemaError,
    SkillgateError,
    WorkflowError,
)
from .runner import RunConfig, build_client, run_annotation
from .store import CorpusStore

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_SCHEMA = 3
EXIT_INGEST = 4
EXIT_ANALYSIS = 5
EXIT_NO_DATA = 6


def _open_store(args: argparse.Namespace) -> CorpusStore:
    return CorpusStore.open(args.store)


def cmd_ingest(args: argparse.Namespace) -> int:
    if args.source == "schema":
        text = Path(args.file).read_text(encoding="utf-8")
        CorpusStore.create(args.store, text)
        print(f"store initialized at {args.store} with schema {args.file}")
        return EXIT_OK
    store = _open_store(args)
    if args.source == "two_round":
        annotators = tuple(args.annotators.split(","))
        if len(annotators) != 2:
            print("two_round ingest needs --annotators NAME1,NAME2", file=sys.stderr)
            return EXIT_USAGE
        count = store.ingest_two_round_file(args.file, (annotators[0], annotators[1]))
    elif args.source == "model":
        count = store.ingest_model_outputs(args.file, args.model_id)
    elif args.source == "target_map":
        count = store.ingest_target_map(args.file)
    elif args.source == "corpus":
        count = store.ingest_corpus(args.file)
    else:
        print(f"unknown source kind {args.source!r}", file=sys.stderr)
        return EXIT_USAGE
    print(f"ingested {args.file}: {count} record(s) stored")
    return EXIT_OK


def cmd_schema_lint(args: argparse.Namespace) -> int:
    from .schema import lint_report

    document = Path(args.file).read_text(encoding="utf-8")
    findings = lint_report(document)
    errors = [f for f in findings if f.startswith("error:")]
    for finding in findings:
        print(finding)
    if errors:
        return EXIT_SCHEMA
    print(f"{args.file}: OK")
    return EXIT_OK


def _apply_seed(config: RunConfig, seed: int) -> RunConfig:
    """Global --seed fills the simulated annotator's seed when the config omits it."""
    import dataclasses

    if config.provider != "simulated":
        return config
    simulated = dict(config.simulated or {})
    simulated.setdefault("seed", seed)
    return dataclasses.replace(config, simulated=simulated)


def cmd_run(args: argparse.Namespace) -> int:
    store = _open_store(args)
    config = _apply_seed(RunConfig.from_file(args.config), args.seed)
    if args.feature:
        import dataclasses

        config = dataclasses.replace(config, feature=args.feature)
    if args.resume and args.resume != config.run_id:
        print(f"--resume {args.resume} does not match config run_id {config.run_id}", file=sys.stderr)
        return EXIT_USAGE

    gold_map = None
    if config.provider == "simulated" and (config.simulated or {}).get("gold") == "store":
        annotators = _reports.human_annotators(store)
        gold_cells = _gold.build_gold(store.cells(), "final", annotators)
        gold_map = {(g.instance_id, g.skill_id): g.label for g in gold_cells}
    client = build_client(config, gold=gold_map)

    from .store import Split

    if args.instances:
        from .runner import load_instances_table

        instances = load_instances_table(args.instances, config.expected_input_columns)
    else:
        instances = store.instances(Split.VALIDATION) or store.instances()
    result = run_annotation(
        config, instances, store.inventory, client,
        sink=lambda cells: store.add_cells(cells, allow_overwrite=True),
    )
    print(
        f"run {config.run_id}: {len(result.cells)} new cell(s), "
        f"{result.requests_made} request(s), mode={result.mode}"
    )
    return EXIT_OK


def cmd_gold(args: argparse.Namespace) -> int:
    store = _open_store(args)
    cells = store.cells()
    if not cells:
        print("no data: store has no cells", file=sys.stderr)
        return EXIT_NO_DATA
    annotators = _reports.human_annotators(store)
    gold_cells = _gold.build_gold(cells, args.mode, annotators)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digests = {"inventory_digest": store.inventory.source_digest, "store_digest": store.cell_log_digest()}
    _reports.write_table(
        out / f"gold_{args.mode}.csv",
        ("instance_id", "skill_id", "label", "provenance"),
        [(g.instance_id, g.skill_id, g.label, g.provenance.value) for g in gold_cells],
        digests=digests,
    )
    records = _gold.operability_records(
        cells, store.inventory.skill_ids, annotators, len(store.validation_ids())
    )
    _reports.write_table(
        out / "operability.csv",
        ("feature", "round1_kappa", "final_kappa", "gold_coverage",
         "reconciliation_rate", "round1_disagreements", "round2_reconciled"),
        [(r.skill_id, r.round1_kappa, r.final_kappa, r.gold_coverage,
          r.reconciliation_rate, r.round1_disagreements, r.round2_reconciled)
         for r in records],
        digests=digests,
    )
    print(f"gold ({args.mode}): {len(gold_cells)} cell(s) -> {out}")
    return EXIT_OK


_REPORT_CHOICES = ("operability", "retention", "tiers", "correlations", "invalid", "pairwise", "all")


def cmd_analyze(args: argparse.Namespace) -> int:
    store = _open_store(args)
    if not store.cells():
        print("no data: store has no cells; ingest sources first", file=sys.stderr)
        return EXIT_NO_DATA
    retention = _analysis.RetentionConfig(
        exclusions=tuple(args.exclude.split(",")) if args.exclude else ()
    )
    bundle = _reports.compute_bundle(
        store, retention=retention, model_id=args.model_id, frontier=args.frontier
    )
    digests = {"inventory_digest": store.inventory.source_digest, "store_digest": store.cell_log_digest()}
    out = Path(args.out)
    written = _reports.emit_reports(bundle, out, digests)
    wanted = set(_REPORT_CHOICES if args.report == "all" else [args.report])
    keep_names = {
        "operability": {"operability.csv", "fig_reconciliation.csv", "fig_round1_vs_final.csv"},
        "retention": {"screening.csv", "model_eval.csv"},
        "tiers": {"feasibility_tiers.csv"},
        "correlations": {"level_correlations.csv", "fig_level_correlations.csv"},
        "invalid": {"invalid_outputs.csv"},
        "pairwise": {"pairwise_kappa.csv", "fig_pairwise_heatmap.csv", "fig_dendrogram.csv"},
    }
    if args.report != "all":
        keep = keep_names[args.report] | {"summary.json"}
        for path in written:
            if path.name not in keep:
                path.unlink(missing_ok=True)
    print(f"analysis reports written to {out}")
    return EXIT_OK


def cmd_workflow(args: argparse.Namespace) -> int:
    store = _open_store(args)
    config_doc = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    run_section = config_doc.get("run")
    run_config = (
        _apply_seed(RunConfig.from_dict(run_section), args.seed) if run_section is not None else None
    )
    retention_section = dict(config_doc.get("retention") or {})
    if "exclusions" in retention_section:
        retention_section["exclusions"] = tuple(retention_section["exclusions"])
    retention = _analysis.RetentionConfig(**retention_section)
    classifier = _analysis.ClassifierConfig(**(config_doc.get("classifier") or {}))
    state = _reports.run_workflow(
        store, args.out, run_config=run_config, classifier=classifier, retention=retention
    )
    print(f"workflow complete through stage: {state.stage.value if state.stage else 'none'}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    store = _open_store(args)
    config = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    tokens = config.get("tokens")
    if not tokens:
        print("serve config needs a 'tokens' mapping (annotator_id -> bearer token)", file=sys.stderr)
        return EXIT_USAGE
    app = create_app(store, tokens)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    args.report = "all"
    args.model_id = getattr(args, "model_id", None)
    args.frontier = getattr(args, "frontier", None)
    args.exclude = getattr(args, "exclude", None)
    return cmd_analyze(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillgate", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="seed for simulated annotators")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a data source into the store")
    p.add_argument("--store", required=True)
    p.add_argument("--source", required=True,
                   choices=("schema", "two_round", "model", "target_map", "corpus"))
    p.add_argument("--file", required=True)
    p.add_argument("--annotators", default="", help="NAME1,NAME2 for two_round files")
    p.add_argument("--model-id", default=None, help="model name for wide-format model files")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("schema", help="schema tools")
    schema_sub = p.add_subparsers(dest="schema_command", required=True)
    p_lint = schema_sub.add_parser("lint", help="validate a schema file")
    p_lint.add_argument("--file", required=True)
    p_lint.set_defaults(func=cmd_schema_lint)

    p = sub.add_parser("run", help="run model annotation from a run config")
    p.add_argument("--store", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--feature", default=None, help="override the config's feature selector")
    p.add_argument("--resume", default=None, help="resume this run id from its checkpoint")
    p.add_argument("--instances", default=None,
                   help="annotate instances from this table instead of the store")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gold", help="build a gold standard and operability report")
    p.add_argument("--store", required=True)
    p.add_argument("--mode", required=True, choices=("round1", "final"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gold)

    p = sub.add_parser("analyze", help="emit analysis reports")
    p.add_argument("--store", required=True)
    p.add_argument("--report", default="all", choices=_REPORT_CHOICES)
    p.add_argument("--out", required=True)
    p.add_argument("--model-id", default=None)
    p.add_argument("--frontier", default=None)
    p.add_argument("--exclude", default=None, help="comma-separated skills removed from retention")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("workflow", help="run the four-stage workflow")
    p.add_argument("--store", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_workflow)

    p = sub.add_parser("serve", help="start the annotation service")
    p.add_argument("--store", required=True)
    p.add_argument("--config", required=True, help="YAML with a tokens: mapping")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="emit every report (analyze --report all)")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (IngestError, ProtocolViolation) as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (CheckpointMismatch, RunPaused) as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except WorkflowError as exc:
        print(f"workflow error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except SkillgateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (FileNotFoundError, json.JSONDecodeError, yaml.YAMLError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
