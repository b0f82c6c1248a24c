"""Command-line entry points: ingest, run, eval, replay.

Offline runs with a scripted backend are fully deterministic: identical
invocations print identical bytes. Exit codes: 0 success, 2 validation
failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

from .config import (
    build_backend,
    build_clock,
    build_embedder,
    build_tools,
    load_config,
)
from .errors import ConfigError, EngineError, FormatError
from .gateway import HashEmbedder
from .memory import load_long_term, persist_long_term
from .metrics import evaluate_corpus, load_eval_records, write_report
from .pipeline import run_pipeline, validate_script_coverage
from .session import SessionState, SessionStore

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

ABLATION_CHOICES = ("planner", "memory", "departments", "aggregation")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="periop", description="Perioperative decision-support engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="validate a corpus directory and persist the store")
    ingest.add_argument("corpus", help="corpus directory (patients/records/labs/cases)")
    ingest.add_argument("--out", default="store.json", help="normalized store output path")
    ingest.add_argument("--dim", type=int, default=64, help="hash-embedder dimension")

    run = sub.add_parser("run", help="run one session end to end and print the result")
    run.add_argument("patient", help="patient id from the corpus")
    run.add_argument("task", help="free-text task description")
    run.add_argument("--config", required=True, help="engine config file")
    run.add_argument("--corpus", help="override the configured corpus path")
    run.add_argument("--offline", action="store_true", help="require scripted backend + fixture tools")
    run.add_argument(
        "--ablate",
        action="append",
        choices=ABLATION_CHOICES,
        default=[],
        help="disable one engine component (repeatable)",
    )
    run.add_argument("--session-id", help="explicit session id (defaults to a deterministic slug)")

    evaluate = sub.add_parser("eval", help="compute metrics over a directory of eval records")
    evaluate.add_argument("sessions", help="directory of *.json eval records")
    evaluate.add_argument("--out", default="report", help="output prefix (.tsv/.json)")

    replay = sub.add_parser("replay", help="re-render a stored trace without backend calls")
    replay.add_argument("document", help="session document or trace JSON file")
    return parser


def _cmd_ingest(args) -> int:
    store = load_long_term(args.corpus, HashEmbedder(dim=args.dim))
    out = persist_long_term(store, args.out)
    print(
        f"ingested {len(store.patients)} patients, {len(store.records)} records, "
        f"{sum(len(v) for v in store.labs.values())} lab rows, {len(store.cases)} cases"
    )
    for diagnostic in store.diagnostics:
        print(f"  warning: {diagnostic}")
    print(f"store written to {out}", file=sys.stderr)
    return EXIT_OK


def _session_slug(patient_id: str, task_text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", task_text.lower()).strip("-")[:24].rstrip("-")
    return f"cli-{patient_id}-{slug}"


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.corpus:
        config.corpus_path = args.corpus
    if not config.corpus_path:
        raise ConfigError("no corpus: set corpus_path in the config or pass --corpus")
    if args.offline:
        if config.backend.kind != "scripted":
            raise ConfigError("--offline requires backend.kind=scripted in the config")
        config.tools.mode = "offline"
    for flag in args.ablate:
        setattr(config.ablation, flag, True)

    embedder = build_embedder(config)
    store = load_long_term(config.corpus_path, embedder)
    backend = build_backend(config)
    validate_script_coverage(backend, config, store)
    tools = build_tools(config)
    session = SessionState(
        session_id=args.session_id or _session_slug(args.patient, args.task),
        patient_id=args.patient,
        task_text=args.task,
        clock=build_clock(config),
    )
    if store.get_patient(args.patient) is None:
        raise ConfigError(f"unknown patient {args.patient!r} in corpus {config.corpus_path}")
    session_store = SessionStore(config.session_dir)
    final = run_pipeline(session, config, store, backend, tools, embedder, session_store)

    print(f"session: {session.session_id}")
    print(f"task: {session.task.value}")
    print(f"phase: {session.phase.value}")
    print("plan:")
    for step in session.plan.steps:
        print(f"  {step.index + 1}. {step.text}")
    print("final sections:")
    for heading, text in final.final_sections:
        print(f"## {heading}")
        print(text)
    if session.flags:
        print("flags: " + ", ".join(session.flags))
    print("token ledger:")
    for stage, usage in session.ledger.by_stage().items():
        print(
            f"  {stage}: calls={usage['calls']} input={usage['input_tokens']} "
            f"output={usage['output_tokens']}"
        )
    totals = session.ledger.totals()
    print(
        f"  total: input={totals['input_tokens']} output={totals['output_tokens']} "
        f"wall={totals['wall_time']:.1f}s"
    )
    # Path depends on where the config lives; keep stdout byte-stable.
    print(f"session document: {session_store.path_for(session.session_id)}", file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args) -> int:
    records = load_eval_records(args.sessions)
    if not records:
        raise FormatError(f"no eval records found in {args.sessions}")
    report = evaluate_corpus(records)
    tsv_path, json_path = write_report(report, args.out)
    sys.stdout.write(report.to_table())
    if report.undefined_counts:
        print(f"undefined (excluded) values: {report.undefined_counts}")
    print(f"report written to {tsv_path} and {json_path}", file=sys.stderr)
    return EXIT_OK


def _cmd_replay(args) -> int:
    path = Path(args.document)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path.name}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    trace = doc.get("trace") if "trace" in doc else doc
    if not trace or "rounds" not in trace:
        raise FormatError(f"{path.name} carries no search trace")
    config = trace.get("config", {})
    print(
        f"search trace: task={trace.get('task')} "
        f"max_steps={config.get('max_steps')} search_width={config.get('search_width')} "
        f"beam_width={config.get('beam_width')}"
    )
    for round_doc in trace["rounds"]:
        print(f"depth {round_doc['depth']}:")
        for node in round_doc["candidates"]:
            mark = "kept " if node["kept"] else "prune"
            print(
                f"  [{mark}] n{node['node_id']:03d} parent={node['parent_id']} "
                f"rank={node['origin_rank']} score={node['score']:.4f} step={node['step_text']!r}"
            )
    print(f"final node: n{trace['final_node_id']:03d} score={trace['final_score']:.4f}")
    print("final plan:")
    for i, step in enumerate(trace.get("final_plan", []), start=1):
        print(f"  {i}. {step}")
    if trace.get("truncated"):
        print("note: search was truncated before max depth")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "ingest": _cmd_ingest,
        "run": _cmd_run,
        "eval": _cmd_eval,
        "replay": _cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EngineError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
