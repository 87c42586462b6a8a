"""Command line entry point: ``debatekit --input data.json --output results.jsonl ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..backends import AuthError, HashingEmbedder, HttpBackend, HttpEmbedder, ScriptedBackend, ScriptedBehavior
from ..core import AnswerKind, ConfigError, DebateConfig, GeneratorKind, Paradigm, Protocol, validate_config
from ..orchestration import SweepKind, schedule_scaling_sweep
from ..responders import ChallengeKind, TemplateStore
from .data import DatasetError, default_task, draw_sample, infer_answer_kind, load_dataset, resolve_sample_size
from .report import build_report, write_report, write_series
from .runner import Cell, ChallengeSetup, Runner

log = logging.getLogger("debatekit")

EXIT_CONFIG = 2
EXIT_AUTH = 3


def _protocols(text: str) -> list[Protocol]:
    try:
        return [Protocol(p.strip()) for p in text.split(",") if p.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="debatekit", description="Run multi-agent debates over a dataset.")
    p.add_argument("--input", required=True, help="dataset JSON array")
    p.add_argument("--output", required=True, help="results file (one JSON record per line)")
    p.add_argument("--report", help="report JSON path (default: <output>.report.json)")
    p.add_argument("--series-dir", help="directory for CSV series (default: <output stem>_series)")
    p.add_argument("--dataset-name", help="benchmark name, selects a fixed sample size override if one exists")
    p.add_argument("--answer-kind", choices=[k.value for k in AnswerKind], help="default: inferred from the data")
    p.add_argument("--task-instruction", help="task text shown to every agent")

    d = DebateConfig()
    p.add_argument("--decision-protocol", type=_protocols, default=[d.decision_protocol],
                   help="protocol, or a comma-separated list for one cell per protocol")
    p.add_argument("--discussion-paradigm", type=Paradigm, default=d.discussion_paradigm)
    p.add_argument("--response-generator", type=GeneratorKind, default=d.response_generator)
    p.add_argument("--num-agents", type=int, default=d.num_agents)
    p.add_argument("--num-neutral-agents", type=int, default=d.num_neutral_agents)
    p.add_argument("--max-turns", type=int, default=d.max_turns)
    p.add_argument("--voting-starts-after-turn", type=int, default=d.voting_starts_after_turn)
    p.add_argument("--visible-turns-in-memory", type=int, default=d.visible_turns_in_memory)
    p.add_argument("--debate-rounds", type=int, default=d.debate_rounds)
    p.add_argument("--cumulative-point-budget", type=int, default=d.cumulative_point_budget)
    p.add_argument("--num-runs", type=int, default=d.num_runs)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--concurrent-requests", type=int, default=d.concurrent_requests)
    p.add_argument("--temperature", type=float, default=d.temperature)
    p.add_argument("--max-output-tokens", type=int, default=d.max_output_tokens)
    p.add_argument("--use-chain-of-thought", action=argparse.BooleanOptionalAction, default=d.use_chain_of_thought)
    p.add_argument("--all-agents-draft-first", action="store_true")
    p.add_argument("--use-baseline", action="store_true", help="single agent, no discussion")

    p.add_argument("--num-samples", type=int, help="default: Cochran sample size of the dataset")
    p.add_argument("--shuffle-input-samples", action="store_true")
    p.add_argument("--sweep", type=SweepKind, choices=list(SweepKind), metavar="{rounds,agents}")

    p.add_argument("--challenge-scenario", type=ChallengeKind, choices=list(ChallengeKind),
                   metavar="{" + ",".join(k.value for k in ChallengeKind) + "}")
    p.add_argument("--wrong-solutions", help="JSON object mapping sample id to a wrong answer")
    p.add_argument("--extra-context", help="JSON object mapping sample id to extra context")

    p.add_argument("--endpoint-url", help="chat-completions base URL, e.g. http://host:8000/v1")
    p.add_argument("--model-name")
    p.add_argument("--embedding-url", help="embeddings base URL (default: offline hashing embedder)")
    p.add_argument("--embedding-model")
    p.add_argument("--scripted", nargs="?", const="", metavar="BEHAVIOR_JSON",
                   help="use the offline scripted backend, optionally with a behavior file")
    p.add_argument("--templates-dir", help="directory of prompt templates overriding the defaults")
    p.add_argument("--fresh", action="store_true", help="discard an existing results file instead of resuming")
    p.add_argument("--log-level", default="WARNING")
    return p


def _fail(kind: str, message: str, field: Optional[str] = None, code: int = EXIT_CONFIG) -> int:
    record = {"error": {"kind": kind, "message": message}}
    if field:
        record["error"]["field"] = field
    print(json.dumps(record), file=sys.stderr)
    return code


def _base_config(args, protocol: Protocol) -> DebateConfig:
    return DebateConfig(
        decision_protocol=protocol,
        discussion_paradigm=args.discussion_paradigm,
        response_generator=args.response_generator,
        num_agents=args.num_agents,
        num_neutral_agents=args.num_neutral_agents,
        max_turns=args.max_turns,
        voting_starts_after_turn=args.voting_starts_after_turn,
        visible_turns_in_memory=args.visible_turns_in_memory,
        debate_rounds=args.debate_rounds,
        all_agents_draft_first=args.all_agents_draft_first,
        cumulative_point_budget=args.cumulative_point_budget,
        use_chain_of_thought=args.use_chain_of_thought,
        concurrent_requests=args.concurrent_requests,
        seed=args.seed,
        num_runs=args.num_runs,
        temperature=args.temperature,
        max_output_tokens=args.max_output_tokens,
    )


def build_cells(args) -> tuple[list[Cell], dict[str, dict]]:
    cells, info = [], {}
    if args.sweep is not None:
        if args.decision_protocol != [Protocol.SIMPLE_VOTING]:
            raise ConfigError("decision_protocol", "scaling sweeps use simple voting")
        for k, cfg in enumerate(schedule_scaling_sweep(args.sweep, _base_config(args, Protocol.SIMPLE_VOTING)), 1):
            label = f"{args.sweep.value}={k}"
            cells.append(Cell(label, cfg))
            info[label] = {**cfg.to_dict(), "sweep": args.sweep.value, "sweep_point": k}
    elif args.use_baseline:
        cfg = validate_config(_base_config(args, args.decision_protocol[0]))
        cells.append(Cell("baseline", cfg, baseline=True))
        info["baseline"] = {**cfg.to_dict(), "decision_protocol": "baseline"}
    else:
        for protocol in args.decision_protocol:
            cfg = validate_config(_base_config(args, protocol))
            cells.append(Cell(protocol.value, cfg))
            info[protocol.value] = cfg.to_dict()
    if len({c.label for c in cells}) != len(cells):
        raise ConfigError("decision_protocol", "protocol listed twice")
    return cells, info


def _backend(args):
    if args.endpoint_url:
        if not args.model_name:
            raise ConfigError("model_name", "--model-name is required with --endpoint-url")
        return HttpBackend(args.endpoint_url, args.model_name, max_in_flight=args.concurrent_requests), False
    if args.scripted is not None:
        behavior = ScriptedBehavior.from_json(args.scripted) if args.scripted else ScriptedBehavior()
        return ScriptedBackend(behavior), True
    raise ConfigError("endpoint_url", "give --endpoint-url/--model-name or --scripted")


def _json_map(path: Optional[str]) -> dict[str, str]:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise DatasetError(f"{path} must hold a JSON object keyed by sample id")
    return {str(k): str(v) for k, v in data.items()}


def run_experiment(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cells, info = build_cells(args)
        backend, scripted = _backend(args)
        dataset = load_dataset(args.input)
        if not dataset:
            raise DatasetError("dataset is empty")
        n = args.num_samples if args.num_samples is not None else resolve_sample_size(len(dataset), args.dataset_name)
        samples = draw_sample(dataset, n, args.seed, shuffle=args.shuffle_input_samples)
        kind = AnswerKind(args.answer_kind) if args.answer_kind else infer_answer_kind(samples)
        challenge = None
        if args.challenge_scenario is not None:
            challenge = ChallengeSetup(args.challenge_scenario, wrong_solutions=_json_map(args.wrong_solutions),
                                       extra_contexts=_json_map(args.extra_context))
            challenge.check(samples)
        embedder = HashingEmbedder()
        if args.embedding_url:
            embedder = HttpEmbedder(args.embedding_url, args.embedding_model or args.model_name or "")
    except ConfigError as exc:
        return _fail("config", str(exc), exc.field)
    except (DatasetError, OSError, json.JSONDecodeError) as exc:
        return _fail("dataset", str(exc))
    except ValueError as exc:
        return _fail("config", str(exc))

    extra = {}
    if scripted:
        # wall-clock time is the only nondeterministic field; drop it for scripted runs
        extra["clock"] = lambda: 0.0
    runner = Runner(default_task(kind, args.task_instruction), backend, embedder=embedder,
                    challenge=challenge, templates=TemplateStore(args.templates_dir), **extra)
    output = Path(args.output)
    try:
        records = runner.run(cells, samples, output, resume=not args.fresh)
    except AuthError as exc:
        return _fail("auth", str(exc), code=EXIT_AUTH)
    except ValueError as exc:
        return _fail("config", str(exc))

    meta = {
        "input": Path(args.input).name,
        "answer_kind": kind.value,
        "num_samples": len(samples),
        "sample_ids": [s.id for s in samples],
        "backend": "scripted" if scripted else args.model_name,
    }
    report = build_report(records, {c.label: c.config.num_runs for c in cells}, meta)
    write_report(report, args.report or output.with_name(output.name + ".report.json"))
    write_series(report, info, args.series_dir or output.with_name(output.stem + "_series"))
    failed = sum(r.error is not None for r in records)
    print(f"{len(records)} records in {output} ({failed} failed)")
    return 0


def main() -> None:
    sys.exit(run_experiment())
