"""Running debates over samples, runs and configs, and persisting one record per debate."""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from ..backends import AuthError, HashingEmbedder, generate_personas
from ..core import DebateConfig, InputSample, Persona, TaskInstruction, neutral_persona, validate_config
from ..orchestration import run_baseline, run_challenge, run_debate
from ..responders import DEFAULT_TEMPLATES, ChallengeKind, ChallengeScenario, TemplateStore
from .metrics import diversity_score, score

log = logging.getLogger(__name__)


@dataclass
class RunRecord:
    cell: str
    sample_id: str
    run_index: int
    config_fingerprint: str
    protocol: str
    final_answer: str
    references: list[str]
    answerable: bool
    score: Optional[float]
    decided: bool
    decision_turn: Optional[int]
    final_turn: Optional[int]
    fallback_used: bool
    turn_records: list[dict] = field(default_factory=list)
    agent_answers: list[str] = field(default_factory=list)
    diversity: Optional[float] = None
    personas: list[dict] = field(default_factory=list)
    transcript: list[dict] = field(default_factory=list)
    challenge: Optional[dict] = None
    duration_s: float = 0.0
    backend_calls: int = 0
    error: Optional[str] = None

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.cell, self.sample_id, self.run_index)

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        return cls(**data)


def read_records(path: Union[str, Path]) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        return []
    out = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if line.endswith("\n"):
                out.append(RunRecord.from_json(json.loads(line)))
    return out


class CountingBackend:
    """Per-debate call counter in front of a shared backend."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            self.calls += 1
        return self.inner.complete(request)


class OrderedWriter:
    """Appends records in job order even when jobs finish out of order.

    The file is always a prefix of the uninterrupted run's file, which is what makes
    resuming produce an identical result.
    """

    def __init__(self, path: Path, order: Sequence[tuple]):
        self.path = path
        self._order = list(order)
        self._next = 0
        self._pending: dict[tuple, RunRecord] = {}
        self._lock = threading.Lock()
        self._fh = path.open("a", encoding="utf-8")

    def submit(self, record: RunRecord) -> None:
        with self._lock:
            self._pending[record.key] = record
            while self._next < len(self._order) and self._order[self._next] in self._pending:
                self._fh.write(self._pending.pop(self._order[self._next]).to_line())
                self._fh.flush()
                self._next += 1

    def close(self) -> None:
        self._fh.close()


def _trim_partial_line(path: Path) -> None:
    if not path.exists():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        path.write_bytes(data[: data.rfind(b"\n") + 1])


def irrelevant_pool() -> list[str]:
    text = resources.files("debatekit").joinpath("data", "irrelevant_solutions.txt").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


@dataclass
class ChallengeSetup:
    """Where a challenge scenario gets its per-sample material."""

    kind: ChallengeKind
    wrong_solutions: dict[str, str] = field(default_factory=dict)
    extra_contexts: dict[str, str] = field(default_factory=dict)
    irrelevant: Sequence[str] = ()

    def __post_init__(self):
        self.kind = ChallengeKind(self.kind)

    def check(self, samples: Iterable[InputSample]) -> None:
        if self.kind is ChallengeKind.WRONG_SOLUTION:
            missing = [s.id for s in samples if not self.wrong_solutions.get(s.id)]
            if missing:
                raise ValueError(f"no wrong solution supplied for samples {missing[:5]}")

    def scenario_for(self, sample: InputSample, seed: int, run_index: int) -> ChallengeScenario:
        if self.kind is ChallengeKind.IRRELEVANT_SOLUTION:
            pool = list(self.irrelevant) or irrelevant_pool()
            rng = random.Random(repr((seed, sample.id, run_index, "irrelevant")))
            return ChallengeScenario(self.kind, injected_solution=rng.choice(pool))
        if self.kind is ChallengeKind.WRONG_SOLUTION:
            return ChallengeScenario(self.kind, injected_solution=self.wrong_solutions[sample.id])
        if self.kind is ChallengeKind.WITH_EXTRA_CONTEXT:
            return ChallengeScenario(self.kind, extra_context=self.extra_contexts.get(sample.id))
        return ChallengeScenario(self.kind)


@dataclass(frozen=True)
class Cell:
    """One configuration to run over every sample; one report cell."""

    label: str
    config: DebateConfig
    baseline: bool = False


def build_personas(config: DebateConfig, task: TaskInstruction, sample: InputSample, backend,
                   run_index: int) -> list[Persona]:
    n_generated = config.num_agents - config.num_neutral_agents
    generated = []
    if n_generated:
        generated = generate_personas(task, n_generated, backend, sample=sample, temperature=config.temperature,
                                      rng_key=(config.seed, sample.id, run_index))
    return generated + [neutral_persona(k) for k in range(1, config.num_neutral_agents + 1)]


class Runner:
    def __init__(
        self,
        task: TaskInstruction,
        backend,
        *,
        embedder=None,
        challenge: Optional[ChallengeSetup] = None,
        templates: TemplateStore = DEFAULT_TEMPLATES,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.task = task
        self.backend = backend
        self.embedder = embedder if embedder is not None else HashingEmbedder()
        self.challenge = challenge
        self.templates = templates
        self.clock = clock

    def run_one(self, cell: Cell, sample: InputSample, run_index: int) -> RunRecord:
        cfg = cell.config
        counting = CountingBackend(self.backend)
        record = RunRecord(
            cell=cell.label, sample_id=sample.id, run_index=run_index, config_fingerprint=cfg.fingerprint(),
            protocol="baseline" if cell.baseline else cfg.decision_protocol.value, final_answer="",
            references=list(sample.reference_answers), answerable=sample.answerable, score=0.0,
            decided=False, decision_turn=None, final_turn=None, fallback_used=False,
        )
        start = self.clock()
        try:
            if cell.baseline:
                personas = [Persona("Assistant", "")]
                outcome, transcript = run_baseline(cfg, self.task, sample, counting, personas[0],
                                                   run_index=run_index, templates=self.templates)
            else:
                personas = build_personas(cfg, self.task, sample, counting, run_index)
                outcome, transcript = run_debate(cfg, self.task, sample, counting, personas,
                                                 run_index=run_index, templates=self.templates)
            record.final_answer = outcome.final_answer
            record.score = score(outcome.final_answer, sample, self.task.answer_kind)
            record.decided = outcome.decided
            record.decision_turn = outcome.decision_turn
            record.final_turn = outcome.final_turn
            record.fallback_used = outcome.fallback_used
            record.turn_records = [r.to_json() for r in outcome.per_turn_records]
            record.personas = [{"name": p.name, "description": p.description} for p in personas]
            record.transcript = transcript.to_dicts()
            record.agent_answers = [transcript.last_solution_of(i) or "" for i in range(len(personas))]
            if len(record.agent_answers) >= 2:
                record.diversity = diversity_score(record.agent_answers, self.embedder)
            if self.challenge is not None:
                record.challenge = self._challenge(cfg, sample, run_index, outcome, transcript, personas,
                                                   counting, record.score)
        except AuthError:
            raise
        except Exception as exc:  # one bad sample must not sink the run
            log.warning("sample %s run %d failed: %s", sample.id, run_index, exc)
            record.error = f"{type(exc).__name__}: {exc}"
        record.duration_s = self.clock() - start
        record.backend_calls = counting.calls
        return record

    def _challenge(self, cfg, sample, run_index, outcome, transcript, personas, backend, before) -> dict:
        scenario = self.challenge.scenario_for(sample, cfg.seed, run_index)
        result = run_challenge(cfg, self.task, sample, outcome, transcript, scenario, backend, personas,
                               run_index=run_index, templates=self.templates)
        after = before
        if result.revised_answer is not None:
            after = score(result.revised_answer, sample, self.task.answer_kind)
            result.improved = after > before
        data = result.to_json()
        data.update(score_before=before, score_after=after, delta=after - before)
        return data

    def run(
        self,
        cells: Sequence[Cell],
        samples: Sequence[InputSample],
        output: Union[str, Path],
        *,
        resume: bool = True,
        max_workers: Optional[int] = None,
    ) -> list[RunRecord]:
        """Run every (cell, sample, run) job and return the full contents of ``output``."""
        labels = [c.label for c in cells]
        if len(set(labels)) != len(labels):
            raise ValueError("cell labels must be unique")
        for cell in cells:
            validate_config(cell.config)
        if self.challenge is not None:
            self.challenge.check(samples)
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        if not resume and output.exists():
            output.unlink()
        _trim_partial_line(output)

        fingerprints = {c.label: c.config.fingerprint() for c in cells}
        done = set()
        for rec in read_records(output):
            if fingerprints.get(rec.cell) != rec.config_fingerprint:
                raise ValueError(f"{output} holds results for a different configuration ({rec.cell})")
            done.add(rec.key)

        jobs = [
            (cell, sample, run)
            for cell in cells
            for sample in samples
            for run in range(cell.config.num_runs)
            if (cell.label, sample.id, run) not in done
        ]
        if jobs:
            workers = max_workers or min(max(c.config.concurrent_requests for c in cells), len(jobs))
            writer = OrderedWriter(output, [(c.label, s.id, r) for c, s, r in jobs])
            try:
                with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                    futures = [pool.submit(self._job, writer, *job) for job in jobs]
                    for f in futures:
                        f.result()
            finally:
                writer.close()
        return read_records(output)

    def _job(self, writer: OrderedWriter, cell: Cell, sample: InputSample, run: int) -> None:
        writer.submit(self.run_one(cell, sample, run))
