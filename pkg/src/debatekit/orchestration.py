"""The debate state machine: who speaks when, what they see, and when the debate ends."""

from __future__ import annotations

import enum
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backends import CompletionRequest, RequestTag
from .core import (
    AgentId,
    DebateConfig,
    InputSample,
    Message,
    Paradigm,
    Persona,
    Protocol,
    TaskInstruction,
    Transcript,
    make_agents,
    validate_config,
)
from .decision import (
    Ballot,
    Candidate,
    CandidateSet,
    DecisionOutcome,
    DecisionStep,
    ParseFailure,
    TurnRecord,
    decide_step,
    parse_ballot,
)
from .responders import (
    DEFAULT_TEMPLATES,
    ChallengeScenario,
    TemplateStore,
    build_challenge_prompts,
    build_discussion_prompt,
    build_extraction_prompt,
    build_voting_prompt,
    extract_agreement,
)

log = logging.getLogger(__name__)

RETRY_NOTE = "Your previous answer could not be used. Answer again using exactly the requested format."


def visible_context(
    paradigm: Paradigm,
    viewer: AgentId,
    transcript: Transcript,
    window: int,
    turn: Optional[int] = None,
) -> list[Message]:
    """Messages ``viewer`` may see when speaking at ``turn`` (default: the transcript's turn)."""
    paradigm = Paradigm(paradigm)
    msgs = transcript.messages
    if turn is None:
        turn = transcript.current_turn
    if paradigm is Paradigm.COLLECTIVE_REFINEMENT:
        return [m for m in msgs if m.turn == turn - 1]
    if paradigm is Paradigm.RELAY:
        return msgs[-1:]
    windowed = [m for m in msgs if turn - window <= m.turn <= turn]
    if paradigm is Paradigm.MEMORY or viewer.is_moderator:
        return windowed
    if paradigm is Paradigm.REPORT:
        return [m for m in windowed if m.author.is_moderator or m.author.index == viewer.index]
    # debate: the moderator message that opened this round plus the panel exchange so far
    opener = [m for m in msgs if m.author.is_moderator and m.turn < turn][-1:]
    exchange = [m for m in msgs if m.turn == turn and not m.author.is_moderator]
    return opener + exchange


def speaking_order(
    paradigm: Paradigm, agents: Sequence[AgentId], turn: int, debate_rounds: int = 2
) -> list[AgentId]:
    paradigm = Paradigm(paradigm)
    if paradigm is Paradigm.DEBATE:
        panel = [a for a in agents if not a.is_moderator]
        moderator = [a for a in agents if a.is_moderator]
        return panel * debate_rounds + moderator
    return list(agents)


@dataclass
class ChallengeResult:
    scenario: str
    shown_answer: str
    challenged: list[bool]
    unparsed: list[int] = field(default_factory=list)
    revisions: list[Optional[str]] = field(default_factory=list)
    revised_answer: Optional[str] = None
    improved: Optional[bool] = None

    @property
    def any_challenged(self) -> bool:
        return any(self.challenged)

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "shown_answer": self.shown_answer,
            "challenged": self.challenged,
            "unparsed": self.unparsed,
            "revised_answer": self.revised_answer,
            "improved": self.improved,
        }


class Debate:
    """One debate over one sample. Not thread-safe; run each debate on one thread."""

    def __init__(
        self,
        config: DebateConfig,
        task: TaskInstruction,
        sample: InputSample,
        backend,
        personas: Sequence[Persona],
        *,
        run_index: int = 0,
        templates: TemplateStore = DEFAULT_TEMPLATES,
        parallel: bool = True,
    ):
        self.config = validate_config(config)
        if len(personas) != config.num_agents:
            raise ValueError(f"expected {config.num_agents} personas, got {len(personas)}")
        self.task = task
        self.sample = sample
        self.backend = backend
        self.templates = templates
        self.parallel = parallel
        self.agents = make_agents(personas, config.discussion_paradigm)
        self.transcript = Transcript()
        self.rng_key = (config.seed, sample.id, run_index)
        self.rng = random.Random(repr(self.rng_key))
        self.records: list[TurnRecord] = []
        self.outcome: Optional[DecisionOutcome] = None
        self._proposal: Optional[Message] = None
        self._slate: dict[int, bool] = {}

    # -- backend plumbing --

    def _ask(self, system: str, user: str, tag: RequestTag, agent: int, turn: Optional[int],
             extra: Sequence[str] = (), attempt: int = 0) -> str:
        deterministic = tag in (RequestTag.EXTRACTION, RequestTag.VOTE)
        request = CompletionRequest(
            system=system,
            user_messages=(user, *extra),
            temperature=0.0 if deterministic else self.config.temperature,
            max_output_tokens=self.config.max_output_tokens,
            tag=tag,
            turn=turn,
            agent=agent,
            attempt=attempt,
            rng_key=self.rng_key,
        )
        return self.backend.complete(request)

    def _map(self, fn, items):
        items = list(items)
        if self.parallel and len(items) > 1:
            with ThreadPoolExecutor(max_workers=len(items)) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    def _extract(self, agent: AgentId, text: str, turn: int) -> str:
        if not text.strip():
            return ""
        prompt = build_extraction_prompt(self.task, self.sample, text, agent.persona, self.templates)
        return self._ask(prompt.system, prompt.user, RequestTag.EXTRACTION, agent.index, turn).strip()

    # -- discussion --

    def _visible(self, agent: AgentId, turn: int) -> list[Message]:
        if self.config.all_agents_draft_first and turn == 1:
            return []
        return visible_context(
            self.config.discussion_paradigm, agent, self.transcript,
            self.config.visible_turns_in_memory, turn,
        )

    def _speak(self, agent: AgentId, turn: int, visible: list[Message], hidden: list[str]) -> Message:
        wants_agreement = bool(visible) and self.config.discussion_paradigm is not Paradigm.COLLECTIVE_REFINEMENT
        prompt = build_discussion_prompt(
            self.config.response_generator,
            agent,
            self.task,
            self.sample,
            visible,
            turn,
            request_agreement=wants_agreement,
            use_chain_of_thought=self.config.use_chain_of_thought,
            hidden_solutions=hidden,
            templates=self.templates,
        )
        text = self._ask(prompt.system, prompt.user, RequestTag.DISCUSSION, agent.index, turn)
        agreement = extract_agreement(text) if wants_agreement else None
        solution = self._extract(agent, text, turn)
        return Message(turn=turn, author=agent, text=text, agreement=agreement, extracted_solution=solution)

    def _hidden(self) -> list[str]:
        return [m.extracted_solution for m in self.transcript if m.extracted_solution]

    def _batch_turn(self, turn: int) -> bool:
        return self.config.discussion_paradigm is Paradigm.COLLECTIVE_REFINEMENT or (
            self.config.all_agents_draft_first and turn == 1
        )

    # -- consensus bookkeeping --

    def _track(self, message: Message) -> None:
        if message.agreement is True and self._proposal is not None:
            self._slate[message.author.index] = True
        else:
            self._proposal = message
            self._slate = {message.author.index: True}

    def _consensus_check(self, turn: int, final: bool) -> DecisionStep:
        proposal = self._proposal
        candidates = CandidateSet(
            (Candidate(proposal.author.index, proposal.author.name, proposal.extracted_solution or ""),)
        )
        agreements = [self._slate.get(i) for i in range(self.config.num_agents)]
        return decide_step(self.transcript, candidates, agreements, self.config, turn,
                           final=final, answer_kind=self.task.answer_kind)

    # -- voting --

    def candidates(self) -> CandidateSet:
        return CandidateSet(
            tuple(
                Candidate(a.index, a.name, self.transcript.last_solution_of(a.index) or "")
                for a in self.agents
            )
        )

    def _ballot(self, agent: AgentId, candidates: CandidateSet, turn: int):
        protocol = self.config.decision_protocol
        budget = self.config.cumulative_point_budget
        prompt = build_voting_prompt(protocol, self.task, self.sample, candidates, agent.persona,
                                     budget, self.templates)
        failure = None
        for attempt in range(2):
            extra = (RETRY_NOTE,) if attempt else ()
            raw = self._ask(prompt.system, prompt.user, RequestTag.VOTE, agent.index, turn, extra, attempt)
            try:
                return Ballot(agent.index, parse_ballot(raw, protocol, len(candidates), budget))
            except ParseFailure as exc:
                failure = exc
        return failure

    def _vote(self, turn: int, final: bool) -> DecisionStep:
        candidates = self.candidates()
        signals: list = []
        protocol = self.config.decision_protocol
        if protocol.is_voting and len(candidates) > 1:
            signals = self._map(lambda a: self._ballot(a, candidates, turn), self.agents)
        return decide_step(self.transcript, candidates, signals, self.config, turn,
                           final=final, answer_kind=self.task.answer_kind)

    # -- main loop --

    def _finish(self, step: DecisionStep, turn: int) -> DecisionOutcome:
        self.outcome = DecisionOutcome(
            final_answer=step.final_answer or "",
            decided=step.decided,
            decision_turn=turn if step.decided else None,
            protocol=self.config.decision_protocol,
            per_turn_records=self.records,
            fallback_used=step.fallback_used,
            final_turn=turn,
        )
        return self.outcome

    def _after_message(self, message: Message, turn: int, final: bool) -> Optional[DecisionOutcome]:
        self.transcript.append(message)
        if not self.config.decision_protocol.is_consensus:
            return None
        self._track(message)
        step = self._consensus_check(turn, final)
        self.records.append(step.record)
        return self._finish(step, turn) if step.finished else None

    def run(self) -> tuple[DecisionOutcome, Transcript]:
        if self.outcome is not None:
            raise RuntimeError("debate already ran")
        cfg = self.config
        for turn in range(1, cfg.max_turns + 1):
            last_turn = turn == cfg.max_turns
            order = speaking_order(cfg.discussion_paradigm, self.agents, turn, cfg.debate_rounds)
            if self._batch_turn(turn):
                order = list(self.agents)
                hidden = self._hidden()
                views = [self._visible(a, turn) for a in order]
                messages = self._map(lambda av: self._speak(av[0], turn, av[1], hidden), zip(order, views))
                for i, message in enumerate(messages):
                    done = self._after_message(message, turn, last_turn and i == len(messages) - 1)
                    if done:
                        return done, self.transcript
            else:
                for i, agent in enumerate(order):
                    message = self._speak(agent, turn, self._visible(agent, turn), self._hidden())
                    done = self._after_message(message, turn, last_turn and i == len(order) - 1)
                    if done:
                        return done, self.transcript
            if cfg.decision_protocol.votes_on_schedule and turn >= cfg.voting_starts_after_turn:
                step = self._vote(turn, final=last_turn)
                if step.record is not None:
                    self.records.append(step.record)
                if step.finished:
                    return self._finish(step, turn), self.transcript
        raise AssertionError("turn loop ended without an outcome")


def run_debate(
    config: DebateConfig,
    task: TaskInstruction,
    sample: InputSample,
    backend,
    personas: Sequence[Persona],
    *,
    run_index: int = 0,
    templates: TemplateStore = DEFAULT_TEMPLATES,
    parallel: bool = True,
) -> tuple[DecisionOutcome, Transcript]:
    debate = Debate(config, task, sample, backend, personas, run_index=run_index,
                    templates=templates, parallel=parallel)
    return debate.run()


def run_baseline(
    config: DebateConfig,
    task: TaskInstruction,
    sample: InputSample,
    backend,
    persona: Optional[Persona] = None,
    *,
    run_index: int = 0,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> tuple[DecisionOutcome, Transcript]:
    """Single agent, single reply: the no-debate reference point."""
    persona = persona or Persona("Assistant", "")
    single = config.replace(num_agents=1, num_neutral_agents=0, discussion_paradigm=Paradigm.MEMORY,
                            all_agents_draft_first=False)
    debate = Debate(single, task, sample, backend, [persona], run_index=run_index, templates=templates)
    agent = debate.agents[0]
    message = debate._speak(agent, 1, [], [])
    debate.transcript.append(message)
    outcome = DecisionOutcome(
        final_answer=message.extracted_solution or "",
        decided=True,
        decision_turn=1,
        protocol=config.decision_protocol,
        per_turn_records=[TurnRecord(1, "single_agent")],
        fallback_used=False,
        final_turn=1,
    )
    return outcome, debate.transcript


def run_challenge(
    config: DebateConfig,
    task: TaskInstruction,
    sample: InputSample,
    final_outcome: DecisionOutcome,
    transcript: Transcript,
    scenario: ChallengeScenario,
    backend,
    personas: Sequence[Persona],
    *,
    run_index: int = 0,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> ChallengeResult:
    """Ask every agent to accept or reject the final answer; collect replacements."""
    rng_key = (config.seed, sample.id, run_index, "challenge")
    shown = scenario.injected_solution if scenario.kind.injects else final_outcome.final_answer
    result = ChallengeResult(scenario=scenario.kind.value, shown_answer=shown, challenged=[])

    def ask(system, user, agent, extra=(), attempt=0):
        return backend.complete(CompletionRequest(
            system=system, user_messages=(user, *extra), temperature=config.temperature,
            max_output_tokens=config.max_output_tokens, tag=RequestTag.CHALLENGE,
            agent=agent, attempt=attempt, rng_key=rng_key,
        ))

    prompts = []
    for i, persona in enumerate(personas):
        challenge, revision = build_challenge_prompts(
            scenario, task, sample, final_outcome.final_answer or shown, transcript, persona, templates
        )
        prompts.append(revision)
        verdict = extract_agreement(ask(challenge.system, challenge.user, i))
        if verdict is None:
            verdict = extract_agreement(ask(challenge.system, challenge.user, i, (RETRY_NOTE,), 1))
        if verdict is None:
            result.unparsed.append(i)
            verdict = True
        result.challenged.append(not verdict)

    for i, persona in enumerate(personas):
        if not result.challenged[i]:
            result.revisions.append(None)
            continue
        reply = ask(prompts[i].system, prompts[i].user, i)
        revised = reply.strip()
        if revised:
            extraction = build_extraction_prompt(task, sample, reply, persona, templates)
            revised = backend.complete(CompletionRequest(
                system=extraction.system, user_messages=(extraction.user,), temperature=0.0,
                max_output_tokens=config.max_output_tokens, tag=RequestTag.EXTRACTION,
                agent=i, rng_key=rng_key,
            )).strip()
        result.revisions.append(revised)
    result.revised_answer = next((r for r in result.revisions if r is not None), None)
    return result


class SweepKind(str, enum.Enum):
    ROUNDS = "rounds"
    AGENTS = "agents"


def schedule_scaling_sweep(kind: SweepKind, base: DebateConfig, points: int = 10) -> list[DebateConfig]:
    """Configs for the rounds-before-vote sweep (3 agents) or the agent-count sweep (3 rounds)."""
    kind = SweepKind(kind)
    if base.decision_protocol is not Protocol.SIMPLE_VOTING:
        raise ValueError("scaling sweeps use simple voting")
    slack = max(1, base.max_turns - base.voting_starts_after_turn)
    configs = []
    for k in range(1, points + 1):
        if kind is SweepKind.ROUNDS:
            cfg = base.replace(num_agents=3, num_neutral_agents=min(base.num_neutral_agents, 3),
                               voting_starts_after_turn=k, max_turns=max(base.max_turns, k + slack))
        else:
            cfg = base.replace(num_agents=k, num_neutral_agents=min(base.num_neutral_agents, k),
                               voting_starts_after_turn=3, max_turns=max(base.max_turns, 3 + slack))
        configs.append(validate_config(cfg))
    return configs

