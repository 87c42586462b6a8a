"""Decision protocols: consensus thresholds, ballot tallies and the per-turn decision step."""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .core import AnswerKind, DebateConfig, Protocol, Transcript, canonical_answer


class ConsensusKind(str, enum.Enum):
    MAJORITY = "majority"
    SUPERMAJORITY = "supermajority"
    UNANIMITY = "unanimity"

    @classmethod
    def from_protocol(cls, protocol: Protocol) -> "ConsensusKind":
        return cls(Protocol(protocol).value)


MAJORITY_THRESHOLD = 0.5
SUPERMAJORITY_THRESHOLD = 0.66


class BallotError(ValueError):
    pass


class ParseFailure(ValueError):
    """A voting reply could not be turned into a ballot."""

    def __init__(self, raw_text: str, reason: str):
        super().__init__(f"{reason}: {raw_text[:80]!r}")
        self.raw_text = raw_text
        self.reason = reason


# --- ballots -----------------------------------------------------------------


@dataclass(frozen=True)
class Single:
    choice: int


@dataclass(frozen=True)
class Ranking:
    order: tuple[int, ...]


@dataclass(frozen=True)
class Approvals:
    choices: frozenset[int]


@dataclass(frozen=True)
class Allocation:
    points: tuple[tuple[int, int], ...]  # sorted (candidate, points) pairs

    @classmethod
    def of(cls, mapping: dict[int, int]) -> "Allocation":
        return cls(tuple(sorted(mapping.items())))

    def as_dict(self) -> dict[int, int]:
        return dict(self.points)


Payload = Union[Single, Ranking, Approvals, Allocation]


@dataclass(frozen=True)
class Ballot:
    voter: int
    payload: Payload

    def to_json(self):
        p = self.payload
        if isinstance(p, Single):
            body = p.choice
        elif isinstance(p, Ranking):
            body = list(p.order)
        elif isinstance(p, Approvals):
            body = sorted(p.choices)
        else:
            body = {str(k): v for k, v in p.points}
        return {"voter": self.voter, "ballot": body}


@dataclass(frozen=True)
class Candidate:
    proposer: int
    name: str
    answer: str


@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple[Candidate, ...]

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, i: int) -> Candidate:
        return self.candidates[i]

    def answers(self) -> list[str]:
        return [c.answer for c in self.candidates]


@dataclass(frozen=True)
class TallyResult:
    winner: Optional[int]
    scores: dict[int, float]
    tied: bool
    tied_set: frozenset[int] = frozenset()

    def to_json(self) -> dict:
        return {
            "winner": self.winner,
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "tied": self.tied,
            "tied_set": sorted(self.tied_set),
        }


def _num_candidates(candidates: Union[CandidateSet, int]) -> int:
    return candidates if isinstance(candidates, int) else len(candidates)


def _check_voters(ballots: Sequence[Ballot]) -> None:
    seen = set()
    for b in ballots:
        if b.voter in seen:
            raise BallotError(f"duplicate ballot from voter {b.voter}")
        seen.add(b.voter)


def _check_index(i: int, n: int) -> None:
    if not isinstance(i, int) or not 0 <= i < n:
        raise BallotError(f"candidate index {i!r} out of range for {n} candidates")


def _resolve(scores: dict[int, float], best) -> TallyResult:
    target = best(scores.values())
    top = frozenset(c for c, s in scores.items() if s == target)
    if len(top) == 1:
        return TallyResult(winner=next(iter(top)), scores=scores, tied=False)
    return TallyResult(winner=None, scores=scores, tied=True, tied_set=top)


def _expect(ballot: Ballot, kind: type) -> Payload:
    if not isinstance(ballot.payload, kind):
        raise BallotError(f"voter {ballot.voter} cast a {type(ballot.payload).__name__} ballot")
    return ballot.payload


def tally_simple(ballots: Sequence[Ballot], candidates: Union[CandidateSet, int]) -> TallyResult:
    n = _num_candidates(candidates)
    _check_voters(ballots)
    scores = {c: 0 for c in range(n)}
    for b in ballots:
        choice = _expect(b, Single).choice
        _check_index(choice, n)
        scores[choice] += 1
    return _resolve(scores, max)


def tally_ranked(ballots: Sequence[Ballot], candidates: Union[CandidateSet, int]) -> TallyResult:
    """Rank-sum: each ballot adds the 1-based position of every candidate; lowest total wins."""
    n = _num_candidates(candidates)
    _check_voters(ballots)
    scores = {c: 0 for c in range(n)}
    for b in ballots:
        order = _expect(b, Ranking).order
        if sorted(order) != list(range(n)):
            raise BallotError(f"voter {b.voter} ranking {order} is not a full ranking of {n}")
        for position, c in enumerate(order, start=1):
            scores[c] += position
    return _resolve(scores, min)


def tally_approval(ballots: Sequence[Ballot], candidates: Union[CandidateSet, int]) -> TallyResult:
    n = _num_candidates(candidates)
    _check_voters(ballots)
    scores = {c: 0 for c in range(n)}
    for b in ballots:
        choices = _expect(b, Approvals).choices
        if not choices:
            raise BallotError(f"voter {b.voter} approved nothing")
        for c in choices:
            _check_index(c, n)
            scores[c] += 1
    return _resolve(scores, max)


def tally_cumulative(
    ballots: Sequence[Ballot], candidates: Union[CandidateSet, int], budget: int
) -> TallyResult:
    n = _num_candidates(candidates)
    _check_voters(ballots)
    scores = {c: 0 for c in range(n)}
    for b in ballots:
        points = _expect(b, Allocation).as_dict()
        if any(p < 0 for p in points.values()):
            raise BallotError(f"voter {b.voter} allocated negative points")
        if sum(points.values()) > budget:
            raise BallotError(f"voter {b.voter} allocated {sum(points.values())} > {budget}")
        for c, p in points.items():
            _check_index(c, n)
            scores[c] += p
    return _resolve(scores, max)


def tally(
    protocol: Protocol,
    ballots: Sequence[Ballot],
    candidates: Union[CandidateSet, int],
    budget: int = 10,
) -> TallyResult:
    protocol = Protocol(protocol)
    if protocol is Protocol.SIMPLE_VOTING:
        return tally_simple(ballots, candidates)
    if protocol is Protocol.RANKED_VOTING:
        return tally_ranked(ballots, candidates)
    if protocol is Protocol.APPROVAL_VOTING:
        return tally_approval(ballots, candidates)
    if protocol is Protocol.CUMULATIVE_VOTING:
        return tally_cumulative(ballots, candidates, budget)
    raise ValueError(f"{protocol.value} is not a ballot protocol")


# --- consensus ----------------------------------------------------------------


def evaluate_consensus(
    agreements: Sequence[Optional[bool]], kind: Union[ConsensusKind, Protocol, str], num_agents: int
) -> bool:
    """Whether enough agents agree. ``None`` entries (no usable signal) count as disagree."""
    if num_agents < 1 or not agreements:
        raise ValueError("consensus needs at least one agent")
    if len(agreements) != num_agents:
        raise ValueError(f"expected {num_agents} agreement slots, got {len(agreements)}")
    kind = ConsensusKind(kind.value if isinstance(kind, enum.Enum) else kind)
    agree = sum(1 for a in agreements if a is True)
    if kind is ConsensusKind.MAJORITY:
        return agree / num_agents > MAJORITY_THRESHOLD
    if kind is ConsensusKind.SUPERMAJORITY:
        return agree / num_agents > SUPERMAJORITY_THRESHOLD
    return agree == num_agents


# --- solution counting -----------------------------------------------------------


def solution_counting(final_answers: Sequence[str], answer_kind=AnswerKind.FREE_TEXT) -> str:
    """Most frequent canonical answer; ties go to the earliest agent's answer."""
    if not final_answers:
        raise ValueError("solution counting needs at least one answer")
    canon = [canonical_answer(a, answer_kind) for a in final_answers]
    counts = Counter(canon)
    best = max(counts.values())
    for i, c in enumerate(canon):
        if counts[c] == best:
            return final_answers[i]
    raise AssertionError("unreachable")


def counting_winner(final_answers: Sequence[str], answer_kind=AnswerKind.FREE_TEXT) -> int:
    """Index of the agent whose answer :func:`solution_counting` selects."""
    chosen = solution_counting(final_answers, answer_kind)
    return list(final_answers).index(chosen)


# --- parsing voting replies ---------------------------------------------------------

_BRACES = re.compile(r"\{[^{}]*\}", re.DOTALL)
_PAIR = re.compile(r"['\"]?(-?\d+)['\"]?\s*:\s*(-?\d+(?:\.\d+)?)")


def _ints(text: str) -> list[int]:
    return [int(m) for m in re.findall(r"-?\d+", text)]


def _to_zero_based(indices: list[int], n: int, raw: str) -> list[int]:
    """Map indices to 0-based. The prompts number solutions from 1, the ranked example from 0."""
    if 0 in indices:
        if all(0 <= i < n for i in indices):
            return indices
    elif all(1 <= i <= n for i in indices):
        return [i - 1 for i in indices]
    raise ParseFailure(raw, f"indices {indices} out of range for {n} solutions")


def parse_ballot(raw_text: str, protocol: Protocol, num_candidates: int, budget: int = 10) -> Payload:
    protocol = Protocol(protocol)
    text = raw_text.strip()
    n = num_candidates
    if protocol is Protocol.SIMPLE_VOTING:
        m = re.search(r"\d+", text)
        if not m:
            raise ParseFailure(raw_text, "no number in vote")
        choice = int(m.group())
        if not 1 <= choice <= n:
            raise ParseFailure(raw_text, f"vote {choice} out of range 1..{n}")
        return Single(choice - 1)

    if protocol is Protocol.APPROVAL_VOTING:
        nums = _ints(text)
        if not nums:
            raise ParseFailure(raw_text, "no approvals")
        if any(not 1 <= i <= n for i in nums):
            raise ParseFailure(raw_text, f"approval out of range 1..{n}")
        return Approvals(frozenset(i - 1 for i in nums))

    if protocol is Protocol.RANKED_VOTING:
        nums = _ints(text)
        if len(nums) != n or len(set(nums)) != n:
            raise ParseFailure(raw_text, f"expected a full ranking of {n} solutions")
        return Ranking(tuple(_to_zero_based(nums, n, raw_text)))

    if protocol is Protocol.CUMULATIVE_VOTING:
        m = _BRACES.search(text)
        if not m:
            raise ParseFailure(raw_text, "no JSON dictionary")
        block = m.group()
        try:
            loaded = json.loads(block)
            pairs = [(int(k), v) for k, v in loaded.items()]
        except (ValueError, TypeError, AttributeError):
            pairs = [(int(k), float(v)) for k, v in _PAIR.findall(block)]
        if not pairs:
            raise ParseFailure(raw_text, "empty allocation")
        points = {}
        for k, v in pairs:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v != int(v):
                raise ParseFailure(raw_text, f"non-integer points {v!r}")
            if v < 0:
                raise ParseFailure(raw_text, "negative points")
            points[k] = int(v)
        keys = _to_zero_based(list(points), n, raw_text)
        allocation = dict(zip(keys, points.values()))
        if sum(allocation.values()) > budget:
            raise ParseFailure(raw_text, f"allocation exceeds budget {budget}")
        return Allocation.of(allocation)

    raise ValueError(f"{protocol.value} takes no ballots")


# --- per-turn decision ------------------------------------------------------------


@dataclass
class TurnRecord:
    turn: int
    kind: str  # consensus | vote | counting | single_agent | fallback
    agreements: Optional[list[Optional[bool]]] = None
    ballots: list[dict] = field(default_factory=list)
    failures: list[int] = field(default_factory=list)
    tally: Optional[TallyResult] = None
    verdict: Optional[bool] = None
    error: Optional[str] = None

    def to_json(self) -> dict:
        out = {"turn": self.turn, "kind": self.kind}
        if self.agreements is not None:
            out["agreements"] = self.agreements
        if self.ballots:
            out["ballots"] = self.ballots
        if self.failures:
            out["failures"] = self.failures
        if self.tally is not None:
            out["tally"] = self.tally.to_json()
        if self.verdict is not None:
            out["verdict"] = self.verdict
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class DecisionStep:
    decided: bool  # the protocol selected an answer
    finished: bool  # the debate ends here (decided, or out of turns)
    final_answer: Optional[str]
    fallback_used: bool
    record: Optional[TurnRecord]


@dataclass
class DecisionOutcome:
    final_answer: str
    decided: bool
    decision_turn: Optional[int]
    protocol: Protocol
    per_turn_records: list[TurnRecord]
    fallback_used: bool
    final_turn: int

    def to_json(self) -> dict:
        return {
            "final_answer": self.final_answer,
            "decided": self.decided,
            "decision_turn": self.decision_turn,
            "final_turn": self.final_turn,
            "protocol": self.protocol.value,
            "fallback_used": self.fallback_used,
            "records": [r.to_json() for r in self.per_turn_records],
        }


def fallback_answer(transcript: Transcript) -> str:
    answer = transcript.last_solution_of(0)
    return answer if answer is not None else ""


def decide_step(
    transcript: Transcript,
    candidates: CandidateSet,
    signals: Sequence,
    config: DebateConfig,
    turn: int,
    *,
    final: Optional[bool] = None,
    answer_kind: AnswerKind = AnswerKind.FREE_TEXT,
) -> DecisionStep:
    """Apply the configured protocol to one decision point.

    Consensus: ``candidates`` holds the current proposal and ``signals`` one agreement
    slot per agent. Ballot protocols: ``signals`` holds a :class:`Ballot` or a
    :class:`ParseFailure` per voter. Solution counting ignores ``signals``.
    ``final`` marks the last chance before the turn limit; it defaults to
    ``turn == max_turns``.
    """
    protocol = config.decision_protocol
    if final is None:
        final = turn >= config.max_turns

    def undecided(record: Optional[TurnRecord]) -> DecisionStep:
        if final:
            return DecisionStep(False, True, fallback_answer(transcript), True, record)
        return DecisionStep(False, False, None, False, record)

    if protocol.is_consensus:
        agreements = list(signals)
        verdict = evaluate_consensus(agreements, protocol, config.num_agents)
        record = TurnRecord(turn, "consensus", agreements=agreements, verdict=verdict)
        if verdict:
            return DecisionStep(True, True, candidates[0].answer, False, record)
        return undecided(record)

    if turn < config.voting_starts_after_turn:
        return undecided(None)

    if len(candidates) == 1:
        record = TurnRecord(turn, "single_agent")
        return DecisionStep(True, True, candidates[0].answer, False, record)

    if protocol is Protocol.SOLUTION_COUNTING:
        record = TurnRecord(turn, "counting")
        answer = solution_counting(candidates.answers(), answer_kind)
        return DecisionStep(True, True, answer, False, record)

    ballots = [s for s in signals if isinstance(s, Ballot)]
    failures = [i for i, s in enumerate(signals) if not isinstance(s, Ballot)]
    record = TurnRecord(turn, "vote", ballots=[b.to_json() for b in ballots], failures=failures)
    if not ballots:
        record.tally = TallyResult(None, {c: 0 for c in range(len(candidates))}, True,
                                   frozenset(range(len(candidates))))
        return undecided(record)
    try:
        result = tally(protocol, ballots, candidates, config.cumulative_point_budget)
    except BallotError as exc:
        record.error = str(exc)
        return undecided(record)
    record.tally = result
    if result.tied:
        return undecided(record)
    return DecisionStep(True, True, candidates[result.winner].answer, False, record)
