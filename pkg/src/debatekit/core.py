"""Domain types shared by every part of a debate run."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import re
import string
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Optional

UNKNOWN_TOKEN = "[UNKNOWN]"


class AnswerKind(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    BOOLEAN = "boolean"
    EXTRACTIVE_OR_UNKNOWN = "extractive_or_unknown"
    FREE_TEXT = "free_text"


class Protocol(str, enum.Enum):
    MAJORITY = "majority"
    SUPERMAJORITY = "supermajority"
    UNANIMITY = "unanimity"
    SIMPLE_VOTING = "simple_voting"
    RANKED_VOTING = "ranked_voting"
    APPROVAL_VOTING = "approval_voting"
    CUMULATIVE_VOTING = "cumulative_voting"
    SOLUTION_COUNTING = "solution_counting"

    @property
    def is_consensus(self) -> bool:
        return self in CONSENSUS_PROTOCOLS

    @property
    def is_voting(self) -> bool:
        return self in BALLOT_PROTOCOLS

    @property
    def votes_on_schedule(self) -> bool:
        """True for protocols that decide only from ``voting_starts_after_turn`` on."""
        return not self.is_consensus


CONSENSUS_PROTOCOLS = frozenset({Protocol.MAJORITY, Protocol.SUPERMAJORITY, Protocol.UNANIMITY})
BALLOT_PROTOCOLS = frozenset(
    {
        Protocol.SIMPLE_VOTING,
        Protocol.RANKED_VOTING,
        Protocol.APPROVAL_VOTING,
        Protocol.CUMULATIVE_VOTING,
    }
)


class Paradigm(str, enum.Enum):
    MEMORY = "memory"
    RELAY = "relay"
    REPORT = "report"
    DEBATE = "debate"
    COLLECTIVE_REFINEMENT = "collective_refinement"

    @property
    def has_moderator(self) -> bool:
        return self in (Paradigm.REPORT, Paradigm.DEBATE)


class GeneratorKind(str, enum.Enum):
    FREETEXT = "freetext"
    SIMPLE = "simple"
    CRITICAL = "critical"
    REASONING = "reasoning"


class ConfigError(ValueError):
    """Raised when a DebateConfig violates one of its invariants."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class TaskInstruction:
    text: str
    answer_kind: AnswerKind = AnswerKind.FREE_TEXT

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("task instruction text must be non-empty")
        object.__setattr__(self, "answer_kind", AnswerKind(self.answer_kind))


@dataclass(frozen=True)
class InputSample:
    id: str
    question: str
    context: Optional[str] = None
    reference_answers: tuple[str, ...] = ()
    choices: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "reference_answers", tuple(self.reference_answers))
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))

    @property
    def answerable(self) -> bool:
        return bool(self.reference_answers)

    def canonical_references(self) -> tuple[str, ...]:
        """References as compared against predictions; unanswerable -> ``[UNKNOWN]``."""
        return self.reference_answers or (UNKNOWN_TOKEN,)


@dataclass(frozen=True)
class Persona:
    name: str
    description: str = ""


@dataclass(frozen=True)
class AgentId:
    index: int
    persona: Persona
    is_moderator: bool = False

    @property
    def name(self) -> str:
        return self.persona.name


@dataclass(frozen=True)
class Message:
    turn: int
    author: AgentId
    text: str
    agreement: Optional[bool] = None
    extracted_solution: Optional[str] = None

    def __post_init__(self):
        if self.turn < 1:
            raise ValueError("message turn must be >= 1")


@dataclass
class Transcript:
    """Append-only record of a debate. Messages are kept in speaking order."""

    messages: list[Message] = field(default_factory=list)

    @property
    def current_turn(self) -> int:
        return self.messages[-1].turn if self.messages else 1

    def append(self, message: Message) -> None:
        if self.messages and message.turn < self.messages[-1].turn:
            raise ValueError("messages must be appended in turn order")
        self.messages.append(message)

    def __len__(self) -> int:
        return len(self.messages)

    def __iter__(self):
        return iter(self.messages)

    def turn_messages(self, turn: int) -> list[Message]:
        return [m for m in self.messages if m.turn == turn]

    def last_solution_of(self, agent_index: int) -> Optional[str]:
        for m in reversed(self.messages):
            if m.author.index == agent_index and m.extracted_solution is not None:
                return m.extracted_solution
        return None

    def to_dicts(self) -> list[dict]:
        return [
            {
                "turn": m.turn,
                "agent": m.author.index,
                "persona": m.author.persona.name,
                "text": m.text,
                "agreement": m.agreement,
                "solution": m.extracted_solution,
            }
            for m in self.messages
        ]


@dataclass(frozen=True)
class DebateConfig:
    decision_protocol: Protocol = Protocol.SIMPLE_VOTING
    discussion_paradigm: Paradigm = Paradigm.MEMORY
    response_generator: GeneratorKind = GeneratorKind.SIMPLE
    num_agents: int = 3
    num_neutral_agents: int = 0
    max_turns: int = 10
    voting_starts_after_turn: int = 3
    visible_turns_in_memory: int = 2
    debate_rounds: int = 2
    all_agents_draft_first: bool = False
    cumulative_point_budget: int = 10
    use_chain_of_thought: bool = True
    concurrent_requests: int = 100
    seed: int = 0
    num_runs: int = 3
    temperature: float = 0.7
    max_output_tokens: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "decision_protocol", Protocol(self.decision_protocol))
        object.__setattr__(self, "discussion_paradigm", Paradigm(self.discussion_paradigm))
        object.__setattr__(self, "response_generator", GeneratorKind(self.response_generator))

    def replace(self, **changes) -> "DebateConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, enum.Enum) else value
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_POSITIVE_FIELDS = (
    "num_agents",
    "max_turns",
    "voting_starts_after_turn",
    "visible_turns_in_memory",
    "debate_rounds",
    "cumulative_point_budget",
    "concurrent_requests",
    "num_runs",
    "max_output_tokens",
)


def validate_config(config: DebateConfig) -> DebateConfig:
    for name in _POSITIVE_FIELDS:
        value = getattr(config, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigError(name, f"must be a positive integer, got {value!r}")
    if not 0 <= config.num_neutral_agents <= config.num_agents:
        raise ConfigError("num_neutral_agents", "must be between 0 and num_agents")
    if not 0 <= config.seed < 2**64:
        raise ConfigError("seed", "must fit in an unsigned 64-bit integer")
    if config.temperature < 0:
        raise ConfigError("temperature", "must be non-negative")
    if config.voting_starts_after_turn >= config.max_turns:
        raise ConfigError(
            "voting_starts_after_turn",
            f"must be smaller than max_turns ({config.voting_starts_after_turn} >= {config.max_turns})",
        )
    paradigm = config.discussion_paradigm
    if paradigm is Paradigm.COLLECTIVE_REFINEMENT and config.decision_protocol.is_consensus:
        raise ConfigError("discussion_paradigm", "CI requires a voting protocol")
    if paradigm.has_moderator and config.num_agents < 3:
        raise ConfigError(
            "num_agents", f"the {paradigm.value} paradigm needs a moderator and two panelists"
        )
    return config


# --- answer normalization ---------------------------------------------------

_PUNCT = set(string.punctuation)
_UNKNOWN_RE = re.compile(r"^\W*\[\s*unknown\s*\]\W*$", re.IGNORECASE)
_LETTERS = "abcdefghij"
_CHOICE_PATTERNS = (
    re.compile(r"^\s*[\(\[]?([A-Ja-j])\s*[\)\]\.:](?:\s|$)"),
    re.compile(r"\banswer(?:\s+is)?\s*:\s*[\(\[]?([A-Ja-j])\b[\)\]]?", re.IGNORECASE),
    re.compile(r"\banswer\s+is\s*[\(\[]([A-Ja-j])[\)\]]", re.IGNORECASE),
)
_PAREN_LETTER = re.compile(r"(?:^|[\s\(\[])[\(\[]?([A-Ja-j])[\)\]](?=\s|$|[.,;:])")


def _is_punct(ch: str) -> bool:
    return ch in _PUNCT or unicodedata.category(ch).startswith("P")


def normalize_text(text: str) -> str:
    """Lowercase, delete punctuation, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if not _is_punct(ch))
    return " ".join(text.split())


def _choice_letter(text: str) -> Optional[str]:
    for pattern in _CHOICE_PATTERNS:
        m = pattern.search(text)
        if m:
            return m.group(1).lower()
    letters = {m.group(1).lower() for m in _PAREN_LETTER.finditer(text)}
    if len(letters) == 1:
        return letters.pop()
    return None


def canonical_answer(text: str, answer_kind: AnswerKind | str = AnswerKind.FREE_TEXT) -> str:
    if _UNKNOWN_RE.match(text):
        return UNKNOWN_TOKEN
    kind = AnswerKind(answer_kind)
    norm = normalize_text(text)
    if kind is AnswerKind.MULTIPLE_CHOICE:
        if len(norm) == 1 and norm in _LETTERS:
            return norm
        # letter patterns need punctuation, which ``norm`` no longer has; keeps this idempotent
        letter = _choice_letter(text)
        if letter is not None:
            return letter
    elif kind is AnswerKind.BOOLEAN:
        first = norm.split(" ", 1)[0]
        if first in ("yes", "true"):
            return "yes"
        if first in ("no", "false"):
            return "no"
    return norm


def render_input(sample: InputSample) -> str:
    """The sample as shown to agents: question, optional context, lettered choices."""
    parts = [sample.question]
    if sample.context:
        parts.append(f"Context: {sample.context}")
    if sample.choices:
        parts.extend(f"{_LETTERS[i].upper()}) {c}" for i, c in enumerate(sample.choices))
    return "\n".join(parts)


def make_agents(personas: Iterable[Persona], paradigm: Paradigm) -> list[AgentId]:
    personas = list(personas)
    names = [p.name for p in personas]
    if len(set(names)) != len(names):
        raise ValueError(f"persona names must be distinct: {names}")
    return [
        AgentId(index=i, persona=p, is_moderator=(i == 0 and paradigm.has_moderator))
        for i, p in enumerate(personas)
    ]


def neutral_persona(k: int) -> Persona:
    return Persona(name=f"Participant {k}", description="")
