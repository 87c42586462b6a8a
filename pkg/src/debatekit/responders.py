"""Prompt construction for every agent interaction and parsing of agent replies."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from .core import (
    GeneratorKind,
    InputSample,
    Message,
    Persona,
    Protocol,
    TaskInstruction,
    Transcript,
    render_input,
)
from .decision import CandidateSet

TaskLike = Union[TaskInstruction, str]


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str


class ChallengeKind(str, enum.Enum):
    SOLUTION_ONLY = "solution_only"
    WITH_HISTORY = "with_history"
    WITH_EXTRA_CONTEXT = "with_extra_context"
    IRRELEVANT_SOLUTION = "irrelevant_solution"
    WRONG_SOLUTION = "wrong_solution"

    @property
    def injects(self) -> bool:
        return self in (ChallengeKind.IRRELEVANT_SOLUTION, ChallengeKind.WRONG_SOLUTION)


@dataclass(frozen=True)
class ChallengeScenario:
    kind: ChallengeKind
    injected_solution: Optional[str] = None
    extra_context: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ChallengeKind(self.kind))
        if self.kind.injects and not self.injected_solution:
            raise ValueError(f"{self.kind.value} needs an injected solution")
        if not self.kind.injects and self.injected_solution is not None:
            raise ValueError(f"{self.kind.value} takes no injected solution")


class TemplateStore:
    """Prompt templates with ``{placeholder}`` fields.

    Files in ``directory`` override the packaged defaults of the same name.
    """

    def __init__(self, directory: Optional[Union[str, Path]] = None):
        self.directory = Path(directory) if directory else None

    def get(self, name: str) -> str:
        if self.directory is not None:
            path = self.directory / f"{name}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        return _packaged(name)

    def render(self, name: str, **values) -> str:
        return self.get(name).format_map(values)


@lru_cache(maxsize=None)
def _packaged(name: str) -> str:
    return resources.files("debatekit").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


DEFAULT_TEMPLATES = TemplateStore()


def _task_text(task: TaskLike) -> str:
    return task.text if isinstance(task, TaskInstruction) else task


def system_line(persona: Persona, templates: TemplateStore = DEFAULT_TEMPLATES, name: str = "system") -> str:
    text = templates.render(name, persona=persona.name, persona_description=persona.description)
    if not persona.description:
        text = text.replace(f"{persona.name} ()", persona.name)
    return text


# --- discussion ----------------------------------------------------------------


def _redact(text: str, solutions: Sequence[str]) -> str:
    solutions = [s for s in solutions if s and s.strip()]
    changed = True
    while changed:
        changed = False
        for s in solutions:
            if s in text:
                text = text.replace(s, "")
                changed = True
    return text


def format_history(messages: Sequence[Message], hide: Sequence[str] = ()) -> str:
    lines = []
    for m in messages:
        body = _redact(m.text, hide) if hide else m.text
        lines.append(f"{m.author.persona.name}: {body}")
    out = "\n".join(lines)
    # joining can glue fragments back into a hidden string
    return _redact(out, hide) if hide else out


def build_discussion_prompt(
    kind: GeneratorKind,
    agent,
    task: TaskLike,
    sample: InputSample,
    visible: Sequence[Message],
    turn: int,
    *,
    request_agreement: Optional[bool] = None,
    use_chain_of_thought: bool = True,
    hidden_solutions: Sequence[str] = (),
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> PromptBundle:
    """Prompt for one discussion reply.

    ``agent`` is an :class:`AgentId`. Under the reasoning generator every string in
    ``hidden_solutions`` (plus the visible messages' extracted solutions) is removed
    from the history so only reasoning reaches the agent.
    """
    kind = GeneratorKind(kind)
    if request_agreement is None:
        request_agreement = bool(visible)
    values = {
        "task": _task_text(task),
        "input": render_input(sample),
        "role_note": templates.get("moderator") if agent.is_moderator else "",
        "agreement": templates.get("agreement") if request_agreement else "",
        "cot": templates.get("chain_of_thought") if use_chain_of_thought else "",
    }
    if visible:
        hide: list[str] = []
        if kind is GeneratorKind.REASONING:
            hide = list(hidden_solutions) + [m.extracted_solution for m in visible if m.extracted_solution]
        values["history"] = format_history(visible, hide)
        user = templates.render(f"discussion_{kind.value}", **values)
    else:
        user = templates.render(f"discussion_{kind.value}_first", **values)
    return PromptBundle(system=system_line(agent.persona, templates), user=user)


_BRACKETED = re.compile(r"\[\s*(DISAGREE|AGREE)\s*\]", re.IGNORECASE)
_BARE = re.compile(r"\b(DISAGREE|AGREE)\b")
_LEADING = re.compile(r"^[\W_]*(disagree|agree)\b", re.IGNORECASE)
MARKER_WINDOW = 40


def extract_agreement(text: str) -> Optional[bool]:
    """``[AGREE]``/``[DISAGREE]`` anywhere, else a bare uppercase marker near the start."""
    m = _BRACKETED.search(text)
    if m is None:
        m = _LEADING.match(text)
        if m is not None and m.start(1) >= MARKER_WINDOW:
            m = None
    if m is None:
        m = _BARE.search(text, 0, MARKER_WINDOW + len("DISAGREE"))
        if m is not None and m.start() >= MARKER_WINDOW:
            m = None
    if m is None:
        return None
    return m.group(1).upper() == "AGREE"


# --- extraction, voting, challenge ----------------------------------------------------


def build_extraction_prompt(
    task: TaskLike,
    sample: InputSample,
    previous_response: str,
    persona: Persona,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> PromptBundle:
    if not previous_response or not previous_response.strip():
        raise ValueError("cannot extract a solution from an empty response")
    user = templates.render(
        "extraction",
        task=_task_text(task),
        input=render_input(sample),
        previous_answer=previous_response,
    )
    return PromptBundle(system=system_line(persona, templates), user=user)


def build_voting_prompt(
    protocol: Protocol,
    task: TaskLike,
    sample: InputSample,
    candidates: CandidateSet,
    persona: Persona,
    budget: int = 10,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> PromptBundle:
    protocol = Protocol(protocol)
    if not protocol.is_voting:
        raise ValueError(f"{protocol.value} has no voting prompt")
    if len(candidates) < 2:
        raise ValueError("a vote needs at least two candidates")
    solutions = "\n".join(f"Solution {i}: {c.answer}" for i, c in enumerate(candidates, start=1))
    user = templates.render(
        f"vote_{protocol.value}",
        task=_task_text(task),
        input=render_input(sample),
        solutions=solutions,
        budget=budget,
    )
    return PromptBundle(system=system_line(persona, templates), user=user)


def _challenge_extra(scenario: ChallengeScenario, transcript: Optional[Transcript]) -> str:
    if scenario.kind is ChallengeKind.WITH_HISTORY:
        history = format_history(transcript.messages if transcript else [])
        return f"Here is the discussion that led to the final answer:\n{history}\n"
    if scenario.kind is ChallengeKind.WITH_EXTRA_CONTEXT and scenario.extra_context:
        return f"Additional information: {scenario.extra_context}\n"
    return ""


def build_challenge_prompts(
    scenario: ChallengeScenario,
    task: TaskLike,
    sample: InputSample,
    final_answer: str,
    transcript: Optional[Transcript],
    persona: Persona,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> tuple[PromptBundle, PromptBundle]:
    shown = scenario.injected_solution if scenario.kind.injects else final_answer
    if not shown:
        raise ValueError("challenge needs a non-empty final answer")
    values = {
        "task": _task_text(task),
        "question": render_input(sample),
        "final_answer": shown,
        "extra": _challenge_extra(scenario, transcript),
    }
    system = system_line(persona, templates, name="challenge_system")
    return (
        PromptBundle(system=system, user=templates.render("challenge", **values)),
        PromptBundle(system=system, user=templates.render("challenge_revision", **values)),
    )


# --- personas --------------------------------------------------------------------


def build_persona_prompt(
    task: TaskLike,
    already_generated: Sequence[Persona],
    sample: Optional[InputSample] = None,
    templates: TemplateStore = DEFAULT_TEMPLATES,
) -> PromptBundle:
    exclusion = ""
    if already_generated:
        names = ", ".join(p.name for p in already_generated)
        exclusion = f"These personas are already taken and must not be used again: {names}.\n"
    user = templates.render(
        "persona",
        task=_task_text(task),
        input=f"Input: {render_input(sample)}\n" if sample is not None else "",
        exclusion=exclusion,
    )
    return PromptBundle(system="", user=user)


_PERSONA_LINE = re.compile(r"^[\s*#>\-\d.)]*(?:name\s*:\s*)?([^:\n]{1,80}?)[\s*]*:\s*(\S.*)$", re.IGNORECASE)


def parse_persona(text: str) -> Optional[Persona]:
    for line in text.strip().splitlines():
        m = _PERSONA_LINE.match(line.strip())
        if m:
            name = m.group(1).strip().strip("\"'*").strip()
            description = m.group(2).strip().strip("*").strip()
            if name and description:
                return Persona(name=name, description=description)
    return None
