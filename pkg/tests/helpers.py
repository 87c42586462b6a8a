"""Scripted agents and fixtures shared by the test modules."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

from debatekit.backends import CompletionRequest, RequestTag, ScriptedBackend
from debatekit.core import AnswerKind, InputSample, Persona, TaskInstruction

TASK = TaskInstruction("Answer the following question.", AnswerKind.MULTIPLE_CHOICE)
SAMPLE = InputSample(
    id="s1",
    question="Which choir performed at the Guildhall?",
    choices=("Southampton Choral Society", "Southampton Philharmonic Choir", "Winchester Cathedral Choir"),
    reference_answers=("B",),
)
PERSONAS = [
    Persona("Music Journalist", "Writes about concerts."),
    Persona("Local Music Expert", "Knows the local scene."),
    Persona("Concert Promoter", "Books venues."),
]


def personas(n: int) -> list[Persona]:
    return [Persona(f"Agent {i}", f"Participant number {i}.") for i in range(n)]


def mc_samples(n: int, prefix: str = "q") -> list[InputSample]:
    return [
        InputSample(
            id=f"{prefix}{i}",
            question=f"Question number {i}?",
            choices=("alpha", "beta", "gamma", "delta"),
            reference_answers=("B",),
        )
        for i in range(n)
    ]


def write_dataset(path: Path, samples) -> Path:
    rows = []
    for s in samples:
        row = {"id": s.id, "question": s.question, "references": list(s.reference_answers)}
        if s.context:
            row["context"] = s.context
        if s.choices:
            row["choices"] = list(s.choices)
        rows.append(row)
    path.write_text(json.dumps(rows), encoding="utf-8")
    return path


def agreeable_backend(answer: str = "B", vote: str = "1", **kw) -> ScriptedBackend:
    """Everyone agrees, extracts ``answer`` and votes ``vote``."""

    def respond(req: CompletionRequest, rng):
        if req.tag is RequestTag.EXTRACTION:
            return answer
        if req.tag is RequestTag.VOTE:
            return vote
        if req.tag is RequestTag.PERSONA:
            return f"Specialist {req.agent}: Knows the topic well."
        return f"[AGREE] The answer is {answer}."

    return ScriptedBackend(responder=respond, **kw)


def fixed_answers_backend(answers, vote_for=None, **kw) -> ScriptedBackend:
    """Agent ``i`` always proposes ``answers[i]``; votes go to ``vote_for`` (1-based) or to oneself."""

    def respond(req: CompletionRequest, rng):
        if req.tag is RequestTag.VOTE:
            return str(vote_for if vote_for is not None else req.agent + 1)
        if req.tag is RequestTag.EXTRACTION:
            marker = "Your previous response: "
            prev = req.user_messages[0].split(marker, 1)[1].split("\n", 1)[0]
            return prev.rsplit("answer is ", 1)[-1].rstrip(".")
        if req.tag is RequestTag.PERSONA:
            return f"Specialist {req.agent}: Knows the topic well."
        return f"[DISAGREE] My answer is {answers[req.agent]}."

    return ScriptedBackend(responder=respond, **kw)


class Cycler:
    """Responder returning successive replies per tag, for call-order scripted traces."""

    def __init__(self, replies_by_tag: dict[str, list[str]]):
        self._iters = {tag: itertools.cycle(replies) for tag, replies in replies_by_tag.items()}

    def __call__(self, req: CompletionRequest, rng):
        it = self._iters.get(req.tag.value)
        return next(it) if it else None
