"""Completion and embedding providers.

``ScriptedBackend`` is the deterministic test double used for offline runs;
``HttpBackend`` talks to any server implementing the chat-completions wire format.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import random
import re
import string
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx

from .core import InputSample, Persona, TaskInstruction
from .responders import build_persona_prompt, parse_persona

log = logging.getLogger(__name__)

API_KEY_ENV = "DEBATEKIT_API_KEY"


class BackendError(RuntimeError):
    pass


class TransportError(BackendError):
    pass


class AuthError(BackendError):
    pass


class RequestTag(str, enum.Enum):
    DISCUSSION = "discussion"
    EXTRACTION = "extraction"
    VOTE = "vote"
    CHALLENGE = "challenge"
    PERSONA = "persona"


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user_messages: tuple[str, ...]
    temperature: float = 0.0
    max_output_tokens: int = 1024
    tag: RequestTag = RequestTag.DISCUSSION
    # routing metadata for scripted behaviors; never sent over the wire
    turn: Optional[int] = None
    agent: Optional[int] = None
    attempt: int = 0
    rng_key: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tag", RequestTag(self.tag))
        object.__setattr__(self, "user_messages", tuple(self.user_messages))

    @property
    def text(self) -> str:
        return "\n".join((self.system, *self.user_messages))


# --- scripted backend --------------------------------------------------------------


@dataclass(frozen=True)
class ScriptRule:
    reply: Union[str, tuple[str, ...]]
    tag: Optional[str] = None
    contains: Optional[str] = None
    turn: Optional[int] = None
    agent: Optional[int] = None

    def matches(self, request: CompletionRequest) -> bool:
        if self.tag is not None and request.tag.value != self.tag:
            return False
        if self.turn is not None and request.turn != self.turn:
            return False
        if self.agent is not None and request.agent != self.agent:
            return False
        if self.contains is not None and self.contains not in request.text:
            return False
        return True


@dataclass
class ScriptedBehavior:
    """Ordered reply rules; the first matching rule wins.

    A reply may be a list, in which case one entry is drawn from a random stream
    seeded by the request's ``rng_key`` and content. Replies are
    :class:`string.Template` strings with ``$agent``, ``$turn``, ``$tag`` available.
    """

    rules: list[ScriptRule] = field(default_factory=list)
    default_reply: str = "[AGREE] I agree with the current solution."

    @classmethod
    def from_json(cls, data: Union[str, Path, dict, list]) -> "ScriptedBehavior":
        if isinstance(data, (str, Path)):
            data = json.loads(Path(data).read_text(encoding="utf-8"))
        default = None
        if isinstance(data, dict):
            default = data.get("default_reply")
            data = data.get("rules", [])
        rules = []
        for entry in data:
            reply = entry["reply"]
            rules.append(
                ScriptRule(
                    reply=tuple(reply) if isinstance(reply, list) else reply,
                    tag=entry.get("tag"),
                    contains=entry.get("contains"),
                    turn=entry.get("turn"),
                    agent=entry.get("agent"),
                )
            )
        behavior = cls(rules=rules)
        if default is not None:
            behavior.default_reply = default
        return behavior


def request_rng(request: CompletionRequest) -> random.Random:
    key = (request.rng_key, request.tag.value, request.agent, request.turn, request.attempt, request.text)
    digest = hashlib.sha256(repr(key).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


Responder = Callable[[CompletionRequest, random.Random], Optional[str]]


class ScriptedBackend:
    """Deterministic backend: identical request and rng key give an identical reply."""

    def __init__(
        self,
        behavior: Optional[ScriptedBehavior] = None,
        responder: Optional[Responder] = None,
        record: bool = False,
    ):
        self.behavior = behavior or ScriptedBehavior()
        self.responder = responder
        self.record = record
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()
        self._calls = 0

    @property
    def calls(self) -> int:
        return self._calls

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self._calls += 1
            if self.record:
                self.requests.append(request)
        rng = request_rng(request)
        if self.responder is not None:
            reply = self.responder(request, rng)
            if reply is not None:
                return reply
        for rule in self.behavior.rules:
            if rule.matches(request):
                reply = rule.reply if isinstance(rule.reply, str) else rng.choice(rule.reply)
                break
        else:
            reply = self.behavior.default_reply
        return string.Template(reply).safe_substitute(
            agent=request.agent if request.agent is not None else "",
            turn=request.turn if request.turn is not None else "",
            tag=request.tag.value,
        )


# --- HTTP backend --------------------------------------------------------------------


class HttpBackend:
    """Chat-completions client with bounded retries and a cap on in-flight requests.

    One instance is meant to be shared by every debate in a process; the semaphore
    it owns is what enforces ``concurrent_requests``.
    """

    retry_statuses = frozenset({408, 409, 429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        max_in_flight: int = 100,
        max_attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 120.0,
        client: Optional[httpx.Client] = None,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = client or httpx.Client(timeout=timeout)
        self._lock = threading.Lock()
        self.calls = 0

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _body(self, request: CompletionRequest) -> dict:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.extend({"role": "user", "content": m} for m in request.user_messages)
        return {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

    def complete(self, request: CompletionRequest) -> str:
        body = self._body(request)
        with self._lock:
            self.calls += 1
        last_error: Optional[str] = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    response = self._client.post(self.url, json=body, headers=self._headers())
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last_error)
                continue
            if response.status_code in (401, 403):
                raise AuthError(f"credentials rejected ({response.status_code})")
            if response.status_code in self.retry_statuses:
                last_error = f"HTTP {response.status_code}"
                log.warning("chat completion attempt %d failed: %s", attempt + 1, last_error)
                continue
            if response.status_code >= 400:
                raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
            try:
                return response.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed completion body: {exc}") from exc
        raise TransportError(f"gave up after {self.max_attempts} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()


# --- embeddings ---------------------------------------------------------------------

EmbeddingVector = tuple[float, ...]
_TOKEN = re.compile(r"\w+")


class HashingEmbedder:
    """Offline embedder: counts of hashed lowercase tokens in a fixed-size vector."""

    def __init__(self, dim: int = 4096):
        self.dim = dim

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for token in _TOKEN.findall(text.lower()):
                vec[self._bucket(token)] += 1.0
            out.append(tuple(vec))
        return out


class HttpEmbedder:
    def __init__(self, base_url: str, model: str, api_key: Optional[str] = None, timeout: float = 60.0):
        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            response = self._client.post(self.url, json={"model": self.model, "input": list(texts)}, headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if response.status_code in (401, 403):
            raise AuthError(f"credentials rejected ({response.status_code})")
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code}")
        data = sorted(response.json()["data"], key=lambda d: d.get("index", 0))
        return [tuple(float(x) for x in d["embedding"]) for d in data]


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    if len(u) != len(v):
        raise ValueError("vectors differ in length")
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


# --- personas ------------------------------------------------------------------------


def _fallback_persona(task: Union[TaskInstruction, str], k: int, taken: set[str]) -> Persona:
    text = task.text if isinstance(task, TaskInstruction) else task
    title = re.split(r"(?<=[.!?])\s", text.strip(), maxsplit=1)[0]
    while f"expert {k}" in taken:
        k += 1
    return Persona(name=f"Expert {k}", description=title)


def generate_personas(
    task: Union[TaskInstruction, str],
    n: int,
    backend,
    *,
    sample: Optional[InputSample] = None,
    temperature: float = 0.7,
    rng_key: tuple = (),
) -> list[Persona]:
    """Ask the backend for ``n`` distinct personas, one call at a time.

    Each call lists the personas generated so far. An unusable or duplicate reply
    is retried once, then replaced by ``Expert k``.
    """
    if n < 1:
        raise ValueError("need at least one persona")
    personas: list[Persona] = []
    for k in range(n):
        taken = {p.name.lower() for p in personas}
        chosen = None
        for attempt in range(2):
            prompt = build_persona_prompt(task, personas, sample)
            reply = backend.complete(
                CompletionRequest(
                    system=prompt.system,
                    user_messages=(prompt.user,),
                    temperature=temperature,
                    tag=RequestTag.PERSONA,
                    agent=k,
                    attempt=attempt,
                    rng_key=rng_key,
                )
            )
            persona = parse_persona(reply)
            if persona is not None and persona.name.lower() not in taken:
                chosen = persona
                break
            log.debug("persona reply rejected (attempt %d): %r", attempt + 1, reply[:80])
        personas.append(chosen or _fallback_persona(task, k + 1, taken))
    return personas
