"""Dataset files and sample selection."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

from ..core import AnswerKind, InputSample, TaskInstruction


class DatasetError(ValueError):
    pass


def load_dataset(path: Union[str, Path]) -> list[InputSample]:
    """Read a JSON array of ``{id, question, context?, references, choices?}`` objects."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise DatasetError("dataset must be a JSON array")
    samples, seen = [], set()
    for i, row in enumerate(raw):
        if not isinstance(row, dict) or "id" not in row or "question" not in row:
            raise DatasetError(f"entry {i} needs at least 'id' and 'question'")
        sid = str(row["id"])
        if sid in seen:
            raise DatasetError(f"duplicate sample id {sid!r}")
        seen.add(sid)
        refs = row.get("references", [])
        if isinstance(refs, str):
            refs = [refs]
        samples.append(
            InputSample(
                id=sid,
                question=str(row["question"]),
                context=row.get("context") or None,
                reference_answers=tuple(str(r) for r in refs),
                choices=tuple(str(c) for c in row["choices"]) if row.get("choices") else None,
            )
        )
    return samples


def infer_answer_kind(samples: Sequence[InputSample]) -> AnswerKind:
    if samples and all(s.choices for s in samples):
        return AnswerKind.MULTIPLE_CHOICE
    refs = [r.strip().lower() for s in samples for r in s.reference_answers]
    if refs and all(r in ("yes", "no", "true", "false") for r in refs):
        return AnswerKind.BOOLEAN
    if any(not s.reference_answers for s in samples) or any(s.context for s in samples):
        return AnswerKind.EXTRACTIVE_OR_UNKNOWN
    return AnswerKind.FREE_TEXT


DEFAULT_INSTRUCTIONS = {
    AnswerKind.MULTIPLE_CHOICE: "Answer the following question. Choose the correct option and state its letter.",
    AnswerKind.BOOLEAN: "Answer the following question with yes or no.",
    AnswerKind.EXTRACTIVE_OR_UNKNOWN: (
        "Answer the following question. If the question is not answerable with the provided "
        "information, write '[UNKNOWN]'."
    ),
    AnswerKind.FREE_TEXT: "Answer the following question.",
}


def default_task(kind: AnswerKind, text: Optional[str] = None) -> TaskInstruction:
    kind = AnswerKind(kind)
    return TaskInstruction(text=text or DEFAULT_INSTRUCTIONS[kind], answer_kind=kind)


# --- Cochran sample sizes ---------------------------------------------------------


@dataclass(frozen=True)
class SamplingParams:
    Z: float = 1.96
    p: float = 0.5
    d: float = 0.05

    def _exact(self) -> tuple[Fraction, Fraction, Fraction]:
        # decimal strings keep 384.16 exact so the ceiling is not thrown off by float noise
        return Fraction(str(self.Z)), Fraction(str(self.p)), Fraction(str(self.d))

    @property
    def n0_exact(self) -> Fraction:
        z, p, d = self._exact()
        return z * z * p * (1 - p) / (d * d)

    @property
    def n0(self) -> float:
        return float(self.n0_exact)


def sample_size(N: int, params: SamplingParams = SamplingParams()) -> int:
    """Cochran's sample size with finite population correction, rounded up."""
    if not isinstance(N, int) or N < 1:
        raise ValueError(f"population size must be a positive integer, got {N!r}")
    n0 = params.n0_exact
    n = math.ceil(n0 / (1 + (n0 - 1) / N))
    return max(1, min(n, N))


# sizes reported for the benchmark subsets that the formula does not reproduce
BENCHMARK_SAMPLE_SIZE_OVERRIDES = {"mmlu": 375, "mmlu_pro": 374, "gpqa": 250}

BENCHMARK_POPULATIONS = {
    "mmlu": 14042,
    "mmlu_pro": 12032,
    "gpqa": 546,
    "strategyqa": 2289,
    "musr": 250,
    "squad_v2": 11873,
}


def resolve_sample_size(
    N: int,
    dataset: Optional[str] = None,
    overrides: Optional[dict[str, int]] = None,
    params: SamplingParams = SamplingParams(),
) -> int:
    overrides = BENCHMARK_SAMPLE_SIZE_OVERRIDES if overrides is None else overrides
    if dataset is not None and dataset.lower() in overrides:
        return min(overrides[dataset.lower()], N)
    return sample_size(N, params)


def draw_sample(
    dataset: Sequence[InputSample], n: int, seed: int, shuffle: bool = False
) -> list[InputSample]:
    """Uniform sample without replacement. Keeps dataset order unless ``shuffle``."""
    if n > len(dataset):
        raise DatasetError(f"cannot draw {n} samples from {len(dataset)}")
    if n < 0:
        raise DatasetError("sample size must be non-negative")
    picked = random.Random(seed).sample(range(len(dataset)), n)
    if not shuffle:
        picked.sort()
    return [dataset[i] for i in picked]
