"""Multi-agent debate orchestration with pluggable decision protocols."""

from .backends import HashingEmbedder, HttpBackend, ScriptedBackend, ScriptedBehavior
from .core import (
    AnswerKind,
    ConfigError,
    DebateConfig,
    GeneratorKind,
    InputSample,
    Paradigm,
    Persona,
    Protocol,
    TaskInstruction,
    Transcript,
    canonical_answer,
    validate_config,
)
from .decision import DecisionOutcome, decide_step, evaluate_consensus, parse_ballot, solution_counting, tally
from .orchestration import Debate, run_baseline, run_challenge, run_debate, schedule_scaling_sweep

__version__ = "0.1.0"
