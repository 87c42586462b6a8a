"""Datasets, metrics, experiment runs and reports."""

from .data import (
    DatasetError,
    SamplingParams,
    default_task,
    draw_sample,
    infer_answer_kind,
    load_dataset,
    resolve_sample_size,
    sample_size,
)
from .metrics import diversity_score, score, score_accuracy, score_squad_f1, token_f1
from .report import AggregateReport, aggregate, build_report, challenge_stats, run_spread
from .runner import Cell, ChallengeSetup, RunRecord, Runner, read_records
