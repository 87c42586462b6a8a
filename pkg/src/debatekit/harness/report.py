"""Folding a results file into per-cell statistics and plot-ready series."""

from __future__ import annotations

import csv
import json
import statistics
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .runner import RunRecord


@dataclass
class Spread:
    mean: Optional[float]
    std: Optional[float]
    n: int
    run_means: list[float] = field(default_factory=list)


def run_spread(run_means: Sequence[float], n: int) -> Spread:
    """Mean of per-run means with the sample standard deviation (divisor runs - 1)."""
    run_means = list(run_means)
    if not run_means:
        return Spread(None, None, n)
    std = statistics.stdev(run_means) if len(run_means) > 1 else 0.0
    return Spread(statistics.fmean(run_means), std, n, run_means)


@dataclass
class AggregateReport:
    num_runs: int
    num_samples: int
    score: Spread
    termination: dict[str, dict[int, int]]
    decided_rate: float
    fallback_rate: float
    errors: int
    answerable: Optional[Spread] = None
    unanswerable: Optional[Spread] = None
    diversity: Optional[Spread] = None
    challenge: Optional[dict] = None

    def termination_percent(self, protocol: str) -> dict[int, float]:
        hist = self.termination[protocol]
        total = sum(hist.values())
        return {turn: 100.0 * c / total for turn, c in hist.items()}

    def mean_termination_turn(self, protocol: str) -> float:
        hist = self.termination[protocol]
        return sum(t * c for t, c in hist.items()) / sum(hist.values())

    def to_json(self) -> dict:
        out = asdict(self)
        out["termination"] = {p: {str(t): c for t, c in sorted(h.items())} for p, h in self.termination.items()}
        return out


def _per_run(records: Sequence[RunRecord], num_runs: int, value) -> Spread:
    by_run: dict[int, list[float]] = defaultdict(list)
    for r in records:
        v = value(r)
        if v is not None:
            by_run[r.run_index].append(v)
    means = [statistics.fmean(by_run[i]) for i in range(num_runs) if by_run[i]]
    return run_spread(means, sum(len(v) for v in by_run.values()))


def termination_turn(record: RunRecord) -> Optional[int]:
    return record.decision_turn if record.decision_turn is not None else record.final_turn


def aggregate(records: Sequence[RunRecord], num_runs: int, *, split_answerable: Optional[bool] = None) -> AggregateReport:
    """Statistics for one complete set of records (every sample present in every run).

    ``split_answerable`` defaults to splitting whenever some samples have no reference.
    """
    if num_runs < 1:
        raise ValueError("num_runs must be positive")
    runs_of: dict[str, set[int]] = defaultdict(set)
    for r in records:
        if not 0 <= r.run_index < num_runs:
            raise ValueError(f"record for {r.sample_id} has run index {r.run_index} outside 0..{num_runs - 1}")
        runs_of[r.sample_id].add(r.run_index)
    for sid, runs in runs_of.items():
        if len(runs) != num_runs:
            missing = sorted(set(range(num_runs)) - runs)
            raise ValueError(f"sample {sid} is missing runs {missing}")
    if len(records) != len(runs_of) * num_runs:
        raise ValueError("duplicate records for a (sample, run) pair")

    termination: dict[str, Counter] = defaultdict(Counter)
    for r in records:
        turn = termination_turn(r)
        if turn is not None:
            termination[r.protocol][turn] += 1

    n = len(records) or 1
    report = AggregateReport(
        num_runs=num_runs,
        num_samples=len(runs_of),
        score=_per_run(records, num_runs, lambda r: r.score),
        termination={p: dict(sorted(c.items())) for p, c in sorted(termination.items())},
        decided_rate=sum(r.decided for r in records) / n,
        fallback_rate=sum(r.fallback_used for r in records) / n,
        errors=sum(r.error is not None for r in records),
    )
    if split_answerable is None:
        split_answerable = any(not r.answerable for r in records)
    if split_answerable:
        report.answerable = _per_run([r for r in records if r.answerable], num_runs, lambda r: r.score)
        report.unanswerable = _per_run([r for r in records if not r.answerable], num_runs, lambda r: r.score)
    if any(r.diversity is not None for r in records):
        report.diversity = _per_run(records, num_runs, lambda r: r.diversity)
    report.challenge = challenge_stats(records)
    return report


def challenge_stats(records: Sequence[RunRecord]) -> Optional[dict]:
    with_challenge = [r.challenge for r in records if r.challenge is not None]
    if not with_challenge:
        return None
    agents = sum(len(c["challenged"]) for c in with_challenge)
    challenged_agents = sum(sum(c["challenged"]) for c in with_challenge)
    challenged = [c for c in with_challenge if any(c["challenged"])]
    deltas = [c["delta"] for c in challenged]
    k = len(challenged) or 1
    return {
        "scenario": with_challenge[0]["scenario"],
        "challenge_rate": challenged_agents / agents if agents else 0.0,
        "samples_challenged_rate": len(challenged) / len(with_challenge),
        "improved": sum(d > 0 for d in deltas) / k,
        "unchanged": sum(d == 0 for d in deltas) / k,
        "worsened": sum(d < 0 for d in deltas) / k,
    }


# --- artifacts ------------------------------------------------------------------------


def build_report(records: Sequence[RunRecord], cell_runs: dict[str, int], meta: Optional[dict] = None) -> dict:
    by_cell: dict[str, list[RunRecord]] = defaultdict(list)
    for r in records:
        by_cell[r.cell].append(r)
    cells = {}
    for label, runs in cell_runs.items():
        rec = by_cell.get(label, [])
        cells[label] = aggregate(rec, runs).to_json() if rec else None
    return {"meta": meta or {}, "cells": cells}


def write_report(report: dict, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_series(report: dict, cell_info: dict[str, dict], directory: Union[str, Path]) -> list[Path]:
    """Plot-ready CSVs. ``cell_info`` maps cell label to its config dict plus an optional sweep point."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    bars, termination, sweeps = [], [], defaultdict(list)
    for label, cell in report["cells"].items():
        if cell is None:
            continue
        info = cell_info[label]
        score = cell["score"]
        bars.append([label, info.get("decision_protocol"), info.get("discussion_paradigm"),
                     info.get("response_generator"), score["mean"], score["std"], score["n"]])
        for protocol, hist in cell["termination"].items():
            total = sum(hist.values())
            for turn, count in hist.items():
                termination.append([label, protocol, turn, count, 100.0 * count / total])
        if info.get("sweep"):
            sweeps[info["sweep"]].append([info["sweep_point"], label, score["mean"], score["std"]])

    path = directory / "protocol_bars.csv"
    _write_csv(path, ["cell", "protocol", "paradigm", "generator", "mean", "std", "n"], bars)
    written.append(path)
    path = directory / "termination.csv"
    _write_csv(path, ["cell", "protocol", "turn", "count", "percent"], termination)
    written.append(path)
    for kind, rows in sorted(sweeps.items()):
        axis = "rounds" if kind == "rounds" else "agents"
        path = directory / f"accuracy_vs_{axis}.csv"
        _write_csv(path, [axis, "cell", "mean", "std"], sorted(rows))
        written.append(path)
    return written
