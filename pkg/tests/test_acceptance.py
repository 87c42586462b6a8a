"""Acceptance criteria 1-10. Run directly or via pytest; a PASS/FAIL line per criterion is printed."""

from __future__ import annotations

import itertools
import os
import random
import re
import time
from pathlib import Path

import pytest

from debatekit.backends import HashingEmbedder, RequestTag, ScriptedBackend
from debatekit.core import DebateConfig, InputSample, Paradigm, Persona, Protocol, TaskInstruction
from debatekit.decision import (
    Allocation,
    Approvals,
    Ballot,
    Candidate,
    CandidateSet,
    ConsensusKind,
    Ranking,
    Single,
    evaluate_consensus,
    tally,
    tally_approval,
    tally_cumulative,
    tally_ranked,
    tally_simple,
)
from debatekit.harness.cli import run_experiment
from debatekit.harness.data import BENCHMARK_POPULATIONS, resolve_sample_size, sample_size
from debatekit.harness.metrics import diversity_score, score_squad_f1
from debatekit.harness.report import aggregate, run_spread
from debatekit.harness.runner import Cell, Runner
from debatekit.orchestration import Debate
from debatekit.responders import (
    ChallengeKind,
    ChallengeScenario,
    build_challenge_prompts,
    build_extraction_prompt,
    build_voting_prompt,
)

import oracles
from helpers import agreeable_backend, mc_samples, write_dataset

GOLDEN = Path(__file__).parent / "golden"


def names(*items):
    return CandidateSet(tuple(Candidate(i, n, f"answer of {n}") for i, n in enumerate(items)))


# --- 1 ---------------------------------------------------------------------------------


@pytest.mark.criterion(1, "worked-example voting fixtures")
def test_c1_worked_examples():
    start = time.perf_counter()

    cands = names("Music Connoisseur", "Choir Conductor", "Music Journalist")
    mj = 2
    res = tally_simple([Ballot(v, Single(mj)) for v in range(3)], cands)
    assert res.winner == mj and res.scores[mj] == 3 and not res.tied

    cands = names("Music Journalist", "Local Music Expert", "Concert Promoter")
    res = tally_ranked([Ballot(v, Ranking((0, 1, 2))) for v in range(3)], cands)
    assert res.scores == {0: 3, 1: 6, 2: 9}
    assert cands[res.winner].name == "Music Journalist"

    cands = names("Music Critic", "Local Music Event Coordinator", "Information Architect")
    ia, mc = 2, 0
    res = tally_approval(
        [Ballot(0, Approvals(frozenset({ia, mc}))), Ballot(1, Approvals(frozenset({ia}))),
         Ballot(2, Approvals(frozenset({ia})))],
        cands,
    )
    assert cands[res.winner].name == "Information Architect" and res.scores[ia] == 3

    cands = names("Local Music Enthusiast", "Archivist", "Music Journalist")
    lme, arch, mj = 0, 1, 2
    res = tally_cumulative(
        [
            Ballot(0, Allocation.of({arch: 9, mj: 1})),
            Ballot(1, Allocation.of({lme: 2, arch: 4, mj: 4})),
            Ballot(2, Allocation.of({lme: 1, arch: 2, mj: 7})),
        ],
        cands,
        budget=10,
    )
    assert res.scores == {lme: 3, arch: 15, mj: 12}
    assert cands[res.winner].name == "Archivist"
    assert time.perf_counter() - start < 1.0


# --- 2 ---------------------------------------------------------------------------------


def _check(protocol, payloads, n, expected, budget=10):
    res = tally(protocol, [Ballot(v, p) for v, p in enumerate(payloads)], n, budget)
    if len(expected) == 1:
        return res.winner == expected[0] and not res.tied
    return res.winner is None and res.tied and sorted(res.tied_set) == expected


def _profiles_exhaustive():
    for n_agents in (1, 2, 3):
        for n in (1, 2, 3):
            for prof in itertools.product(range(n), repeat=n_agents):
                yield Protocol.SIMPLE_VOTING, [Single(c) for c in prof], n, oracles.oracle_simple(list(prof), n), 10
            perms = list(itertools.permutations(range(n)))
            for prof in itertools.product(perms, repeat=n_agents):
                yield Protocol.RANKED_VOTING, [Ranking(p) for p in prof], n, oracles.oracle_ranked(list(prof), n), 10
            subsets = list(oracles.nonempty_subsets(n))
            for prof in itertools.product(subsets, repeat=n_agents):
                yield Protocol.APPROVAL_VOTING, [Approvals(s) for s in prof], n, oracles.oracle_approval(list(prof), n), 10
            for budget in (1, 2, 3, 4):
                allocs = list(oracles.allocations(n, budget))
                for prof in itertools.product(allocs, repeat=n_agents):
                    yield (Protocol.CUMULATIVE_VOTING, [Allocation.of(a) for a in prof], n,
                           oracles.oracle_cumulative(list(prof), n), budget)


def _profiles_random(count=1000, seed=20240601):
    rng = random.Random(seed)
    protocols = [Protocol.SIMPLE_VOTING, Protocol.RANKED_VOTING, Protocol.APPROVAL_VOTING, Protocol.CUMULATIVE_VOTING]
    for i in range(count):
        protocol = protocols[i % 4]
        n_agents, n = rng.randint(1, 5), rng.randint(1, 5)
        if protocol is Protocol.SIMPLE_VOTING:
            prof = [rng.randrange(n) for _ in range(n_agents)]
            yield protocol, [Single(c) for c in prof], n, oracles.oracle_simple(prof, n), 10
        elif protocol is Protocol.RANKED_VOTING:
            prof = [tuple(rng.sample(range(n), n)) for _ in range(n_agents)]
            yield protocol, [Ranking(p) for p in prof], n, oracles.oracle_ranked(prof, n), 10
        elif protocol is Protocol.APPROVAL_VOTING:
            prof = [frozenset(rng.sample(range(n), rng.randint(1, n))) for _ in range(n_agents)]
            yield protocol, [Approvals(s) for s in prof], n, oracles.oracle_approval(prof, n), 10
        else:
            budget = rng.randint(1, 25)
            prof = []
            for _ in range(n_agents):
                left, alloc = budget, {}
                for c in rng.sample(range(n), n):
                    pts = rng.randint(0, left)
                    left -= pts
                    if pts:
                        alloc[c] = pts
                prof.append(alloc)
            yield protocol, [Allocation.of(a) for a in prof], n, oracles.oracle_cumulative(prof, n), budget


@pytest.mark.criterion(2, "tally-oracle equivalence")
def test_c2_tally_oracle():
    start = time.perf_counter()
    mismatches, checked = [], 0
    for protocol, payloads, n, expected, budget in itertools.chain(_profiles_exhaustive(), _profiles_random()):
        checked += 1
        if not _check(protocol, payloads, n, expected, budget):
            mismatches.append((protocol.value, payloads, expected))
    assert checked > 1000
    assert mismatches == []
    assert time.perf_counter() - start < 10.0


# --- 3 ---------------------------------------------------------------------------------


@pytest.mark.criterion(3, "consensus thresholds")
def test_c3_consensus_thresholds():
    start = time.perf_counter()
    mismatches = []
    for n in range(1, 11):
        for k in range(n + 1):
            agreements = [True] * k + [False] * (n - k)
            for kind in ConsensusKind:
                if evaluate_consensus(agreements, kind, n) != oracles.consensus_predicate(k, n, kind.value):
                    mismatches.append((n, k, kind.value))
    assert mismatches == []
    assert time.perf_counter() - start < 1.0


# --- 4 ---------------------------------------------------------------------------------


@pytest.mark.criterion(4, "Cochran sampling")
def test_c4_cochran():
    start = time.perf_counter()
    assert sample_size(2289) == 330
    assert sample_size(250) == 152
    assert sample_size(11873) == 373
    assert sample_size(10**9) == 385
    for N in (2289, 250, 11873, 10**9):
        assert sample_size(N) == oracles.cochran(N)
    assert resolve_sample_size(BENCHMARK_POPULATIONS["mmlu"], "mmlu") == 375
    assert resolve_sample_size(BENCHMARK_POPULATIONS["mmlu_pro"], "mmlu_pro") == 374
    assert resolve_sample_size(BENCHMARK_POPULATIONS["gpqa"], "gpqa") == 250
    assert time.perf_counter() - start < 1.0


# --- 5 ---------------------------------------------------------------------------------

_G_TASK = TaskInstruction("Answer the following question.")
_G_SAMPLE = InputSample("g", "What is the capital of France?")
_G_PERSONA = Persona("Economist", "A researcher who studies markets.")


def _golden(name: str) -> str:
    return (GOLDEN / f"{name}.txt").read_text(encoding="utf-8")


@pytest.mark.criterion(5, "prompt golden files")
def test_c5_prompt_golden_files():
    start = time.perf_counter()
    ext = build_extraction_prompt(_G_TASK, _G_SAMPLE, "[AGREE] I think it is Paris.", _G_PERSONA)
    assert ext.user == _golden("extraction")
    assert ext.system == _golden("system")

    cands = CandidateSet(tuple(Candidate(i, f"a{i}", a) for i, a in enumerate(["Paris", "Lyon", "Marseille"])))
    for protocol in (Protocol.SIMPLE_VOTING, Protocol.APPROVAL_VOTING, Protocol.CUMULATIVE_VOTING,
                     Protocol.RANKED_VOTING):
        bundle = build_voting_prompt(protocol, _G_TASK, _G_SAMPLE, cands, _G_PERSONA, budget=10)
        assert bundle.user == _golden(f"vote_{protocol.value}"), protocol
        assert bundle.system == _golden("system")

    challenge, revision = build_challenge_prompts(
        ChallengeScenario(ChallengeKind.SOLUTION_ONLY), _G_TASK, _G_SAMPLE, "Paris", None, _G_PERSONA
    )
    assert challenge.user == _golden("challenge")
    assert revision.user == _golden("challenge_revision")
    assert challenge.system == revision.system == _golden("challenge_system")
    assert time.perf_counter() - start < 1.0


# --- 6 ---------------------------------------------------------------------------------

BEHAVIOR = """{
  "rules": [
    {"tag": "persona", "reply": ["Economist: Studies markets.", "Linguist: Studies language.",
                                 "Historian: Studies the past.", "Chemist: Studies matter."]},
    {"tag": "extraction", "reply": ["A", "B", "C"]},
    {"tag": "vote", "reply": ["1", "2", "3"]},
    {"tag": "discussion", "reply": ["[AGREE] Agent $agent agrees in turn $turn.",
                                    "[DISAGREE] Agent $agent objects in turn $turn."]}
  ]
}"""


@pytest.mark.criterion(6, "determinism of full scripted runs")
def test_c6_determinism(tmp_path):
    start = time.perf_counter()
    data = write_dataset(tmp_path / "data.json", mc_samples(20))
    behavior = tmp_path / "behavior.json"
    behavior.write_text(BEHAVIOR)
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name / "results.jsonl"
        code = run_experiment(["--input", str(data), "--output", str(out), "--scripted", str(behavior),
                               "--num-samples", "20", "--num-runs", "3", "--seed", "7"])
        assert code == 0
        outputs.append(out.read_bytes())
    assert len(outputs[0].splitlines()) == 60
    assert outputs[0] == outputs[1]
    assert time.perf_counter() - start < 30.0


# --- 7 ---------------------------------------------------------------------------------

_TOKEN = re.compile(r"msg-(\d+)-(\d+)-(\d+)")


def _random_debate(rng: random.Random, i: int):
    paradigm = rng.choice(list(Paradigm))
    tie_mode = i % 10 == 0
    if tie_mode:
        protocol = Protocol.SIMPLE_VOTING
    elif paradigm is Paradigm.COLLECTIVE_REFINEMENT:
        protocol = rng.choice([p for p in Protocol if not p.is_consensus])
    else:
        protocol = rng.choice(list(Protocol))
    n = rng.randint(3, 5) if paradigm in (Paradigm.REPORT, Paradigm.DEBATE) else rng.randint(2, 5)
    cfg = DebateConfig(
        decision_protocol=protocol,
        discussion_paradigm=paradigm,
        response_generator=rng.choice(["freetext", "simple", "critical", "reasoning"]),
        num_agents=n,
        max_turns=rng.randint(4, 6),
        all_agents_draft_first=rng.random() < 0.5,
        seed=rng.randrange(2**32),
        debate_rounds=rng.randint(1, 2),
    )
    counter = itertools.count()

    def respond(req, r):
        if req.tag is RequestTag.DISCUSSION:
            marker = r.choice(["[AGREE]", "[DISAGREE]", ""])
            return f"{marker} msg-{req.agent}-{req.turn}-{next(counter)} I favour option {r.choice('ABCD')}"
        if req.tag is RequestTag.EXTRACTION:
            return req.user_messages[0].rsplit("option ", 1)[-1][:1]
        if req.tag is RequestTag.VOTE:
            if tie_mode:
                return str(req.agent + 1)
            if protocol is Protocol.RANKED_VOTING:
                order = list(range(1, n + 1))
                r.shuffle(order)
                return " ".join(map(str, order))
            if protocol is Protocol.APPROVAL_VOTING:
                return ", ".join(str(k) for k in range(1, n + 1) if r.random() < 0.5) or "1"
            if protocol is Protocol.CUMULATIVE_VOTING:
                return "{" + f'"{r.randint(1, n)}": 10' + "}"
            return str(r.randint(1, n))
        return None

    return cfg, ScriptedBackend(responder=respond, record=True), tie_mode


@pytest.mark.criterion(7, "paradigm and diversity invariants over 500 randomized debates")
def test_c7_invariants():
    start = time.perf_counter()
    rng = random.Random(1234)
    violations = []
    prompts_with_history = fallbacks = 0
    sample = mc_samples(1)[0]
    task = TaskInstruction("Answer the following question.", "multiple_choice")
    for i in range(500):
        cfg, backend, tie_mode = _random_debate(rng, i)
        debate = Debate(cfg, task, sample, backend, [Persona(f"P{k}") for k in range(cfg.num_agents)],
                        run_index=i, parallel=False)
        outcome, transcript = debate.run()
        for req in backend.requests:
            if req.tag is not RequestTag.DISCUSSION:
                continue
            seen = [(int(a), int(t)) for a, t, _ in _TOKEN.findall(req.text)]
            prompts_with_history += bool(seen)
            t = req.turn
            if cfg.all_agents_draft_first and t == 1 and seen:
                violations.append((i, "AAD turn-1 prompt shows a message"))
            if cfg.discussion_paradigm is Paradigm.COLLECTIVE_REFINEMENT and any(st == t for _, st in seen):
                violations.append((i, "CI prompt shows a same-turn message"))
            if any(st < t - 2 for _, st in seen):
                violations.append((i, f"prompt at turn {t} shows a message from turn {min(s for _, s in seen)}"))
        if cfg.decision_protocol.is_voting and outcome.decided and outcome.decision_turn < 3:
            violations.append((i, f"vote decided at turn {outcome.decision_turn}"))
        if tie_mode:
            fallbacks += outcome.fallback_used
            if outcome.decided or outcome.final_answer != transcript.last_solution_of(0):
                violations.append((i, "universal tie did not fall back to agent 0"))
        if any(m.turn > cfg.max_turns for m in transcript):
            violations.append((i, "message beyond max_turns"))
    assert violations == []
    # the detectors must have had something to look at
    assert prompts_with_history > 1000 and fallbacks == 50
    assert time.perf_counter() - start < 60.0


# --- 8 ---------------------------------------------------------------------------------


class _Fixed:
    def __init__(self, vectors):
        self.vectors = vectors

    def embed(self, texts):
        return [self.vectors[t] for t in texts]


@pytest.mark.criterion(8, "metric hand checks")
def test_c8_metrics():
    start = time.perf_counter()
    answerable = InputSample("a", "q", reference_answers=("Southampton Philharmonic Choir",))
    unanswerable = InputSample("u", "q", context="ctx")
    assert abs(score_squad_f1("Southampton Philharmonic Choir", answerable) - 1.0) < 1e-9
    assert abs(score_squad_f1("[UNKNOWN]", unanswerable) - 1.0) < 1e-9
    assert abs(score_squad_f1("[UNKNOWN]", answerable) - 0.0) < 1e-9
    assert abs(score_squad_f1("southampton choral society", answerable) - 1 / 3) < 1e-9

    assert abs(diversity_score(["same text"] * 3, HashingEmbedder()) - 1.0) < 1e-4
    assert abs(diversity_score(["alpha", "beta"], HashingEmbedder()) - 0.0) < 1e-4
    fixed = _Fixed({"x": (1.0, 0.0), "y": (1.0, 1.0)})
    assert abs(diversity_score(["x", "y"], fixed) - 0.7071) < 1e-4

    spread = run_spread([0.5, 0.6, 0.7], 3)
    assert abs(spread.std - 0.1) < 1e-12
    assert abs(spread.mean - 0.6) < 1e-12
    assert time.perf_counter() - start < 1.0


# --- 9 ---------------------------------------------------------------------------------


@pytest.mark.criterion(9, "protocol-shape statistics with agreeable agents")
def test_c9_protocol_shape(tmp_path):
    start = time.perf_counter()
    samples = mc_samples(20)
    runner = Runner(TaskInstruction("Answer the following question.", "multiple_choice"),
                    agreeable_backend(), clock=lambda: 0.0)
    cells = [Cell("majority", DebateConfig(decision_protocol=Protocol.MAJORITY)),
             Cell("simple_voting", DebateConfig(decision_protocol=Protocol.SIMPLE_VOTING))]
    records = runner.run(cells, samples, tmp_path / "shape.jsonl")
    by_cell = {c.label: aggregate([r for r in records if r.cell == c.label], 3) for c in cells}
    majority, voting = by_cell["majority"], by_cell["simple_voting"]
    assert majority.termination == {"majority": {1: 60}}
    assert voting.termination == {"simple_voting": {3: 60}}
    assert majority.termination_percent("majority") == {1: 100.0}
    assert voting.termination_percent("simple_voting") == {3: 100.0}
    assert majority.mean_termination_turn("majority") < voting.mean_termination_turn("simple_voting")
    assert time.perf_counter() - start < 30.0


# --- 10 --------------------------------------------------------------------------------

LIVE_URL = os.environ.get("DEBATEKIT_LIVE_URL")
LIVE_MODEL = os.environ.get("DEBATEKIT_LIVE_MODEL")

MMLU_STYLE = [
    ("What is the chemical symbol for gold?", ["Ag", "Au", "Gd", "Go"], "B"),
    ("Which planet is closest to the Sun?", ["Venus", "Earth", "Mercury", "Mars"], "C"),
    ("What is 7 multiplied by 8?", ["54", "56", "58", "64"], "B"),
    ("Who wrote 'Pride and Prejudice'?", ["Jane Austen", "Emily Bronte", "Charles Dickens", "Mary Shelley"], "A"),
    ("What is the boiling point of water at sea level in Celsius?", ["90", "100", "110", "120"], "B"),
]


@pytest.mark.criterion(10, "live endpoint smoke run (network-gated)")
@pytest.mark.skipif(not (LIVE_URL and LIVE_MODEL), reason="set DEBATEKIT_LIVE_URL and DEBATEKIT_LIVE_MODEL")
def test_c10_live_smoke(tmp_path):
    samples = [InputSample(f"m{i}", q, choices=tuple(c), reference_answers=(a,))
               for i, (q, c, a) in enumerate(MMLU_STYLE)]
    data = write_dataset(tmp_path / "mmlu.json", samples)
    out = tmp_path / "live.jsonl"
    code = run_experiment(["--input", str(data), "--output", str(out), "--endpoint-url", LIVE_URL,
                           "--model-name", LIVE_MODEL, "--num-samples", "5", "--num-runs", "1",
                           "--concurrent-requests", "8"])
    assert code == 0
    from debatekit.harness.runner import read_records

    records = read_records(out)
    assert len(records) == 5
    assert all(r.error is None and r.final_turn is not None for r in records)
    assert sum(r.decided for r in records) >= 4


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
