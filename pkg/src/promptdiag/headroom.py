"""Headroom test, generate-and-rank and the coin-flip binomial check."""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .executor import DEFAULT_RUBRIC, Executor
from .grid import Question, as_questions
from .prompts import prompt_digest
from .special import binom_two_sided_half

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 2.0
DEFAULT_HELDOUT = 20
TIE_TOLERANCE = 1e-9


class PromptScorer:
    """Per-question judge scores for one agent's prompt, the other agent held fixed.

    ``agent="B"`` with no partner scores a single-agent pipeline. Results are
    memoized by prompt text, and ``evaluations`` counts distinct prompts scored.
    """

    def __init__(self, executor: Executor, questions, agent: str = "B", partner: str | None = None,
                 rubric: str = DEFAULT_RUBRIC):
        agent = agent.upper()
        if agent not in ("A", "B"):
            raise ValueError("agent must be 'A' or 'B'")
        if agent == "A" and partner is None:
            raise ValueError("scoring agent A needs a fixed agent-B partner prompt")
        self.executor = executor
        self.questions: list[Question] = as_questions(questions)
        if not self.questions:
            raise ValueError("need at least one question")
        self.agent = agent
        self.partner = partner
        self.rubric = rubric
        self.evaluations = 0
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @property
    def question_digest(self) -> str:
        payload = json.dumps([[q.id, q.input] for q in self.questions])
        return hashlib.sha256(payload.encode()).hexdigest()

    def _one(self, prompt: str, q: Question) -> float:
        if self.agent == "A":
            pa, pb = prompt, self.partner
        else:
            pa, pb = self.partner, prompt
        value, _, _ = self.executor.evaluate(pa, pb, q.id, q.input, self.rubric)
        return value

    def __call__(self, prompt: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(prompt)
        if hit is not None:
            return hit.copy()
        workers = min(self.executor.cfg.max_concurrency, len(self.questions))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                values = list(pool.map(lambda q: self._one(prompt, q), self.questions))
        else:
            values = [self._one(prompt, q) for q in self.questions]
        arr = np.asarray(values, dtype=np.float64)
        with self._lock:
            if prompt not in self._cache:
                self._cache[prompt] = arr
                self.evaluations += 1
        return arr.copy()


@dataclass
class HeadroomReport:
    zero_shot_score: float
    candidate_scores: list[tuple[str, float]]
    best_gain: float
    threshold: float
    decision: str
    n_questions: int
    best_candidate: str = ""
    agent: str = "B"
    question_digest: str = ""
    rubric_digest: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidate_scores"] = [list(c) for c in self.candidate_scores]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HeadroomReport":
        d = dict(d)
        d["candidate_scores"] = [(str(a), float(b)) for a, b in d["candidate_scores"]]
        return cls(**d)

    def summary(self) -> str:
        return (f"{self.decision}: best candidate {self.best_gain:+.2f} pts over zero-shot "
                f"({self.zero_shot_score:.2f}) on {self.n_questions} questions, threshold {self.threshold:g}")


def headroom_decision(best_gain: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return "OPTIMIZE" if best_gain > threshold else "FLAT"


def headroom_from_scores(zero_shot: float, candidate_scores, threshold: float = DEFAULT_THRESHOLD,
                         n_questions: int = 0) -> HeadroomReport:
    """Decision from already-computed mean scores."""
    cands = [(str(d), float(s)) for d, s in candidate_scores]
    if not cands:
        raise ValueError("need at least one candidate score")
    best_digest, best = max(cands, key=lambda c: c[1])
    gain = best - float(zero_shot)
    return HeadroomReport(
        zero_shot_score=float(zero_shot),
        candidate_scores=cands,
        best_gain=gain,
        threshold=float(threshold),
        decision=headroom_decision(gain, threshold),
        n_questions=n_questions,
        best_candidate=best_digest,
    )


def headroom_test(baseline_prompt: str, candidates, questions=None, executor: Executor | None = None, *,
                  agent: str = "B", partner: str | None = None, rubric: str = DEFAULT_RUBRIC,
                  threshold: float = DEFAULT_THRESHOLD, scorer: PromptScorer | None = None) -> HeadroomReport:
    """Score the baseline and every candidate on one question set and apply the threshold."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("need at least one candidate prompt")
    if scorer is None:
        if executor is None or questions is None:
            raise ValueError("pass either a scorer or questions and an executor")
        scorer = PromptScorer(executor, questions, agent=agent, partner=partner, rubric=rubric)
    warnings = []
    if not 10 <= len(candidates) <= 20:
        warnings.append(f"{len(candidates)} candidates; 10-20 is the recommended range")
    if len(scorer.questions) != DEFAULT_HELDOUT:
        warnings.append(f"{len(scorer.questions)} held-out questions; {DEFAULT_HELDOUT} is the default")
    for w in warnings:
        log.warning(w)
    zero_shot = float(np.mean(scorer(baseline_prompt)))
    scored = [(prompt_digest(c), float(np.mean(scorer(c)))) for c in candidates]
    report = headroom_from_scores(zero_shot, scored, threshold, n_questions=len(scorer.questions))
    report.agent = scorer.agent
    report.question_digest = scorer.question_digest
    report.rubric_digest = prompt_digest(scorer.rubric)
    report.warnings = warnings
    return report


@dataclass
class RankedPrompt:
    prompt: str
    score: float
    baseline_score: float
    candidates: list[tuple[str, float]]
    is_baseline: bool


def generate_and_rank(baseline_prompt: str, transformer, m: int, questions=None, executor: Executor | None = None,
                      *, seed: int = 0, agent: str = "B", partner: str | None = None,
                      rubric: str = DEFAULT_RUBRIC, scorer: PromptScorer | None = None) -> RankedPrompt:
    """Generate ``m`` variations, score each once, return the best.

    The baseline wins unless a candidate beats it by more than 1e-9 points.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if scorer is None:
        if executor is None or questions is None:
            raise ValueError("pass either a scorer or questions and an executor")
        scorer = PromptScorer(executor, questions, agent=agent, partner=partner, rubric=rubric)
    base_score = float(np.mean(scorer(baseline_prompt)))
    ranked = [(baseline_prompt, base_score)]
    for i in range(m):
        text = transformer.paraphrase(baseline_prompt, seed=seed * 1000 + i)
        ranked.append((text, float(np.mean(scorer(text)))))
    best = 0
    for idx, (_, score) in enumerate(ranked[1:], start=1):
        if score > ranked[best][1] + TIE_TOLERANCE:
            best = idx
    return RankedPrompt(ranked[best][0], ranked[best][1], base_score, ranked, is_baseline=best == 0)


def coin_flip_test(below_count: int, total_runs: int) -> float:
    """Exact two-sided binomial p-value of ``below_count`` failures in ``total_runs`` fair flips."""
    return binom_two_sided_half(below_count, total_runs)
