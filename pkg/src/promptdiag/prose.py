"""Structured evolutionary prompt optimization.

Prompts are evolved as five components (role, task, constraints, examples,
format) by six operators whose sampling weights adapt to the fitness of the
offspring they produce. Candidates are ranked by a risk-adjusted fitness that
mixes mean score with a consistency term (normalized Sharpe ratio) and a
worst-tail term (CVaR of the per-question scores).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import TransformerFailure
from .prompts import COMPONENTS, StructuredPrompt, decompose_prompt, prompt_digest
from .rng import substream
from .transform import RuleTransformer

log = logging.getLogger(__name__)

OPERATORS = (
    "targeted_mutation",
    "llm_crossover",
    "random_mutation",
    "exploration",
    "simplification",
    "random_generation",
)
INITIAL_WEIGHTS = (0.25, 0.20, 0.20, 0.15, 0.15, 0.05)

MEAN_WEIGHT = 0.70
SHARPE_WEIGHT = 0.15
DRO_WEIGHT = 0.15
SHARPE_EPS = 1e-6
IMPROVEMENT_EPS = 1e-9

SEED_TEMPERATURES = (0.3, 0.7, 1.0, 1.3)


# --- fitness ------------------------------------------------------------------

@dataclass(frozen=True)
class FitnessBreakdown:
    mean_score: float
    sharpe_norm: float
    dro_norm: float
    fitness: float
    per_question_scores: tuple[float, ...]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_question_scores"] = list(self.per_question_scores)
        return d


@dataclass(frozen=True)
class PopulationStats:
    sharpe_min: float
    sharpe_max: float
    size: int


def combine_fitness(mean_score: float, sharpe_norm: float, dro_norm: float) -> float:
    return MEAN_WEIGHT * mean_score + SHARPE_WEIGHT * sharpe_norm + DRO_WEIGHT * dro_norm


def sharpe_raw(scores) -> float:
    s = np.asarray(scores, dtype=np.float64) / 100.0
    return float(s.mean() / (s.std() + SHARPE_EPS))


def tail_mean(scores, fraction: float = 0.2) -> float:
    """Mean of the worst ``ceil(fraction * n)`` scores, on the 0-1 scale."""
    s = np.sort(np.asarray(scores, dtype=np.float64))
    k = max(1, math.ceil(fraction * len(s) - 1e-12))
    return float(s[:k].mean() / 100.0)


def population_stats(score_lists: Sequence) -> PopulationStats:
    srs = [sharpe_raw(s) for s in score_lists]
    return PopulationStats(min(srs), max(srs), len(srs))


def fitness(scores, population: PopulationStats | None = None, tail_fraction: float = 0.2) -> FitnessBreakdown:
    """Risk-adjusted fitness of one candidate within its population.

    The Sharpe term is min-max normalized across the population; a lone
    candidate, or a population with no Sharpe spread, gets 0.5.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("fitness needs at least one score")
    mean = float(s.mean() / 100.0)
    sr = sharpe_raw(s)
    if population is None or population.size <= 1 or population.sharpe_max - population.sharpe_min < 1e-12:
        sharpe_norm = 0.5
    else:
        sharpe_norm = (sr - population.sharpe_min) / (population.sharpe_max - population.sharpe_min)
        sharpe_norm = min(1.0, max(0.0, sharpe_norm))
    dro = tail_mean(s, tail_fraction)
    return FitnessBreakdown(mean, sharpe_norm, dro, combine_fitness(mean, sharpe_norm, dro),
                            tuple(float(v) for v in s))


def population_fitness(score_lists: Sequence, tail_fraction: float = 0.2) -> list[FitnessBreakdown]:
    stats = population_stats(score_lists)
    return [fitness(s, stats, tail_fraction) for s in score_lists]


# --- operator weights ---------------------------------------------------------

def floor_and_normalize(weights: dict[str, float], floor: float) -> dict[str, float]:
    """Scale to sum 1 while holding every weight at or above ``floor``."""
    if floor * len(weights) > 1 + 1e-12:
        raise ValueError("floor too large for the number of operators")
    w = {k: max(0.0, float(v)) for k, v in weights.items()}
    pinned: set[str] = set()
    for _ in range(len(w) + 1):
        free = [k for k in w if k not in pinned]
        free_mass = sum(w[k] for k in free)
        target_mass = 1.0 - floor * len(pinned)
        if free_mass <= 0:
            share = target_mass / len(free) if free else 0.0
            scaled = {k: share for k in free}
        else:
            scaled = {k: w[k] * target_mass / free_mass for k in free}
        low = {k for k, v in scaled.items() if v < floor}
        if not low:
            out = {k: (floor if k in pinned else scaled[k]) for k in w}
            return out
        pinned |= low
    return {k: (floor if k in pinned else w[k]) for k in w}


@dataclass
class OperatorWeights:
    weights: dict[str, float] = field(default_factory=lambda: dict(zip(OPERATORS, INITIAL_WEIGHTS)))
    blend_rate: float = 0.3
    floor: float = 0.02

    def __post_init__(self):
        if set(self.weights) != set(OPERATORS):
            raise ValueError("weights must cover exactly the six operators")
        total = sum(self.weights.values())
        if abs(total - 1.0) > 1e-9 or min(self.weights.values()) < self.floor - 1e-12:
            raise ValueError("weights must sum to 1 and respect the floor")

    def probabilities(self) -> np.ndarray:
        return np.array([self.weights[op] for op in OPERATORS])

    def to_dict(self) -> dict:
        return {op: self.weights[op] for op in OPERATORS}


def blend(old: float, target: float, rate: float = 0.3) -> float:
    return (1.0 - rate) * old + rate * target


def weight_targets(w: OperatorWeights, offspring_fitness_by_operator: dict[str, Sequence[float]]) -> dict[str, float]:
    """Targets proportional to mean offspring fitness.

    Operators without offspring keep their current weight as target; the mass
    of the operators that did produce offspring is redistributed among them
    in proportion to their mean offspring fitness.
    """
    means = {op: float(np.mean(v)) for op, v in offspring_fitness_by_operator.items() if len(v)}
    target = dict(w.weights)
    total = sum(means.values())
    if not means or total <= 0:
        return target
    mass = sum(w.weights[op] for op in means)
    for op, m in means.items():
        target[op] = mass * m / total
    return target


def update_weights(w: OperatorWeights, offspring_fitness_by_operator: dict[str, Sequence[float]]) -> OperatorWeights:
    target = weight_targets(w, offspring_fitness_by_operator)
    mixed = {op: blend(w.weights[op], target[op], w.blend_rate) for op in OPERATORS}
    return OperatorWeights(floor_and_normalize(mixed, w.floor), w.blend_rate, w.floor)


# --- operators ----------------------------------------------------------------

def _component_draw(seed: int) -> str:
    return COMPONENTS[int(substream(seed, "component").integers(len(COMPONENTS), 1)[0])]


def apply_operator(op_name: str, parents: Sequence[StructuredPrompt], transformer, seed: int, *,
                   task_description: str = "", component: str | None = None) -> StructuredPrompt:
    """Produce one offspring.

    ``component`` pins the component touched by the two mutation operators;
    by default it is drawn from ``seed``.
    """
    needed = {"llm_crossover": 2, "random_generation": 0}.get(op_name, 1)
    if op_name not in OPERATORS:
        raise KeyError(op_name)
    if len(parents) < needed:
        raise ValueError(f"{op_name} needs {needed} parent(s), got {len(parents)}")

    if op_name == "random_generation":
        return transformer.generate(task_description, seed=seed)
    p = parents[0]
    if op_name in ("targeted_mutation", "random_mutation"):
        c = component or _component_draw(seed)
        strength = 0.4 if op_name == "targeted_mutation" else 1.3
        new = transformer.rewrite(c, p.get(c), strength=strength, seed=seed)
        if c == "task" and not new.strip():
            raise TransformerFailure("mutation produced an empty task")
        return p.with_component(c, new)
    if op_name == "llm_crossover":
        q = parents[1]
        if getattr(transformer, "llm_backed", False) and hasattr(transformer, "crossover"):
            return transformer.crossover(p, q, seed=seed)
        picks = substream(seed, "crossover").uniform(len(COMPONENTS)) < 0.5
        return StructuredPrompt(**{c: (q.get(c) if take_q else p.get(c)) for c, take_q in zip(COMPONENTS, picks)})
    if op_name == "exploration":
        return transformer.explore(p, seed=seed)
    # simplification
    fields_ = {c: transformer.simplify(c, p.get(c), seed=seed) if p.get(c).strip() else p.get(c)
               for c in COMPONENTS}
    if not fields_["task"].strip():
        fields_["task"] = p.task
    return StructuredPrompt(**fields_)


# --- evolution ----------------------------------------------------------------

@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 20
    elite_count: int = 5
    min_generations: int = 5
    stagnation_limit: int = 4
    seed_count: int = 20
    seed_keep: int = 10
    seed: int = 0
    budget_cap: int = 100
    tail_fraction: float = 0.2
    max_generations: int = 100

    def __post_init__(self):
        if not 0 <= self.elite_count < self.population_size:
            raise ValueError("elite_count must be < population_size")
        if not 1 <= self.seed_keep <= self.seed_count:
            raise ValueError("seed_keep must be in [1, seed_count]")
        if self.budget_cap < 1:
            raise ValueError("budget_cap must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        conv = {f: (float if f == "tail_fraction" else int) for f in cls.__dataclass_fields__}
        return cls(**{k: conv[k](v) for k, v in d.items() if k in conv})


class StoppingRule:
    """Stop once ``min_generations`` have run and the best has stalled ``stagnation_limit`` times."""

    def __init__(self, min_generations: int = 5, stagnation_limit: int = 4):
        self.min_generations = min_generations
        self.stagnation_limit = stagnation_limit
        self.generation = 0
        self.stagnation = 0

    def update(self, improved: bool) -> bool:
        self.generation += 1
        self.stagnation = 0 if improved else self.stagnation + 1
        return self.generation >= self.min_generations and self.stagnation >= self.stagnation_limit


def stopping_generation(improvements: Sequence[bool], min_generations: int = 5, stagnation_limit: int = 4,
                        max_generations: int = 1000) -> int | None:
    """Generation after which the rule stops, given per-generation improvement flags.

    Generations past the end of ``improvements`` count as non-improving.
    """
    rule = StoppingRule(min_generations, stagnation_limit)
    for g in range(max_generations):
        improved = improvements[g] if g < len(improvements) else False
        if rule.update(bool(improved)):
            return rule.generation
    return None


@dataclass
class Candidate:
    prompt: StructuredPrompt
    scores: np.ndarray
    origin: str
    generation: int
    breakdown: FitnessBreakdown | None = None

    @property
    def text(self) -> str:
        return self.prompt.flatten()

    @property
    def fitness(self) -> float:
        return self.breakdown.fitness if self.breakdown else 0.0

    @property
    def train_score(self) -> float:
        return float(np.mean(self.scores))


@dataclass
class GenerationRecord:
    generation: int
    evaluations: int
    weights_before: dict
    weights_after: dict
    operator_counts: dict
    best_fitness: float
    best_ever_fitness: float
    improved: bool
    stagnation: int
    members: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvolutionResult:
    best: Candidate
    train_score: float
    holdout_score: float | None
    history: list[GenerationRecord]
    evaluations: int
    budget_exhausted: bool
    stop_reason: str
    seeds: list[Candidate] = field(default_factory=list)
    initial: GenerationRecord | None = None

    @property
    def generations(self) -> int:
        return len(self.history)


class _Budgeted:
    """Wraps the evaluator: memoizes by prompt text and enforces the cap."""

    def __init__(self, evaluator: Callable[[str], Sequence[float]], cap: int):
        self.evaluator = evaluator
        self.cap = cap
        self.used = 0
        self._cache: dict[str, np.ndarray] = {}

    def exhausted(self) -> bool:
        return self.used >= self.cap

    def __call__(self, text: str) -> np.ndarray | None:
        if text in self._cache:
            return self._cache[text]
        if self.exhausted():
            return None
        scores = np.asarray(self.evaluator(text), dtype=np.float64)
        if scores.size == 0:
            raise ValueError("evaluator returned no scores")
        self.used += 1
        self._cache[text] = scores
        return scores


def _rank(pop: list[Candidate], tail_fraction: float) -> list[Candidate]:
    for c, b in zip(pop, population_fitness([c.scores for c in pop], tail_fraction)):
        c.breakdown = b
    # Stable: earlier members win exact ties.
    return sorted(pop, key=lambda c: -c.fitness)


def _seed_prompts(baseline: str, task_description: str, transformer, cfg: EvolutionConfig):
    out = [("seed:baseline", decompose_prompt(baseline, transformer))]
    for i in range(1, cfg.seed_count):
        temp = SEED_TEMPERATURES[i % len(SEED_TEMPERATURES)]
        seed = cfg.seed * 7919 + i
        try:
            if i % 2:
                text = transformer.paraphrase(baseline, seed=seed, temperature=temp)
                out.append((f"seed:flat-decompose@{temp}", decompose_prompt(text, transformer)))
            else:
                out.append((f"seed:generate@{temp}", transformer.generate(task_description, seed=seed,
                                                                           temperature=temp)))
        except TransformerFailure as exc:
            log.warning("seed %d skipped: %s", i, exc)
    return out


def _record(gen, evaluations, before: OperatorWeights, after: OperatorWeights, counts, population,
            best_ever, improved, stagnation) -> GenerationRecord:
    return GenerationRecord(
        generation=gen,
        evaluations=evaluations,
        weights_before=before.to_dict(),
        weights_after=after.to_dict(),
        operator_counts=dict(counts),
        best_fitness=population[0].fitness,
        best_ever_fitness=best_ever,
        improved=improved,
        stagnation=stagnation,
        members=[{"digest": prompt_digest(c.text)[:16], "origin": c.origin, "generation": c.generation,
                  "breakdown": c.breakdown.to_dict()} for c in population],
    )


def evolve(baseline_prompt: str, task_description: str, evaluator: Callable[[str], Sequence[float]],
           cfg: EvolutionConfig | None = None, transformer=None,
           holdout: Callable[[str], Sequence[float]] | None = None,
           on_generation: Callable[[GenerationRecord], None] | None = None) -> EvolutionResult:
    """Evolve a prompt against ``evaluator`` (prompt text -> per-question scores).

    ``on_generation`` receives a record for the seeded population
    (generation 0) and then one per generation. Evaluations are counted per
    distinct prompt text and capped at
    ``cfg.budget_cap``; when the cap cuts a generation short the partial
    offspring batch is still ranked, and the run stops flagged as exhausted.
    """
    cfg = cfg or EvolutionConfig()
    transformer = transformer or RuleTransformer(task_description)
    budget = _Budgeted(evaluator, cfg.budget_cap)

    seeds: list[Candidate] = []
    for origin, prompt in _seed_prompts(baseline_prompt, task_description, transformer, cfg):
        scores = budget(prompt.flatten())
        if scores is None:
            break
        seeds.append(Candidate(prompt, scores, origin, 0))
    if not seeds:
        raise ValueError("budget too small to evaluate a single seed")
    population = _rank(seeds, cfg.tail_fraction)[: cfg.seed_keep]
    pad = 0
    while len(population) < cfg.population_size and not budget.exhausted():
        try:
            child = apply_operator("random_generation", [], transformer, seed=cfg.seed * 104729 + pad,
                                   task_description=task_description)
        except TransformerFailure as exc:
            log.warning("padding candidate skipped: %s", exc)
            pad += 1
            continue
        pad += 1
        scores = budget(child.flatten())
        if scores is None:
            break
        population.append(Candidate(child, scores, "random_generation", 0))
        if pad > 10 * cfg.population_size:
            break
    population = _rank(population, cfg.tail_fraction)
    best = population[0]
    best_ever = best.fitness

    weights = OperatorWeights()
    initial = _record(0, budget.used, weights, weights, {op: 0 for op in OPERATORS}, population, best_ever,
                      False, 0)
    if on_generation is not None:
        on_generation(initial)
    rule = StoppingRule(cfg.min_generations, cfg.stagnation_limit)
    history: list[GenerationRecord] = []
    stop_reason = "budget" if budget.exhausted() else ""
    gen = 0
    while not stop_reason:
        gen += 1
        elites = population[: cfg.elite_count]
        # The epsilon keeps zero-fitness members selectable, so two distinct parents always exist.
        probs = np.array([max(c.fitness, 0.0) + 1e-12 for c in population])
        probs = probs / probs.sum()
        offspring: list[Candidate] = []
        counts = {op: 0 for op in OPERATORS}
        for slot in range(cfg.population_size - len(elites)):
            g = substream(cfg.seed, "gen", gen, slot).generator()
            op = OPERATORS[int(g.choice(len(OPERATORS), p=weights.probabilities()))]
            if op == "llm_crossover" and len(population) < 2:
                op = "targeted_mutation"
            n_par = {"llm_crossover": 2, "random_generation": 0}.get(op, 1)
            idx = g.choice(len(population), size=n_par, replace=False, p=probs) if n_par else []
            parents = [population[int(i)].prompt for i in idx]
            try:
                child = apply_operator(op, parents, transformer, seed=int(g.integers(2**62)),
                                       task_description=task_description)
            except TransformerFailure as exc:
                log.warning("offspring skipped (%s): %s", op, exc)
                continue
            scores = budget(child.flatten())
            if scores is None:
                stop_reason = "budget"
                break
            counts[op] += 1
            offspring.append(Candidate(child, scores, op, gen))

        population = _rank(elites + offspring, cfg.tail_fraction)
        by_op: dict[str, list[float]] = {}
        for c in offspring:
            by_op.setdefault(c.origin, []).append(c.fitness)
        before = weights
        weights = update_weights(weights, by_op)

        top_child = max(offspring, key=lambda c: c.fitness, default=None)
        improved = top_child is not None and top_child.fitness > best_ever + IMPROVEMENT_EPS
        if improved:
            best, best_ever = top_child, top_child.fitness
        if rule.update(improved):
            stop_reason = stop_reason or "converged"
        if budget.exhausted() and not stop_reason:
            stop_reason = "budget"
        if gen >= cfg.max_generations and not stop_reason:
            stop_reason = "max_generations"

        record = _record(gen, budget.used, before, weights, counts, population, best_ever, improved,
                         rule.stagnation)
        history.append(record)
        if on_generation is not None:
            on_generation(record)

    holdout_score = float(np.mean(holdout(best.text))) if holdout is not None else None
    return EvolutionResult(
        best=best,
        train_score=best.train_score,
        holdout_score=holdout_score,
        history=history,
        evaluations=budget.used,
        budget_exhausted=stop_reason == "budget",
        stop_reason=stop_reason,
        seeds=seeds,
        initial=initial,
    )
