"""Joint vs independent optima, budget-equalized search and residual structure."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BudgetTooSmall
from .rng import substream
from .tensor import CellMeanMatrix, ScoreTensor, accurate_mean, cell_means

DEGENERATE_VARIANCE = 1e-12


def _matrix(m) -> np.ndarray:
    arr = m.means if isinstance(m, CellMeanMatrix) else np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    return arr


def joint_optimum(m) -> tuple[int, int]:
    arr = _matrix(m)
    # argmax returns the first maximum in row-major order: lowest (a, b).
    i, j = np.unravel_index(int(np.argmax(arr)), arr.shape)
    return int(i), int(j)


def independent_optimum(m) -> tuple[int, int]:
    arr = _matrix(m)
    return int(np.argmax(accurate_mean(arr, axis=1))), int(np.argmax(accurate_mean(arr, axis=0)))


def optimum_gap(m) -> float:
    arr = _matrix(m)
    gap = float(arr[joint_optimum(arr)] - arr[independent_optimum(arr)])
    return max(gap, 0.0)


def interaction_residuals(m) -> np.ndarray:
    """Double-centered matrix: the part not explained by row and column effects."""
    arr = _matrix(m)
    row = accurate_mean(arr, axis=1)
    col = accurate_mean(arr, axis=0)
    return arr - row[:, None] - col[None, :] + accurate_mean(arr)


class Autocorrelation(NamedTuple):
    rho: float
    degenerate: bool


def neighbor_pairs(r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal then vertical 4-neighbour pairs, each unordered pair once."""
    r = np.asarray(r, dtype=np.float64)
    first = np.concatenate([r[:, :-1].ravel(), r[:-1, :].ravel()])
    second = np.concatenate([r[:, 1:].ravel(), r[1:, :].ravel()])
    return first, second


def neighbor_autocorrelation(r) -> Autocorrelation:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or min(r.shape) < 2:
        raise ValueError(f"need a matrix at least 2x2, got shape {r.shape}")
    if np.var(r) < DEGENERATE_VARIANCE:
        return Autocorrelation(0.0, True)
    x, y = neighbor_pairs(r)
    x = x - x.mean()
    y = y - y.mean()
    sxx, syy = float(x @ x), float(y @ y)
    if sxx < DEGENERATE_VARIANCE * len(x) or syy < DEGENERATE_VARIANCE * len(y):
        return Autocorrelation(0.0, True)
    rho = float(x @ y) / np.sqrt(sxx * syy)
    return Autocorrelation(float(np.clip(rho, -1.0, 1.0)), False)


@dataclass
class LandscapeStats:
    joint_opt: tuple[int, int]
    indep_opt: tuple[int, int]
    gap: float
    autocorr_rho: float
    autocorr_degenerate: bool
    residuals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "joint_opt": list(self.joint_opt),
            "indep_opt": list(self.indep_opt),
            "gap": self.gap,
            "autocorr_rho": self.autocorr_rho,
            "autocorr_degenerate": self.autocorr_degenerate,
            "residuals": self.residuals.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LandscapeStats":
        return cls(
            joint_opt=tuple(d["joint_opt"]),
            indep_opt=tuple(d["indep_opt"]),
            gap=float(d["gap"]),
            autocorr_rho=float(d["autocorr_rho"]),
            autocorr_degenerate=bool(d["autocorr_degenerate"]),
            residuals=np.asarray(d["residuals"], dtype=np.float64),
        )


def analyze_landscape(m) -> LandscapeStats:
    if isinstance(m, ScoreTensor):
        m = cell_means(m)
    arr = _matrix(m)
    resid = interaction_residuals(arr)
    ac = neighbor_autocorrelation(resid)
    return LandscapeStats(
        joint_opt=joint_optimum(arr),
        indep_opt=independent_optimum(arr),
        gap=optimum_gap(arr),
        autocorr_rho=ac.rho,
        autocorr_degenerate=ac.degenerate,
        residuals=resid,
    )


@dataclass
class BudgetCurve:
    budgets: list[int]
    joint_mean: list[float]
    indep_mean: list[float]
    trials: int

    def to_dict(self) -> dict:
        return {
            "budgets": list(self.budgets),
            "joint_mean": list(self.joint_mean),
            "indep_mean": list(self.indep_mean),
            "trials": self.trials,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BudgetCurve":
        return cls(
            budgets=[int(b) for b in d["budgets"]],
            joint_mean=[float(v) for v in d["joint_mean"]],
            indep_mean=[float(v) for v in d["indep_mean"]],
            trials=int(d["trials"]),
        )


def joint_search_trial(scores: np.ndarray, true_means: np.ndarray, budget: int, stream) -> float:
    """Sample ``budget`` distinct (cell, question) evaluations, keep the best cell."""
    k_a, k_b, n = scores.shape
    picks = stream.choice_without_replacement(k_a * k_b * n, budget)
    cells = picks // n
    flat = scores.reshape(-1)
    sums = np.bincount(cells, weights=flat[picks], minlength=k_a * k_b)
    counts = np.bincount(cells, minlength=k_a * k_b)
    est = np.full(k_a * k_b, -np.inf)
    touched = counts > 0
    est[touched] = sums[touched] / counts[touched]
    return float(true_means.reshape(-1)[int(np.argmax(est))])


def _scan(values_for, n_candidates: int, order: np.ndarray, q_order: np.ndarray, spend: int) -> int:
    """Round-robin over candidates; each round uses one shared question."""
    sums = np.zeros(n_candidates)
    counts = np.zeros(n_candidates, dtype=np.int64)
    n = len(q_order)
    for e in range(spend):
        cand = int(order[e % n_candidates])
        q = int(q_order[(e // n_candidates) % n])
        sums[cand] += values_for(cand, q)
        counts[cand] += 1
    est = np.full(n_candidates, -np.inf)
    seen = counts > 0
    est[seen] = sums[seen] / counts[seen]
    return int(np.argmax(est))


def independent_search_trial(scores: np.ndarray, true_means: np.ndarray, budget: int, stream) -> float:
    """Scan A against a random reference B, then scan B with the chosen A."""
    k_a, k_b, n = scores.shape
    ref_b = int(stream.integers(k_b, 1)[0])
    a_order = stream.permutation(k_a)
    b_order = stream.permutation(k_b)
    q_order = stream.permutation(n)
    half = budget // 2
    best_a = _scan(lambda i, q: scores[i, ref_b, q], k_a, a_order, q_order, half)
    best_b = _scan(lambda j, q: scores[best_a, j, q], k_b, b_order, q_order, budget - half)
    return float(true_means[best_a, best_b])


def budget_simulation(t: ScoreTensor, budgets: Sequence[int], trials: int = 1000, seed: int = 0) -> BudgetCurve:
    """Expected true cell mean reached by joint vs independent search per budget.

    Each (trial, budget) pair draws from its own substream of ``seed`` so the
    result does not depend on evaluation order.
    """
    if not isinstance(t, ScoreTensor):
        t = ScoreTensor(t)
    scores = t.scores
    total = int(np.prod(scores.shape))
    budgets = [int(b) for b in budgets]
    if not budgets:
        raise BudgetTooSmall("at least one budget is required")
    for b in budgets:
        if b < 2:
            raise BudgetTooSmall(f"budget {b} < 2: each search phase needs one evaluation")
        if b > total:
            raise ValueError(f"budget {b} exceeds the {total} available evaluations")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    true_means = cell_means(t).means
    joint, indep = [], []
    for b in budgets:
        js = np.empty(trials)
        ins = np.empty(trials)
        for trial in range(trials):
            js[trial] = joint_search_trial(scores, true_means, b, substream(seed, "joint", trial, b))
            ins[trial] = independent_search_trial(scores, true_means, b, substream(seed, "indep", trial, b))
        joint.append(float(js.mean()))
        indep.append(float(ins.mean()))
    return BudgetCurve(budgets=budgets, joint_mean=joint, indep_mean=indep, trials=trials)
