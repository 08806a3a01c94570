"""Score tensor data model, question centering and the synthetic generator."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DegenerateDims, DuplicateCell, InvalidTensor, MissingCell, NonFiniteScore
from .rng import STREAMS, Stream


def accurate_mean(x: np.ndarray, axis=None) -> np.ndarray:
    """Mean with one residual-correction pass.

    The second pass removes most of the rounding error of the first, which
    matters when sums of squares are later differenced.
    """
    x = np.asarray(x, dtype=np.float64)
    m = np.mean(x, axis=axis, keepdims=True)
    m = m + np.mean(x - m, axis=axis, keepdims=True)
    if axis is None:
        return m.reshape(())
    return np.squeeze(m, axis=axis)


@dataclass(frozen=True, eq=False)
class ScoreTensor:
    """Scores indexed ``(a_idx, b_idx, q_idx)`` on a complete grid.

    Construction only checks shape and finiteness; the >= 2 levels per axis
    that the F tests need are enforced by :func:`build_tensor` and by the
    ANOVA entry point, so tiny hand-built tensors stay usable for checks.
    """

    scores: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64)
        if s.ndim != 3:
            raise InvalidTensor(f"score tensor must be 3-D, got shape {s.shape}")
        if s.size == 0:
            raise InvalidTensor("score tensor is empty")
        if not np.all(np.isfinite(s)):
            bad = [tuple(int(v) for v in c) for c in np.argwhere(~np.isfinite(s))[:5]]
            raise NonFiniteScore(f"non-finite scores at {bad}")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)

    @property
    def k_a(self) -> int:
        return self.scores.shape[0]

    @property
    def k_b(self) -> int:
        return self.scores.shape[1]

    @property
    def n(self) -> int:
        return self.scores.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.scores.shape

    def require_full_design(self) -> None:
        """Raise unless every axis has at least two levels."""
        if min(self.scores.shape) < 2:
            raise DegenerateDims(f"every dimension must be >= 2, got {self.scores.shape}")

    def __eq__(self, other):
        if not isinstance(other, ScoreTensor):
            return NotImplemented
        return np.array_equal(self.scores, other.scores)

    def records(self) -> Iterable[dict]:
        for (i, j, k), v in np.ndenumerate(self.scores):
            yield {"a": i, "b": j, "q": k, "score": float(v)}


@dataclass(frozen=True, eq=False)
class CenteredTensor:
    """Question-centered scores: every question slice has mean zero."""

    scores: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.scores.shape


@dataclass(frozen=True, eq=False)
class CellMeanMatrix:
    means: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.means.shape


@dataclass(frozen=True)
class SyntheticSpec:
    k_a: int = 10
    k_b: int = 10
    n: int = 30
    question_sd: float = 0.0
    a_sd: float = 0.0
    b_sd: float = 0.0
    interaction_sd: float = 0.0
    noise_sd: float = 0.0
    base: float = 50.0
    seed: int = 0

    def __post_init__(self):
        for name in ("question_sd", "a_sd", "b_sd", "interaction_sd", "noise_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if min(self.k_a, self.k_b, self.n) < 2:
            raise DegenerateDims("k_a, k_b and n must each be >= 2")


def build_tensor(records: Iterable, dims: tuple[int, int, int]) -> ScoreTensor:
    """Assemble a complete tensor from ``(a, b, q, score)`` records.

    Records may be tuples or mappings with keys ``a``, ``b``, ``q``, ``score``
    and may arrive in any order.
    """
    k_a, k_b, n = (int(d) for d in dims)
    if min(k_a, k_b, n) < 2:
        raise DegenerateDims(f"every dimension must be >= 2, got {dims}")
    scores = np.full((k_a, k_b, n), np.nan)
    seen = np.zeros((k_a, k_b, n), dtype=bool)
    for rec in records:
        if isinstance(rec, dict):
            i, j, k, v = rec["a"], rec["b"], rec["q"], rec["score"]
        else:
            i, j, k, v = rec
        i, j, k = int(i), int(j), int(k)
        if not (0 <= i < k_a and 0 <= j < k_b and 0 <= k < n):
            raise InvalidTensor(f"cell {(i, j, k)} outside dims {dims}")
        if seen[i, j, k]:
            raise DuplicateCell((i, j, k))
        v = float(v)
        if not math.isfinite(v):
            raise NonFiniteScore(f"non-finite score {v!r} at {(i, j, k)}")
        seen[i, j, k] = True
        scores[i, j, k] = v
    if not seen.all():
        missing = [tuple(int(c) for c in coord) for coord in np.argwhere(~seen)]
        raise MissingCell(missing)
    return ScoreTensor(scores)


def question_center(t: ScoreTensor | CenteredTensor) -> CenteredTensor:
    s = np.asarray(t.scores, dtype=np.float64)
    qmeans = accurate_mean(s.reshape(-1, s.shape[2]), axis=0)
    return CenteredTensor(s - qmeans[None, None, :])


def cell_means(t: ScoreTensor | CenteredTensor) -> CellMeanMatrix:
    return CellMeanMatrix(accurate_mean(np.asarray(t.scores), axis=2))


def synth_tensor(spec: SyntheticSpec) -> ScoreTensor:
    """Draw ``base + q_k + a_i + b_j + g_ij + e_ijk`` with planted effects.

    Each component comes from its own named stream, so changing one sd
    leaves the draws of the other components untouched. The realized draws
    are kept in ``provenance`` for tests that need true variance shares.
    """
    ka, kb, n = spec.k_a, spec.k_b, spec.n
    q = Stream(spec.seed, STREAMS["question"]).normal(n, spec.question_sd)
    a = Stream(spec.seed, STREAMS["a"]).normal(ka, spec.a_sd)
    b = Stream(spec.seed, STREAMS["b"]).normal(kb, spec.b_sd)
    g = Stream(spec.seed, STREAMS["interaction"]).normal(ka * kb, spec.interaction_sd).reshape(ka, kb)
    e = Stream(spec.seed, STREAMS["noise"]).normal(ka * kb * n, spec.noise_sd).reshape(ka, kb, n)
    y = spec.base + q[None, None, :] + a[:, None, None] + b[None, :, None] + g[:, :, None] + e
    prov = {"spec": spec, "question": q, "a": a, "b": b, "interaction": g, "noise": e}
    return ScoreTensor(y, provenance=prov)


def save_tensor_jsonl(t: ScoreTensor, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in t.records():
            fh.write(json.dumps(rec) + "\n")


def load_tensor_jsonl(path: str | Path, dims: tuple[int, int, int] | None = None) -> ScoreTensor:
    """Load a tensor written one ``{"a","b","q","score"}`` record per line.

    Extra keys are ignored, so a grid store file loads directly. Without
    ``dims`` the shape is inferred from the largest index on each axis.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("status", "done") != "done" or "score" not in rec:
                continue
            records.append((rec["a"], rec["b"], rec["q"], rec["score"]))
    if dims is None:
        if not records:
            raise InvalidTensor(f"{path}: no score records")
        dims = tuple(max(r[axis] for r in records) + 1 for axis in range(3))
    return build_tensor(records, dims)
