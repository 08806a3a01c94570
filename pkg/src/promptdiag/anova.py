"""Question-blocked two-way ANOVA over a prompt grid."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalInconsistency
from .special import f_pvalue
from .tensor import ScoreTensor, accurate_mean, cell_means, question_center

SOURCES = ("Question", "A", "B", "AxB", "Error")
TESTED = ("A", "B", "AxB")

# Negative residual SS within this (relative) band is rounding, beyond it corruption.
SS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SourceRow:
    ss: float
    df: int
    ms: float
    share: float
    f: float | None = None
    p: float | None = None


@dataclass(frozen=True)
class AnovaTable:
    rows: dict[str, SourceRow]
    ss_total: float
    dims: tuple[int, int, int]

    def __getitem__(self, source: str) -> SourceRow:
        return self.rows[source]

    @property
    def df_total(self) -> int:
        k_a, k_b, n = self.dims
        return k_a * k_b * n - 1

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "ss_total": self.ss_total,
            "rows": {name: asdict(self.rows[name]) for name in SOURCES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnovaTable":
        rows = {name: SourceRow(**d["rows"][name]) for name in SOURCES}
        return cls(rows=rows, ss_total=float(d["ss_total"]), dims=tuple(d["dims"]))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "AnovaTable":
        return cls.from_dict(json.loads(text))


def sums_of_squares(scores: np.ndarray) -> dict[str, float]:
    """Sums of squares for Question, A, B, AxB and the total.

    Works for any complete 3-D array, including a single question; the caller
    decides whether the design supports F tests.
    """
    y = np.asarray(scores, dtype=np.float64)
    k_a, k_b, n = y.shape
    grand = accurate_mean(y)
    qmeans = accurate_mean(y.reshape(-1, n), axis=0)
    ss_q = k_a * k_b * float(np.sum((qmeans - grand) ** 2))
    ss_total = float(np.sum((y - grand) ** 2))

    centered = question_center(ScoreTensor(y)).scores
    m = cell_means(ScoreTensor(centered)).means
    row = accurate_mean(m, axis=1)
    col = accurate_mean(m, axis=0)
    cgrand = accurate_mean(m)
    ss_a = n * k_b * float(np.sum((row - cgrand) ** 2))
    ss_b = n * k_a * float(np.sum((col - cgrand) ** 2))
    resid = m - row[:, None] - col[None, :] + cgrand
    ss_ab = n * float(np.sum(resid ** 2))
    return {"Question": ss_q, "A": ss_a, "B": ss_b, "AxB": ss_ab, "total": ss_total}


def degrees_of_freedom(k_a: int, k_b: int, n: int) -> dict[str, int]:
    return {
        "Question": n - 1,
        "A": k_a - 1,
        "B": k_b - 1,
        "AxB": (k_a - 1) * (k_b - 1),
        "Error": (k_a * k_b - 1) * (n - 1),
    }


def decompose(t: ScoreTensor) -> AnovaTable:
    """Blocked two-way ANOVA table with F tests for A, B and AxB."""
    if not isinstance(t, ScoreTensor):
        t = ScoreTensor(t)
    t.require_full_design()
    k_a, k_b, n = t.dims
    ss = sums_of_squares(t.scores)
    ss_total = ss.pop("total")
    ss_error = ss_total - sum(ss.values())
    if ss_error < 0:
        if ss_error < -SS_TOLERANCE * max(1.0, ss_total):
            raise NumericalInconsistency(
                f"residual sum of squares is negative ({ss_error:.3e}) beyond rounding"
            )
        ss_error = 0.0
    ss["Error"] = ss_error
    dfs = degrees_of_freedom(k_a, k_b, n)
    ms = {name: ss[name] / dfs[name] for name in SOURCES}

    rows = {}
    for name in SOURCES:
        share = ss[name] / ss_total if ss_total > 0 else 0.0
        f = p = None
        if name in TESTED:
            if ms["Error"] > 0:
                f = ms[name] / ms["Error"]
                p = f_pvalue(f, dfs[name], dfs["Error"])
            elif ms[name] > 0:
                f, p = float("inf"), 0.0
            else:
                # No variation anywhere: nothing to reject.
                f, p = 0.0, 1.0
        rows[name] = SourceRow(ss=ss[name], df=dfs[name], ms=ms[name], share=share, f=f, p=p)
    return AnovaTable(rows=rows, ss_total=ss_total, dims=(k_a, k_b, n))


def variance_shares(table: AnovaTable) -> list[tuple[str, float]]:
    return [(name, table.rows[name].share) for name in SOURCES]


def significance_stars(p: float | None) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def ms_per_df_note(table: AnovaTable) -> tuple[float, float, float]:
    """Mean squares ``(MS_AxB, MS_A, MS_B)``.

    A large interaction share spread over many degrees of freedom can still
    carry a smaller mean square than a small main-effect share over few.
    """
    return table["AxB"].ms, table["A"].ms, table["B"].ms
