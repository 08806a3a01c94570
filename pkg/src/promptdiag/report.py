"""Two-stage diagnosis (coupling test, then headroom test) and its text rendering."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .anova import AnovaTable, decompose, significance_stars
from .executor import DEFAULT_RUBRIC, Executor
from .grid import CALLS_PER_CELL, GridStore, as_questions, estimate_cost, run_grid
from .headroom import DEFAULT_THRESHOLD, HeadroomReport, headroom_test
from .landscape import BudgetCurve, LandscapeStats, analyze_landscape
from .transform import RuleTransformer

log = logging.getLogger(__name__)

ALPHA = 0.05
# 9,000 calls for the default 10x10x30 grid come to about $80.
DEFAULT_PRICE_PER_CALL = 0.0089
DEFAULT_GRID = (10, 10, 30)
DEFAULT_CANDIDATES = 10
DEFAULT_HELDOUT_QUESTIONS = 20
DEFAULT_RANK_CANDIDATES = 25
DEFAULT_RANK_QUESTIONS = 30

TABLE_COLUMNS = ("Q", "A", "B", "A×B", "Err")
_SOURCE_FOR_COLUMN = {"Q": "Question", "A": "A", "B": "B", "A×B": "AxB", "Err": "Error"}


def coupling_verdict(table: AnovaTable, alpha: float = ALPHA) -> str:
    p = table["AxB"].p
    return "COUPLED" if p is not None and p < alpha else "DECOUPLED"


def bottleneck_agent(table: AnovaTable, alpha: float = ALPHA) -> str:
    """Agent with the smaller main-effect p, if that p is significant; larger F breaks ties."""
    a, b = table["A"], table["B"]
    pick = min((a, "A"), (b, "B"), key=lambda r: (r[0].p, -(r[0].f or 0.0)))
    return pick[1] if pick[0].p < alpha else "neither"


@dataclass
class DiagnosisReport:
    anova: AnovaTable
    landscape: LandscapeStats
    verdict: str
    bottleneck: str
    stage2: HeadroomReport | None
    stage2_agent: str
    recommendation: list[str]
    cost_actual: dict
    model_id: str
    started_at: str = ""
    finished_at: str = ""
    alpha: float = ALPHA

    @property
    def exit_code(self) -> int:
        return 2 if self.verdict == "COUPLED" else 0

    def to_dict(self) -> dict:
        return {
            "stage1": {
                "anova": self.anova.to_dict(),
                "landscape": self.landscape.to_dict(),
                "verdict": self.verdict,
                "bottleneck": self.bottleneck,
                "alpha": self.alpha,
            },
            "stage2": self.stage2.to_dict() if self.stage2 else None,
            "stage2_agent": self.stage2_agent,
            "recommendation": list(self.recommendation),
            "cost_actual": dict(self.cost_actual),
            "model_id": self.model_id,
            "timestamps": {"started": self.started_at, "finished": self.finished_at},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosisReport":
        s1 = d["stage1"]
        return cls(
            anova=AnovaTable.from_dict(s1["anova"]),
            landscape=LandscapeStats.from_dict(s1["landscape"]),
            verdict=s1["verdict"],
            bottleneck=s1["bottleneck"],
            stage2=HeadroomReport.from_dict(d["stage2"]) if d.get("stage2") else None,
            stage2_agent=d.get("stage2_agent", ""),
            recommendation=list(d["recommendation"]),
            cost_actual=dict(d["cost_actual"]),
            model_id=d.get("model_id", ""),
            started_at=d.get("timestamps", {}).get("started", ""),
            finished_at=d.get("timestamps", {}).get("finished", ""),
            alpha=float(s1.get("alpha", ALPHA)),
        )


def recommend(table: AnovaTable, verdict: str, bottleneck: str, stage2: HeadroomReport | None,
              stage2_agent: str) -> list[str]:
    lines = []
    axb = table["AxB"]
    if verdict == "COUPLED":
        lines.append(f"Agent prompts interact (A×B F = {axb.f:.3g}, p = {axb.p:.3g}). Optimize the pipeline "
                     "jointly with an end-to-end method such as pipeline compilation or textual gradients; "
                     "per-agent tuning can miss the joint optimum.")
    else:
        lines.append(f"No significant interaction (A×B F = {axb.f:.3g}, p = {axb.p:.3g}). "
                     "Optimize agents independently; joint optimization is not needed.")
        if bottleneck == "neither":
            lines.append("Neither main effect is significant; Stage 2 tested Agent B, which produces the "
                         "final output.")
        else:
            lines.append(f"Agent {bottleneck} is the bottleneck (main-effect p = {table[bottleneck].p:.3g}).")
    if stage2 is not None:
        if stage2.decision == "OPTIMIZE":
            lines.append(f"Agent {stage2_agent} has headroom: best candidate gains {stage2.best_gain:+.2f} pts. "
                         "Look for the \"can but doesn't\" pattern, an output format or structure the model "
                         "produces when asked but not by default, and optimize with generate-and-rank.")
        else:
            lines.append(f"Agent {stage2_agent} shows no headroom (best gain {stage2.best_gain:+.2f} pts, "
                         f"threshold {stage2.threshold:g}): the landscape is flat, use zero-shot.")
    lines.append("Re-run both stages after every model update; which agents and tasks benefit can change "
                 "with the model.")
    return lines


def diagnose(prompts_a, prompts_b, questions, executor: Executor, store, *, heldout=None, candidates=None,
             transformer=None, task_description: str = "", threshold: float = DEFAULT_THRESHOLD,
             n_candidates: int = DEFAULT_CANDIDATES, alpha: float = ALPHA, seed: int = 0,
             rubric: str = DEFAULT_RUBRIC, price_per_call: float = DEFAULT_PRICE_PER_CALL) -> DiagnosisReport:
    """Stage 1 on the full grid; Stage 2 on the bottleneck agent when decoupled.

    The first prompt of each agent's list is its zero-shot baseline. Stage 2
    scores agent A with B's baseline downstream, and agent B behind A's
    baseline. Without explicit ``candidates`` it generates ``n_candidates``
    paraphrases of the baseline.
    """
    started = datetime.now(timezone.utc).isoformat()
    prompts_a, prompts_b = list(prompts_a), list(prompts_b)
    calls_before = executor.cost()["calls"]
    tensor, _ = run_grid(prompts_a, prompts_b, questions, executor, store if isinstance(store, GridStore)
                         else GridStore(store), seed=seed, rubric=rubric)
    table = decompose(tensor)
    land = analyze_landscape(tensor)
    verdict = coupling_verdict(table, alpha)
    bottleneck = bottleneck_agent(table, alpha)

    stage2 = None
    agent = "A" if bottleneck == "A" else "B"
    if verdict == "DECOUPLED":
        baseline = prompts_a[0] if agent == "A" else prompts_b[0]
        partner = prompts_b[0] if agent == "A" else prompts_a[0]
        held = as_questions(heldout) if heldout is not None else as_questions(questions)
        if candidates is None:
            tr = transformer or RuleTransformer(task_description)
            candidates = [tr.paraphrase(baseline, seed=seed * 1000 + i) for i in range(n_candidates)]
        stage2 = headroom_test(baseline, candidates, held, executor, agent=agent, partner=partner,
                               rubric=rubric, threshold=threshold)
    calls = executor.cost()["calls"] - calls_before
    return DiagnosisReport(
        anova=table,
        landscape=land,
        verdict=verdict,
        bottleneck=bottleneck,
        stage2=stage2,
        stage2_agent=agent if stage2 is not None else "",
        recommendation=recommend(table, verdict, bottleneck, stage2, agent),
        cost_actual={"calls": calls, "estimated": round(calls * price_per_call, 2),
                     "price_per_call": price_per_call},
        model_id=executor.cfg.model_id,
        started_at=started,
        finished_at=datetime.now(timezone.utc).isoformat(),
        alpha=alpha,
    )


# --- rendering ----------------------------------------------------------------

def _cell(table: AnovaTable, column: str) -> str:
    row = table[_SOURCE_FOR_COLUMN[column]]
    pct = 100.0 * row.share
    if column in ("Q", "Err"):
        return f"{pct:.1f}"
    return f"{pct:.2f}{significance_stars(row.p)}"


def render_anova_row(table: AnovaTable) -> str:
    """Percent shares Q/A/B/A×B/Err; tested sources carry two decimals and stars."""
    return "  ".join(_cell(table, c) for c in TABLE_COLUMNS)


def render_anova_table(table: AnovaTable, model: str = "-", task: str = "-") -> str:
    width = 9
    header = f"{'Model':<14}{'Task':<14}" + "".join(f"{c:>{width}}" for c in TABLE_COLUMNS)
    row = f"{model:<14}{task:<14}" + "".join(f"{_cell(table, c):>{width}}" for c in TABLE_COLUMNS)
    lines = ["Variance decomposition (% of total)", header, row, ""]
    lines.append(f"{'Source':<10}{'SS':>14}{'df':>8}{'MS':>12}{'F':>10}{'p':>10}")
    for name, r in table.rows.items():
        f = "" if r.f is None else f"{r.f:.3f}"
        p = "" if r.p is None else f"{r.p:.4f}"
        lines.append(f"{name:<10}{r.ss:>14.3f}{r.df:>8d}{r.ms:>12.4f}{f:>10}{p:>10}")
    k_a, k_b, n = table.dims
    lines.append(f"Grid {k_a}x{k_b}, n = {n}; total df {table.df_total}.")
    lines.append("Stars: * p<0.05, ** p<0.01, *** p<0.001.")
    return "\n".join(lines)


def cost_rows(dims=DEFAULT_GRID, price_per_call: float = DEFAULT_PRICE_PER_CALL,
              n_candidates: int = DEFAULT_CANDIDATES, heldout: int = DEFAULT_HELDOUT_QUESTIONS,
              rank: tuple[int, int] | None = (DEFAULT_RANK_CANDIDATES, DEFAULT_RANK_QUESTIONS)):
    """``(label, calls, cost)`` per stage; Stage 2 scores the baseline plus each candidate."""
    rows = [("Stage 1: coupling test (grid + ANOVA)",) + tuple(estimate_cost(dims, price_per_call))]
    s2 = estimate_cost((1, n_candidates + 1, heldout), price_per_call)
    rows.append(("Stage 2: headroom test",) + tuple(s2))
    if rank is not None:
        m, q = rank
        rows.append(("  + generate-and-rank",) + tuple(estimate_cost((1, m + 1, q), price_per_call)))
    return rows


def render_cost_table(dims=DEFAULT_GRID, price_per_call: float = DEFAULT_PRICE_PER_CALL, **kw) -> str:
    rows = cost_rows(dims, price_per_call, **kw)
    lines = [f"{'Approach':<40}{'Calls':>10}{'Est. cost':>12}"]
    for label, calls, cost in rows:
        lines.append(f"{label:<40}{calls:>10d}{'$' + format(cost, ',.2f'):>12}")
    lines.append(f"Price per call ${price_per_call:g}; {CALLS_PER_CELL} calls per scored pipeline run.")
    return "\n".join(lines)


def render_landscape(stats: LandscapeStats) -> str:
    rho = "undefined (no residual variance)" if stats.autocorr_degenerate else f"{stats.autocorr_rho:+.3f}"
    return "\n".join([
        f"Joint optimum (A, B):       {tuple(stats.joint_opt)}",
        f"Independent optimum (A, B): {tuple(stats.indep_opt)}",
        f"Optimum gap:                {stats.gap:.3f} pts",
        f"Neighbor autocorrelation:   {rho}",
    ])


def render_budget_curve(curve: BudgetCurve) -> str:
    lines = [f"{'Budget':>8}{'Joint':>10}{'Indep':>10}{'Diff':>10}"]
    for b, j, i in zip(curve.budgets, curve.joint_mean, curve.indep_mean):
        lines.append(f"{b:>8d}{j:>10.3f}{i:>10.3f}{i - j:>+10.3f}")
    lines.append(f"{curve.trials} trials per budget.")
    return "\n".join(lines)


def render_report(report: DiagnosisReport | dict) -> str:
    """Text rendering; depends only on the JSON-serializable content of the report."""
    if isinstance(report, dict):
        report = DiagnosisReport.from_dict(report)
    out = [f"Diagnosis for model {report.model_id}", "",
           "Stage 1: coupling test",
           render_anova_table(report.anova, model=report.model_id), "",
           render_landscape(report.landscape), "",
           f"Verdict: {report.verdict} (alpha {report.alpha:g}); bottleneck: {report.bottleneck}", ""]
    if report.stage2 is not None:
        s2 = report.stage2
        out += ["Stage 2: headroom test", f"Agent {report.stage2_agent}: {s2.summary()}",
                f"Decision: {s2.decision}", ""]
    else:
        out += ["Stage 2: skipped (agents are coupled)", ""]
    out.append("Recommendation")
    out += [f"- {line}" for line in report.recommendation]
    c = report.cost_actual
    out += ["", f"Cost: {c.get('calls', 0)} calls, estimated ${c.get('estimated', 0.0):,.2f}"]
    return "\n".join(out) + "\n"
