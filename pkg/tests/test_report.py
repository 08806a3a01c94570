import json

import numpy as np
import pytest

from promptdiag.anova import SOURCES, AnovaTable, SourceRow, decompose
from promptdiag.executor import Bonus
from promptdiag.report import (
    DiagnosisReport,
    bottleneck_agent,
    cost_rows,
    coupling_verdict,
    diagnose,
    render_anova_row,
    render_anova_table,
    render_cost_table,
    render_report,
)
from promptdiag.tensor import ScoreTensor

from .conftest import make_executor, prompts, questions


def table(shares, ps, dims=(10, 10, 30)):
    rows = {}
    for name in SOURCES:
        rows[name] = SourceRow(ss=shares[name] * 10, df=1, ms=shares[name] * 10, share=shares[name],
                               f=None if name in ("Question", "Error") else 1.0, p=ps.get(name))
    return AnovaTable(rows=rows, ss_total=1000.0, dims=dims)


def test_table_row_layout():
    t = table({"Question": 0.913, "A": 0.0005, "B": 0.0037, "AxB": 0.0018, "Error": 0.081},
              {"A": 0.03, "B": 0.0002, "AxB": 0.4})
    assert render_anova_row(t) == "91.3  0.05*  0.37***  0.18  8.1"
    text = render_anova_table(t, model="m", task="t")
    assert text.splitlines()[1].split() == ["Model", "Task", "Q", "A", "B", "A×B", "Err"]


def test_all_zero_table_has_no_stars():
    t = decompose(ScoreTensor(np.zeros((2, 2, 2))))
    cells = render_anova_row(t).split()
    assert cells[1:4] == ["0.00", "0.00", "0.00"]
    assert "*" not in render_anova_row(t)


def test_verdict_and_bottleneck_rules():
    base = {"Question": 0.9, "A": 0.01, "B": 0.01, "AxB": 0.01, "Error": 0.07}
    assert coupling_verdict(table(base, {"A": 0.5, "B": 0.5, "AxB": 0.01})) == "COUPLED"
    assert coupling_verdict(table(base, {"A": 0.5, "B": 0.5, "AxB": 0.05})) == "DECOUPLED"
    assert bottleneck_agent(table(base, {"A": 0.04, "B": 0.001, "AxB": 0.5})) == "B"
    assert bottleneck_agent(table(base, {"A": 0.01, "B": 0.02, "AxB": 0.5})) == "A"
    assert bottleneck_agent(table(base, {"A": 0.2, "B": 0.06, "AxB": 0.5})) == "neither"


def test_cost_table_defaults():
    rows = {label.split(":")[0].strip(): cost for label, _, cost in cost_rows()}
    assert rows["Stage 1"] == pytest.approx(80, rel=0.02)
    assert 4 <= rows["Stage 2"] <= 7
    assert 15 <= rows["+ generate-and-rank"] <= 25
    assert "$80.10" in render_cost_table()


def test_cost_table_zero_price_and_linearity():
    assert all(cost == 0 for _, _, cost in cost_rows(price_per_call=0.0))
    assert "$0.00" in render_cost_table(price_per_call=0.0)
    one = cost_rows((10, 10, 30))[0][2]
    two = cost_rows((10, 10, 60))[0][2]
    assert two == pytest.approx(2 * one)


PA, PB = prompts("A", 4), prompts("B", 4)
QS, HELD = questions(10), questions(20, "h")


def test_diagnose_null_mock_is_decoupled_and_flat(tmp_path):
    ex = make_executor(concurrency=4, seed=1, a_sd=0.3, b_sd=0.3, noise_sd=1.0)
    rep = diagnose(PA, PB, QS, ex, tmp_path, heldout=HELD, task_description="Handle the request.")
    assert (rep.verdict, rep.stage2.decision, rep.exit_code) == ("DECOUPLED", "FLAT", 0)
    assert any("use zero-shot" in line for line in rep.recommendation)
    assert any("model update" in line for line in rep.recommendation)
    assert rep.cost_actual["calls"] == ex.calls


def test_diagnose_planted_format_finds_headroom(tmp_path):
    ex = make_executor(concurrency=4, seed=1, a_sd=0.0, b_sd=1.5, noise_sd=1.0,
                       bonuses=(Bonus("B", "JSON", 8.0),))
    cands = [PB[0] + f" Variant {i}." for i in range(9)] + [PB[0] + "\n\nFormat: Respond in JSON."]
    rep = diagnose(PA, PB, QS, ex, tmp_path, heldout=HELD, candidates=cands)
    assert (rep.verdict, rep.bottleneck, rep.stage2_agent, rep.stage2.decision) == \
        ("DECOUPLED", "B", "B", "OPTIMIZE")
    assert any("can but doesn't" in line for line in rep.recommendation)


def test_diagnose_coupled_skips_stage_two(tmp_path):
    ex = make_executor(concurrency=4, seed=1, a_sd=0.3, b_sd=0.3, interaction=5.0, noise_sd=1.0)
    rep = diagnose(PA, PB, QS, ex, tmp_path, heldout=HELD)
    assert rep.verdict == "COUPLED" and rep.stage2 is None and rep.exit_code == 2
    assert "jointly" in rep.recommendation[0]


def test_report_text_is_reproducible_from_json(tmp_path):
    ex = make_executor(concurrency=4, seed=2, noise_sd=1.0)
    rep = diagnose(PA, PB, QS, ex, tmp_path, heldout=HELD, task_description="Handle the request.")
    text = render_report(rep)
    again = DiagnosisReport.from_dict(json.loads(rep.to_json()))
    assert render_report(again) == text == render_report(json.loads(rep.to_json()))
    assert again.to_dict() == json.loads(rep.to_json())
