import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from promptdiag.anova import (
    SOURCES,
    AnovaTable,
    SourceRow,
    decompose,
    degrees_of_freedom,
    ms_per_df_note,
    significance_stars,
    sums_of_squares,
    variance_shares,
)
from promptdiag.errors import DegenerateDims, NumericalInconsistency
from promptdiag.tensor import ScoreTensor, SyntheticSpec, synth_tensor

from .oracles import ss_oracle


def slice_tensor(m):
    return np.asarray(m, dtype=float)[:, :, None]


def test_ss_additive_slice():
    ss = sums_of_squares(slice_tensor([[0, 1], [1, 2]]))
    assert ss["A"] == pytest.approx(1.0, abs=1e-12)
    assert ss["B"] == pytest.approx(1.0, abs=1e-12)
    assert ss["AxB"] == pytest.approx(0.0, abs=1e-12)


def test_ss_pure_interaction_slice():
    ss = sums_of_squares(slice_tensor([[0, 1], [1, 0]]))
    assert ss["A"] == pytest.approx(0.0, abs=1e-12)
    assert ss["B"] == pytest.approx(0.0, abs=1e-12)
    assert ss["AxB"] == pytest.approx(1.0, abs=1e-12)


def test_df_for_ten_by_ten_grid():
    df = degrees_of_freedom(10, 10, 30)
    assert df["AxB"] == 81
    assert df["Error"] == 99 * 29 == 2871
    assert sum(df.values()) == 10 * 10 * 30 - 1


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 4), st.integers(2, 4), st.integers(2, 6)),
              elements=st.floats(0, 100)))
def test_decompose_matches_oracle(y):
    table = decompose(ScoreTensor(y))
    ref = ss_oracle(y.tolist())
    scale = max(1.0, ref["total"])
    assert table.ss_total == pytest.approx(ref["total"], rel=1e-9, abs=1e-12 * scale)
    for name in SOURCES:
        assert table[name].ss == pytest.approx(ref[name], rel=1e-9, abs=1e-9 * scale)
    assert sum(table[s].df for s in SOURCES) == table.df_total


def test_decompose_requires_two_levels():
    with pytest.raises(DegenerateDims):
        decompose(ScoreTensor(slice_tensor([[0, 1], [1, 2]])))


def test_constant_tensor_shares_zero_and_no_rejection():
    table = decompose(ScoreTensor(np.full((3, 3, 4), 7.0)))
    assert all(share == 0 for _, share in variance_shares(table))
    assert table["AxB"].p == 1.0


def test_perfect_fit_gives_infinite_f():
    y = np.zeros((2, 2, 3))
    y[1] += 5.0
    table = decompose(ScoreTensor(y))
    assert table["A"].f == float("inf") and table["A"].p == 0.0
    assert table["B"].p == 1.0


def test_negative_residual_beyond_tolerance_raises(monkeypatch):
    from promptdiag import anova

    def bad(scores):
        return {"Question": 10.0, "A": 5.0, "B": 5.0, "AxB": 5.0, "total": 20.0}

    monkeypatch.setattr(anova, "sums_of_squares", bad)
    with pytest.raises(NumericalInconsistency):
        anova.decompose(ScoreTensor(np.arange(8.0).reshape(2, 2, 2)))


def test_question_and_noise_dominate_when_nothing_else_planted():
    table = decompose(synth_tensor(SyntheticSpec(question_sd=10, noise_sd=3, seed=2)))
    assert table["Question"].share + table["Error"].share == pytest.approx(1.0, abs=0.03)
    for s in ("A", "B", "AxB"):
        assert table[s].share < 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_shares_sum_to_one_and_ms_is_ss_over_df(seed):
    table = decompose(synth_tensor(SyntheticSpec(k_a=3, k_b=4, n=5, question_sd=3, a_sd=1, b_sd=1,
                                                 interaction_sd=1, noise_sd=1, seed=seed)))
    assert sum(s for _, s in variance_shares(table)) == pytest.approx(1.0, abs=1e-9)
    for name in SOURCES:
        r = table[name]
        assert r.ms == pytest.approx(r.ss / r.df, rel=1e-12)


@pytest.mark.parametrize("p,stars", [(0.0005, "***"), (0.001, "**"), (0.005, "**"), (0.03, "*"),
                                     (0.05, ""), (0.2, ""), (None, "")])
def test_significance_stars(p, stars):
    assert significance_stars(p) == stars


def _table_from_shares(shares, dfs, total=1000.0):
    rows = {name: SourceRow(ss=shares[name] * total, df=dfs[name], ms=shares[name] * total / dfs[name],
                            share=shares[name]) for name in SOURCES}
    return AnovaTable(rows=rows, ss_total=total, dims=(10, 10, 30))


def test_small_main_effect_outweighs_larger_interaction_per_df():
    dfs = degrees_of_freedom(10, 10, 30)
    table = _table_from_shares({"Question": 0.9, "A": 0.006, "B": 0.006, "AxB": 0.02, "Error": 0.068}, dfs)
    ms_axb, ms_a, _ = ms_per_df_note(table)
    assert ms_a > ms_axb


def test_equal_shares_and_dfs_give_equal_ms():
    dfs = {"Question": 4, "A": 3, "B": 3, "AxB": 9, "Error": 40}
    table = _table_from_shares({"Question": 0.5, "A": 0.1, "B": 0.1, "AxB": 0.1, "Error": 0.2}, dfs)
    _, ms_a, ms_b = ms_per_df_note(table)
    assert ms_a == ms_b


def test_json_round_trip():
    table = decompose(synth_tensor(SyntheticSpec(k_a=3, k_b=3, n=4, question_sd=2, noise_sd=1, seed=5)))
    again = AnovaTable.from_json(table.to_json())
    assert again == table
