import json

import numpy as np
import pytest

from promptdiag.errors import PartialRun, TransportError
from promptdiag.executor import Executor, ExecutorConfig, MockBackend, MockParams
from promptdiag.grid import GridStore, cache_key, estimate_cost, load_questions, run_grid

from .conftest import CountingBackend, Crash, prompts, questions


def executor(concurrency=1, crash_after=None, params=MockParams(seed=3)):
    backend = CountingBackend(MockBackend(params), crash_after)
    return Executor(ExecutorConfig(max_concurrency=concurrency, mock=params), backend=backend), backend


def test_grid_dims_and_mock_agreement(tmp_path):
    ex, backend = executor(concurrency=4)
    t, manifest = run_grid(prompts("A", 3), prompts("B", 2), questions(4), ex, tmp_path)
    assert t.dims == (3, 2, 4)
    assert len(backend.log) == 3 * 24
    assert manifest.status["done"] == 24 and manifest.cost["calls"] == 72
    assert (tmp_path / "tensor.jsonl").exists() and (tmp_path / "manifest.json").exists()


def test_full_store_rerun_makes_no_calls(tmp_path):
    ex, _ = executor()
    t1, _ = run_grid(prompts("A", 2), prompts("B", 2), questions(3), ex, tmp_path)
    ex2, backend2 = executor()
    t2, m2 = run_grid(prompts("A", 2), prompts("B", 2), questions(3), ex2, tmp_path)
    assert backend2.log == [] and t1 == t2
    assert m2.cost["calls"] == 36


def test_single_missing_cell_costs_one_evaluation(tmp_path):
    pa, pb, qs = prompts("A", 10), prompts("B", 10), questions(30)
    ex, _ = executor(concurrency=8)
    full, _ = run_grid(pa, pb, qs, ex, tmp_path)
    lines = (tmp_path / "cells.jsonl").read_text().splitlines()
    assert len(lines) == 3000
    (tmp_path / "cells.jsonl").write_text("\n".join(lines[1:]) + "\n")
    ex2, backend2 = executor(concurrency=8)
    again, _ = run_grid(pa, pb, qs, ex2, tmp_path)
    assert len(backend2.log) == 3
    assert again == full


def test_crash_resume_is_bit_identical_without_duplicate_calls(tmp_path):
    pa, pb, qs = prompts("A", 3), prompts("B", 3), questions(4)
    ref_ex, _ = executor()
    reference, _ = run_grid(pa, pb, qs, ref_ex, tmp_path / "ref")

    ex, first = executor(crash_after=3 * 14)
    with pytest.raises(Crash):
        run_grid(pa, pb, qs, ex, tmp_path / "run")
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["status"]["done"] == 14
    ex2, second = executor()
    resumed, _ = run_grid(pa, pb, qs, ex2, tmp_path / "run")
    assert np.array_equal(resumed.scores, reference.scores)
    calls = first.log + second.log
    judged = [c for c in calls if "'judge'" in c]
    # Each judge call names its (a, b, q) cell, so repeats would show up here.
    assert len(calls) == 3 * 36 and len(judged) == len(set(judged)) == 36


def test_torn_final_line_is_ignored(tmp_path):
    ex, _ = executor()
    run_grid(prompts("A", 2), prompts("B", 2), questions(2), ex, tmp_path)
    with open(tmp_path / "cells.jsonl", "a") as fh:
        fh.write('{"key": "abc", "status": "do')
    assert len(GridStore(tmp_path).completed()) == 8


def test_execution_order_does_not_change_tensor(tmp_path):
    pa, pb, qs = prompts("A", 3), prompts("B", 3), questions(3)
    a, _ = run_grid(pa, pb, qs, executor()[0], tmp_path / "s1", seed=1)
    b, _ = run_grid(pa, pb, qs, executor(concurrency=4)[0], tmp_path / "s2", seed=99)
    assert a == b


def test_failed_cells_raise_partial_run(tmp_path):
    class Flaky(MockBackend):
        def complete(self, messages, **kw):
            if kw["meta"]["question_id"] == "q1" and kw["meta"]["call"] == "judge":
                raise TransportError("down")
            return super().complete(messages, **kw)

    ex = Executor(ExecutorConfig(max_retries=0), backend=Flaky(), sleep=lambda s: None)
    with pytest.raises(PartialRun) as exc:
        run_grid(prompts("A", 2), prompts("B", 2), questions(2), ex, tmp_path)
    assert sorted(exc.value.failed) == [(0, 0, 1), (0, 1, 1), (1, 0, 1), (1, 1, 1)]
    status = json.loads((tmp_path / "manifest.json").read_text())["status"]
    assert status["failed"] == 4 and status["done"] == 4
    failed_lines = [json.loads(x) for x in (tmp_path / "cells.jsonl").read_text().splitlines()]
    assert all(r["attempts"] == 3 for r in failed_lines if r["status"] == "failed")


def test_cache_key_properties():
    k = cache_key("a", "b", "q1", "d")
    assert k == cache_key("a", "b", "q1", "d")
    assert k != cache_key("a", "c", "q1", "d") != cache_key("ab", "b", "q1", "d")
    assert k != cache_key("a", "b", "q1", "d", rubric="other rubric")


def test_reordering_prompts_reuses_cache(tmp_path):
    pa, pb, qs = prompts("A", 2), prompts("B", 3), questions(2)
    run_grid(pa, pb, qs, executor()[0], tmp_path)
    ex, backend = executor()
    t, _ = run_grid(pa[::-1], pb[::-1], qs, ex, tmp_path)
    assert backend.log == [] and t.dims == (2, 3, 2)


def test_estimate_cost():
    est = estimate_cost((10, 10, 30), 0.0089)
    assert est.calls == 9000 and est.cost == pytest.approx(80.1)
    assert estimate_cost((2, 2, 2), 1.0).calls == 24
    with pytest.raises(ValueError):
        estimate_cost((10, 10, 0), 0.01)


def test_input_validation(tmp_path):
    with pytest.raises(ValueError):
        run_grid(prompts("A", 1), prompts("B", 2), questions(2), executor()[0], tmp_path)
    with pytest.raises(ValueError):
        run_grid(prompts("A", 2), prompts("B", 2), [("q", "x"), ("q", "y")], executor()[0], tmp_path)


def test_load_questions(tmp_path):
    p = tmp_path / "q.jsonl"
    p.write_text('{"id": 1, "input": "a"}\n\n{"id": "b", "input": "c"}\n')
    assert [(q.id, q.input) for q in load_questions(p)] == [("1", "a"), ("b", "c")]
