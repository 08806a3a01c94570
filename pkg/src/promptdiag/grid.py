"""Exhaustive prompt-grid evaluation with an append-only, resumable store."""
from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple

from .errors import PartialRun, PromptDiagError
from .executor import DEFAULT_RUBRIC, Executor
from .prompts import prompt_digest
from .rng import Stream
from .tensor import ScoreTensor, build_tensor, save_tensor_jsonl

log = logging.getLogger(__name__)

CELL_ATTEMPTS = 3
CALLS_PER_CELL = 3  # agent A, agent B, judge


@dataclass(frozen=True)
class Question:
    id: str
    input: str


def load_questions(path) -> list[Question]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = json.loads(line)
                questions.append(Question(id=str(rec["id"]), input=str(rec["input"])))
    return questions


def as_questions(items) -> list[Question]:
    out = []
    for q in items:
        if isinstance(q, Question):
            out.append(q)
        elif isinstance(q, dict):
            out.append(Question(id=str(q["id"]), input=str(q["input"])))
        else:
            qid, text = q
            out.append(Question(id=str(qid), input=str(text)))
    return out


def cache_key(prompt_a: str | None, prompt_b: str, question_id: str, executor_digest: str,
              rubric: str = DEFAULT_RUBRIC) -> str:
    """Digest of the canonical cell tuple; positions and time play no part."""
    payload = json.dumps(
        {
            "prompt_a": prompt_a,
            "prompt_b": prompt_b,
            "question_id": question_id,
            "executor": executor_digest,
            "rubric": prompt_digest(rubric),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class CostEstimate(NamedTuple):
    calls: int
    cost: float


def estimate_cost(dims: tuple[int, int, int], per_call_price: float) -> CostEstimate:
    """Calls and spend for a full grid: two agent calls and one judge call per cell."""
    k_a, k_b, n = (int(d) for d in dims)
    if min(k_a, k_b, n) < 1:
        raise ValueError(f"grid dimensions must be positive, got {dims}")
    if per_call_price < 0:
        raise ValueError("per-call price must be >= 0")
    calls = CALLS_PER_CELL * k_a * k_b * n
    return CostEstimate(calls, calls * float(per_call_price))


@dataclass
class RunManifest:
    prompts_a: list[dict]
    prompts_b: list[dict]
    questions: list[dict]
    executor_digest: str
    executor: dict
    rubric_digest: str
    seed: int
    created_at: str = ""
    cost: dict = field(default_factory=lambda: {"calls": 0, "input_tokens": 0, "output_tokens": 0})
    status: dict = field(default_factory=dict)

    @property
    def dims(self) -> tuple[int, int, int]:
        return len(self.prompts_a), len(self.prompts_b), len(self.questions)

    def input_digest(self) -> str:
        """Stable digest of the run definition (excludes time, cost and status)."""
        payload = {k: v for k, v in asdict(self).items() if k not in ("created_at", "cost", "status")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


def _executor_public(cfg) -> dict:
    d = cfg.to_dict()
    d.pop("api_key_env", None)
    return d


def make_manifest(prompts_a, prompts_b, questions, executor: Executor, seed: int, rubric: str) -> RunManifest:
    return RunManifest(
        prompts_a=[{"digest": prompt_digest(p), "text": p} for p in prompts_a],
        prompts_b=[{"digest": prompt_digest(p), "text": p} for p in prompts_b],
        questions=[{"id": q.id, "input": q.input} for q in questions],
        executor_digest=executor.digest,
        executor=_executor_public(executor.cfg),
        rubric_digest=prompt_digest(rubric),
        seed=int(seed),
    )


class GridStore:
    """Directory holding ``cells.jsonl`` (append-only), ``manifest.json`` and ``tensor.jsonl``."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.cells_path = self.root / "cells.jsonl"
        self.manifest_path = self.root / "manifest.json"
        self.tensor_path = self.root / "tensor.jsonl"
        self._lock = threading.Lock()

    def completed(self) -> dict[str, dict]:
        done = {}
        if not self.cells_path.exists():
            return done
        with open(self.cells_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # A torn final line from a crash; the cell is simply redone.
                    log.warning("skipping unreadable store line")
                    continue
                if rec.get("status") == "done" and rec["key"] not in done:
                    done[rec["key"]] = rec
        return done

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with self._lock:
            with open(self.cells_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()

    def write_manifest(self, manifest: RunManifest) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")
        tmp.replace(self.manifest_path)

    def read_manifest(self) -> RunManifest | None:
        if not self.manifest_path.exists():
            return None
        return RunManifest.from_dict(json.loads(self.manifest_path.read_text(encoding="utf-8")))


def _evaluate_cell(executor: Executor, prompt_a, prompt_b, q: Question, rubric: str, attempts: int):
    last = None
    for attempt in range(1, attempts + 1):
        try:
            value, tr, js = executor.evaluate(prompt_a, prompt_b, q.id, q.input, rubric)
            return value, tr, js, attempt, None
        except PromptDiagError as exc:
            last = exc
            log.warning("cell evaluation failed (attempt %d/%d): %s", attempt, attempts, exc)
    return None, None, None, attempts, last


def run_grid(prompts_a, prompts_b, questions, executor: Executor, store: GridStore | str | Path,
             seed: int = 0, rubric: str = DEFAULT_RUBRIC, max_attempts: int = CELL_ATTEMPTS,
             resume: bool = True) -> tuple[ScoreTensor, RunManifest]:
    """Evaluate every (A prompt, B prompt, question) cell once and assemble the tensor.

    Cells already in the store (same content-addressed key) are reused, so a
    crashed or repeated run only pays for the missing cells.
    """
    prompts_a, prompts_b = list(prompts_a), list(prompts_b)
    questions = as_questions(questions)
    if len(prompts_a) < 2 or len(prompts_b) < 2:
        raise ValueError("need at least two prompts per agent")
    if len(questions) < 2:
        raise ValueError("need at least two questions")
    if len({q.id for q in questions}) != len(questions):
        raise ValueError("question ids must be unique")
    if not isinstance(store, GridStore):
        store = GridStore(store)

    manifest = make_manifest(prompts_a, prompts_b, questions, executor, seed, rubric)
    previous = store.read_manifest()
    if previous is not None and resume and previous.input_digest() == manifest.input_digest():
        manifest.created_at = previous.created_at
    manifest.created_at = manifest.created_at or datetime.now(timezone.utc).isoformat()

    k_a, k_b, n = len(prompts_a), len(prompts_b), len(questions)
    cells = [(i, j, k) for i in range(k_a) for j in range(k_b) for k in range(n)]
    keys = {c: cache_key(prompts_a[c[0]], prompts_b[c[1]], questions[c[2]].id, executor.digest, rubric)
            for c in cells}
    done = store.completed() if resume else {}
    scores = {c: done[keys[c]]["score"] for c in cells if keys[c] in done}
    pending = [cells[int(x)] for x in Stream(seed, 0x6772).permutation(len(cells)) if cells[int(x)] not in scores]
    log.info("grid %dx%dx%d: %d cached, %d to evaluate", k_a, k_b, n, len(scores), len(pending))

    calls_before = executor.cost()
    failed = []
    lock = threading.Lock()

    def work(cell):
        i, j, k = cell
        value, tr, js, attempts, err = _evaluate_cell(executor, prompts_a[i], prompts_b[j], questions[k],
                                                      rubric, max_attempts)
        if err is not None:
            store.append({"key": keys[cell], "a": i, "b": j, "q": k, "question_id": questions[k].id,
                          "status": "failed", "attempts": attempts, "error": str(err)})
            with lock:
                failed.append(cell)
            return
        store.append({
            "key": keys[cell], "a": i, "b": j, "q": k, "question_id": questions[k].id,
            "status": "done", "score": value, "attempts": attempts,
            "agent_a_prompt_hash": tr.agent_a_prompt_hash, "agent_b_prompt_hash": tr.agent_b_prompt_hash,
            "parse_attempts": js.parse_attempts, "tokens": tr.token_counts,
        })
        with lock:
            scores[cell] = value

    workers = max(1, executor.cfg.max_concurrency)
    pool = ThreadPoolExecutor(max_workers=workers)
    try:
        futures = [pool.submit(work, c) for c in pending]
        for fut in futures:
            fut.result()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        _finish_manifest(manifest, previous if resume else None, executor, calls_before, cells, scores, failed)
        store.write_manifest(manifest)

    if failed:
        raise PartialRun(sorted(failed))
    tensor = build_tensor(((i, j, k, scores[(i, j, k)]) for (i, j, k) in cells), (k_a, k_b, n))
    save_tensor_jsonl(tensor, store.tensor_path)
    return tensor, manifest


def _finish_manifest(manifest, previous, executor, before, cells, scores, failed):
    after = executor.cost()
    spent = {k: after[k] - before[k] for k in after}
    if previous is not None and previous.input_digest() == manifest.input_digest():
        spent = {k: spent[k] + previous.cost.get(k, 0) for k in spent}
    manifest.cost = spent
    failed_set = set(failed)
    per_cell = {}
    for c in cells:
        per_cell[",".join(map(str, c))] = "done" if c in scores else ("failed" if c in failed_set else "pending")
    manifest.status = {
        "done": sum(v == "done" for v in per_cell.values()),
        "failed": sum(v == "failed" for v in per_cell.values()),
        "pending": sum(v == "pending" for v in per_cell.values()),
        "cells": per_cell,
    }
