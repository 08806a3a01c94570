"""Two-agent pipeline execution and judge scoring.

Backends expose a single ``complete(messages, *, temperature, max_tokens,
timeout, meta)`` call returning a :class:`Completion`. The mock backend is a
pure function of its inputs and the configured :class:`MockParams`; the HTTP
backend speaks the common JSON chat-completion shape.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field, fields, replace

import requests

from .errors import EmptyCompletion, ExecutorTimeout, TransportError, UnparseableJudgment
from .prompts import canonical_text, prompt_digest
from .rng import digest_normal

log = logging.getLogger(__name__)

UPSTREAM_DELIMITER = "--- UPSTREAM AGENT OUTPUT ---"
JUDGE_REASKS = 2

# Neutral default rubric shipped with the toolkit; replace it with a
# task-specific rubric for real runs.
DEFAULT_RUBRIC = (
    "You are grading the final response of an automated pipeline.\n"
    "Judge correctness, completeness and clarity with respect to the question.\n"
    "Give a single overall score from 0 (useless) to 100 (excellent)."
)
_JUDGE_CONTRACT = "End your reply with a line of the form `SCORE: <number from 0 to 100>`."
_SCORE_LINE = re.compile(r"SCORE:\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)")


@dataclass(frozen=True)
class Bonus:
    """Planted mock effect: ``points`` added when ``agent``'s prompt contains ``pattern``."""

    agent: str
    pattern: str
    points: float


@dataclass(frozen=True)
class MockParams:
    seed: int = 0
    landscape_seed: int = 0
    base: float = 60.0
    question_sd: float = 10.0
    a_sd: float = 1.0
    b_sd: float = 1.0
    interaction: float = 0.0
    noise_sd: float = 3.0
    bonuses: tuple[Bonus, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bonuses"] = [asdict(b) for b in self.bonuses]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MockParams":
        d = dict(d)
        d["bonuses"] = tuple(Bonus(**b) for b in d.get("bonuses", ()))
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class ExecutorConfig:
    backend: str = "mock"
    endpoint: str = ""
    model_id: str = "mock"
    api_key_env: str = "PROMPTDIAG_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    max_concurrency: int = 4
    max_tokens: int = 1024
    backoff_base: float = 1.0
    mock: MockParams = field(default_factory=MockParams)

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    def digest(self) -> str:
        """Digest of everything that can change a score; excludes timing and credentials."""
        payload = {
            "backend": self.backend,
            "endpoint": self.endpoint,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.backend == "mock":
            payload["mock"] = self.mock.to_dict()
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mock"] = self.mock.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExecutorConfig":
        d = dict(d)
        if "mock" in d and isinstance(d["mock"], dict):
            d["mock"] = MockParams.from_dict(d["mock"])
        types = {"timeout": float, "max_retries": int, "temperature": float,
                 "max_concurrency": int, "max_tokens": int, "backoff_base": float}
        for k, conv in types.items():
            if k in d:
                d[k] = conv(d[k])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Completion:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass
class PipelineTranscript:
    question_id: str
    agent_a_prompt_hash: str
    agent_b_prompt_hash: str
    agent_a_output: str
    agent_b_output: str
    latency: float
    token_counts: dict
    question_input: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class JudgeScore:
    value: float
    raw_judgment: str
    parse_attempts: int


def _approx_tokens(text: str) -> int:
    return len(text.split())


# --- mock scoring -----------------------------------------------------------

def _effect_key(prompt: str | None) -> str:
    if prompt is None:
        return "-"
    return prompt_digest(canonical_text(prompt))[:16]


def _question_key(question_id: str) -> str:
    return prompt_digest(str(question_id))[:16]


def _bonus_for(params: MockParams, agent: str, prompt: str | None) -> float:
    if prompt is None:
        return 0.0
    return sum(b.points for b in params.bonuses if b.agent.upper() == agent and b.pattern in prompt)


def _compose_score(params: MockParams, key_a: str, key_b: str, question_id: str, bonus: float) -> float:
    ls = str(params.landscape_seed)
    y = params.base + params.question_sd * digest_normal("q", ls, question_id)
    if key_a != "-":
        y += params.a_sd * digest_normal("a", ls, key_a)
    if key_b != "-":
        y += params.b_sd * digest_normal("b", ls, key_b)
    if params.interaction and key_a != "-" and key_b != "-":
        y += params.interaction * digest_normal("ab", ls, key_a, key_b)
    y += params.noise_sd * digest_normal("noise", str(params.seed), key_a, key_b, question_id)
    y += bonus
    return min(100.0, max(0.0, y))


def mock_score(prompt_a: str | None, prompt_b: str | None, question_id: str, seed: int | None = None,
               params: MockParams | None = None) -> float:
    """Deterministic offline score for a prompt pair on one question.

    Prompt effects are keyed by the canonical structured form of each prompt,
    so reformatting a prompt without changing its components does not change
    its score. ``prompt_a=None`` scores a single-agent pipeline.
    """
    params = params or MockParams()
    if seed is not None:
        params = replace(params, seed=seed)
    bonus = _bonus_for(params, "A", prompt_a) + _bonus_for(params, "B", prompt_b)
    return _compose_score(params, _effect_key(prompt_a), _effect_key(prompt_b), _question_key(question_id), bonus)


_MARKER = re.compile(r"\[\[mock q=(\S+) a=(\S+) fa=(\S+)(?: b=(\S+) fb=(\S+))?\]\]")


class MockBackend:
    """Offline backend that threads effect keys through the pipeline text."""

    def __init__(self, params: MockParams | None = None):
        self.params = params or MockParams()

    def complete(self, messages, *, temperature=0.0, max_tokens=1024, timeout=None, meta=None):
        meta = meta or {}
        call = meta.get("call")
        system = next((m["content"] for m in messages if m["role"] == "system"), "")
        user = "\n".join(m["content"] for m in messages if m["role"] == "user")
        qid = _question_key(meta.get("question_id", ""))
        if call == "agent_a":
            text = (f"[[mock q={qid} a={_effect_key(system)} fa={_bonus_for(self.params, 'A', system)!r}]]\n"
                    f"Notes: {user[:80]}")
        elif call == "agent_b":
            up = _MARKER.search(user)
            key_a, fa = (up.group(2), up.group(3)) if up else ("-", "0.0")
            text = (f"[[mock q={qid} a={key_a} fa={fa} b={_effect_key(system)} "
                    f"fb={_bonus_for(self.params, 'B', system)!r}]]\nAnswer drafted from the notes.")
        elif call == "judge":
            m = _MARKER.search(user)
            if m is None:
                text = "The response carries no mock marker; unable to grade."
            else:
                q, key_a, fa, key_b, fb = m.groups()
                score = _compose_score(self.params, key_a, key_b or "-", q,
                                       float(fa) + float(fb or 0.0))
                text = f"Graded offline.\nSCORE: {score!r}"
        else:
            text = user
        return Completion(text, sum(_approx_tokens(m["content"]) for m in messages), _approx_tokens(text))


class HttpBackend:
    """JSON chat-completion client; the credential is read from the environment per call."""

    def __init__(self, cfg: ExecutorConfig, session: requests.Session | None = None):
        if not cfg.endpoint:
            raise ValueError("http backend requires an endpoint")
        self.cfg = cfg
        self.session = session or requests.Session()

    def complete(self, messages, *, temperature=0.0, max_tokens=1024, timeout=None, meta=None):
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.cfg.model_id,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            resp = self.session.post(self.cfg.endpoint, json=payload, headers=headers,
                                     timeout=timeout or self.cfg.timeout)
        except requests.Timeout:
            raise ExecutorTimeout(f"request to {self.cfg.endpoint} timed out") from None
        except requests.RequestException as exc:
            raise TransportError(f"request to {self.cfg.endpoint} failed: {type(exc).__name__}") from None
        if resp.status_code >= 400:
            err = TransportError(f"HTTP {resp.status_code} from {self.cfg.endpoint}")
            err.retryable = resp.status_code in (408, 429) or resp.status_code >= 500
            raise err
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise TransportError("malformed chat-completion response") from None
        usage = data.get("usage") or {}
        return Completion(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


def make_backend(cfg: ExecutorConfig):
    if cfg.backend == "mock":
        return MockBackend(cfg.mock)
    return HttpBackend(cfg)


class Executor:
    """Runs pipeline, judge and transformer calls under a shared concurrency cap."""

    def __init__(self, cfg: ExecutorConfig | None = None, backend=None, sleep=time.sleep):
        self.cfg = cfg or ExecutorConfig()
        self.backend = backend if backend is not None else make_backend(self.cfg)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(self.cfg.max_concurrency)
        self._lock = threading.Lock()
        self._in_flight = 0
        self.peak_in_flight = 0
        self.calls = 0
        self.input_tokens = 0
        self.output_tokens = 0

    @property
    def digest(self) -> str:
        return self.cfg.digest()

    def cost(self) -> dict:
        with self._lock:
            return {"calls": self.calls, "input_tokens": self.input_tokens,
                    "output_tokens": self.output_tokens}

    def complete(self, messages, meta=None, temperature=None) -> Completion:
        """One backend call with retries and exponential backoff."""
        temp = self.cfg.temperature if temperature is None else temperature
        attempts = self.cfg.max_retries + 1
        last = None
        for attempt in range(attempts):
            with self._slots:
                with self._lock:
                    self._in_flight += 1
                    self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
                try:
                    out = self.backend.complete(messages, temperature=temp, max_tokens=self.cfg.max_tokens,
                                                timeout=self.cfg.timeout, meta=meta)
                except TransportError as exc:
                    last = exc
                    out = None
                finally:
                    with self._lock:
                        self._in_flight -= 1
            if out is not None:
                with self._lock:
                    self.calls += 1
                    self.input_tokens += out.input_tokens
                    self.output_tokens += out.output_tokens
                return out
            if not getattr(last, "retryable", True) or attempt == attempts - 1:
                break
            delay = self.cfg.backoff_base * (2 ** attempt)
            log.warning("backend call failed (%s); retry %d/%d in %.2fs",
                        last, attempt + 1, self.cfg.max_retries, delay)
            self._sleep(delay)
        raise last

    def _agent(self, system: str, user: str, meta: dict) -> Completion:
        out = self.complete([{"role": "system", "content": system}, {"role": "user", "content": user}], meta)
        if not out.text.strip():
            raise EmptyCompletion(f"{meta.get('call')} returned an empty completion")
        return out

    def run_pipeline(self, prompt_a: str | None, prompt_b: str, question_id: str, question: str) -> PipelineTranscript:
        """Agent A reads the question; Agent B reads the question plus A's output.

        ``prompt_a=None`` runs Agent B alone (single-agent pipeline).
        """
        if not prompt_b or not prompt_b.strip() or (prompt_a is not None and not prompt_a.strip()):
            raise ValueError("agent prompts must be non-empty")
        t0 = time.perf_counter()
        tokens = {}
        a_text = ""
        if prompt_a is not None:
            a_out = self._agent(prompt_a, question, {"call": "agent_a", "question_id": question_id})
            a_text = a_out.text
            tokens["agent_a"] = {"input": a_out.input_tokens, "output": a_out.output_tokens}
            b_user = f"{question}\n\n{UPSTREAM_DELIMITER}\n{a_text}"
        else:
            b_user = question
        b_out = self._agent(prompt_b, b_user, {"call": "agent_b", "question_id": question_id})
        tokens["agent_b"] = {"input": b_out.input_tokens, "output": b_out.output_tokens}
        return PipelineTranscript(
            question_id=question_id,
            agent_a_prompt_hash=prompt_digest(prompt_a) if prompt_a is not None else "",
            agent_b_prompt_hash=prompt_digest(prompt_b),
            agent_a_output=a_text,
            agent_b_output=b_out.text,
            latency=time.perf_counter() - t0,
            token_counts=tokens,
            question_input=question,
        )

    def judge_score(self, transcript: PipelineTranscript, rubric: str = DEFAULT_RUBRIC) -> JudgeScore:
        if not transcript.agent_b_output.strip():
            raise ValueError("transcript has no final output to judge")
        messages = [
            {"role": "system", "content": f"{rubric}\n\n{_JUDGE_CONTRACT}"},
            {"role": "user", "content": f"QUESTION:\n{transcript.question_input}\n\n"
                                        f"RESPONSE:\n{transcript.agent_b_output}"},
        ]
        meta = {"call": "judge", "question_id": transcript.question_id}
        raw = ""
        for attempt in range(1, JUDGE_REASKS + 2):
            raw = self.complete(messages, meta).text
            value = parse_score(raw)
            if value is not None:
                return JudgeScore(value=value, raw_judgment=raw, parse_attempts=attempt)
            messages = messages + [
                {"role": "assistant", "content": raw},
                {"role": "user", "content": f"Your reply could not be parsed. {_JUDGE_CONTRACT}"},
            ]
        raise UnparseableJudgment(f"no valid SCORE line after {JUDGE_REASKS + 1} attempts",
                                  attempts=JUDGE_REASKS + 1, raw=raw)

    def evaluate(self, prompt_a: str | None, prompt_b: str, question_id: str, question: str,
                 rubric: str = DEFAULT_RUBRIC) -> tuple[float, PipelineTranscript, JudgeScore]:
        tr = self.run_pipeline(prompt_a, prompt_b, question_id, question)
        js = self.judge_score(tr, rubric)
        return js.value, tr, js


def parse_score(text: str) -> float | None:
    """Number on the first ``SCORE:`` line, if it lies in [0, 100]."""
    for line in text.splitlines():
        m = _SCORE_LINE.search(line)
        if m:
            value = float(m.group(1))
            return value if 0.0 <= value <= 100.0 else None
    return None
