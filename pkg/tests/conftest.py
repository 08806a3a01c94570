import pytest

from promptdiag.executor import Executor, ExecutorConfig, MockParams


def make_executor(concurrency: int = 1, **mock) -> Executor:
    return Executor(ExecutorConfig(max_concurrency=concurrency, mock=MockParams(**mock)))


def prompts(agent: str, k: int) -> list[str]:
    return [f"You are agent {agent}, variant {i}. Handle the request." for i in range(k)]


def questions(n: int, prefix: str = "q") -> list[tuple[str, str]]:
    return [(f"{prefix}{i}", f"Question number {i}?") for i in range(n)]


@pytest.fixture
def mock_executor():
    return make_executor()


class Crash(Exception):
    """Stands in for the process dying mid-run."""


class CountingBackend:
    """Wraps a backend; records successful calls and optionally dies after ``crash_after`` of them."""

    def __init__(self, inner, crash_after: int | None = None):
        self.inner = inner
        self.crash_after = crash_after
        self.log: list[str] = []
        self._lock = __import__("threading").Lock()

    def complete(self, messages, **kw):
        with self._lock:
            if self.crash_after is not None and len(self.log) >= self.crash_after:
                raise Crash("simulated kill")
        out = self.inner.complete(messages, **kw)
        key = repr((kw.get("meta"), messages))
        with self._lock:
            self.log.append(key)
        return out
