"""Prompt transformers: the text-rewriting primitive behind search operators.

:class:`RuleTransformer` is deterministic and offline; it draws replacement
components from phrase pools. :class:`LLMTransformer` asks a chat model to do
the same rewrites through an :class:`~promptdiag.executor.Executor`.
"""
from __future__ import annotations

import re

from .errors import EmptyPrompt, TransformerFailure, TransportError
from .prompts import COMPONENTS, StructuredPrompt, parse_sections
from .rng import substream

ROLE_POOL = (
    "You are a helpful assistant.",
    "You are a meticulous domain expert.",
    "You are a concise technical writer.",
    "You are a careful reviewer who checks every claim.",
    "You are a patient tutor.",
    "You are an analyst who reasons step by step.",
    "You are a senior editor.",
    "You are a pragmatic problem solver.",
)
TASK_TEMPLATES = (
    "{task}",
    "Your job: {task}",
    "{task} Be thorough.",
    "{task} Focus on what matters most.",
    "Read the input carefully, then {task}",
    "{task} Think before you answer.",
)
CONSTRAINTS_POOL = (
    "",
    "Keep the answer under 150 words.",
    "Cite the evidence you rely on.",
    "Do not speculate beyond the input.",
    "Answer every part of the question.",
    "Avoid jargon.",
    "State any assumptions explicitly.",
    "Prefer short sentences.",
)
EXAMPLES_POOL = (
    "",
    "Example: Q: What is the capital of France? A: Paris.",
    "Example: Input: a long paragraph. Output: a one-line gist.",
    "Example: Q: Is 17 prime? A: Yes, it has no divisors other than 1 and 17.",
    "Example: Input: two conflicting reports. Output: the points they agree on.",
)
FORMAT_POOL = (
    "",
    "Respond in plain prose.",
    "Use bullet points.",
    'Respond in JSON with keys "answer" and "rationale".',
    "Start with a one-sentence summary, then details.",
    "Use a numbered list.",
    "Answer in a single paragraph.",
    "Use Markdown headings.",
    "End with a line 'Final answer: ...'.",
    "Respond as a two-column table.",
)
MODIFIERS = (
    "Be specific.",
    "Double-check your work.",
    "Be brief.",
    "Explain your reasoning.",
    "Prioritize accuracy over style.",
)

DEFAULT_POOLS = {
    "role": ROLE_POOL,
    "constraints": CONSTRAINTS_POOL,
    "examples": EXAMPLES_POOL,
    "format": FORMAT_POOL,
}

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def _pick(stream, options, avoid=None):
    options = [o for o in options if o != avoid] or list(options)
    return options[int(stream.integers(len(options), 1)[0])]


def shorten(text: str) -> str:
    """Drop the last sentence, or the last third of the words of a single sentence."""
    text = text.strip()
    if not text:
        return text
    sentences = _SENTENCE_END.split(text)
    if len(sentences) > 1:
        return " ".join(sentences[:-1])
    words = text.split()
    if len(words) <= 3:
        return text
    return " ".join(words[: max(3, (2 * len(words)) // 3)])


class RuleTransformer:
    """Offline transformer driven by phrase pools and seeded draws.

    ``strength`` (0 to about 1.5) controls how far a rewrite strays: low
    strength swaps in a pool phrase, high strength may also append a modifier.
    ``paraphrases`` optionally fixes the outputs of :meth:`paraphrase`.
    """

    llm_backed = False

    def __init__(self, task_description: str = "", pools: dict | None = None,
                 paraphrases: list[str] | None = None):
        self.task_description = task_description.strip()
        self.pools = {**DEFAULT_POOLS, **(pools or {})}
        self.paraphrases = list(paraphrases) if paraphrases else None

    def _task_options(self, current: str):
        core = self.task_description or current.strip()
        return [t.format(task=core) for t in TASK_TEMPLATES]

    def rewrite(self, component: str, text: str, *, strength: float = 0.5, seed: int = 0) -> str:
        if component not in COMPONENTS:
            raise KeyError(component)
        st = substream(seed, "rewrite", component)
        options = self._task_options(text) if component == "task" else self.pools[component]
        out = _pick(st, options, avoid=text)
        if strength > 0.8 and st.uniform(1)[0] < strength - 0.5:
            out = f"{out} {_pick(st, MODIFIERS)}".strip()
        if component == "task" and not out.strip():
            out = text
        return out

    def simplify(self, component: str, text: str, *, seed: int = 0) -> str:
        out = shorten(text)
        return out if (out or component != "task") else text

    def explore(self, prompt: StructuredPrompt, *, seed: int = 0) -> StructuredPrompt:
        fields = {c: self.rewrite(c, prompt.get(c), strength=1.2, seed=seed * 7 + i)
                  for i, c in enumerate(COMPONENTS)}
        return StructuredPrompt(**fields)

    def generate(self, task_description: str = "", *, seed: int = 0, temperature: float = 1.0) -> StructuredPrompt:
        desc = (task_description or self.task_description).strip()
        if not desc:
            raise EmptyPrompt("random generation needs a task description")
        st = substream(seed, "generate")
        fields = {c: _pick(st, self.pools[c]) for c in ("role", "constraints", "examples", "format")}
        fields["task"] = _pick(st, [t.format(task=desc) for t in TASK_TEMPLATES])
        return StructuredPrompt(**fields)

    def paraphrase(self, text: str, *, seed: int = 0, temperature: float = 0.7) -> str:
        if self.paraphrases is not None:
            return self.paraphrases[seed % len(self.paraphrases)]
        base = parse_sections(text)
        st = substream(seed, "paraphrase")
        n_changes = 1 + int(st.uniform(1)[0] < min(temperature, 1.0) * 0.5)
        chosen = st.permutation(len(COMPONENTS))[:n_changes]
        out = base
        for i in chosen:
            c = COMPONENTS[int(i)]
            out = out.with_component(c, self.rewrite(c, out.get(c), strength=temperature, seed=seed * 31 + int(i)))
        return out.flatten()

    def decompose(self, text: str) -> StructuredPrompt:
        return parse_sections(text)


class LLMTransformer:
    """Rewrites through a chat model; every reply is parsed as labeled sections."""

    llm_backed = True

    def __init__(self, executor, task_description: str = "", max_attempts: int = 3):
        self.executor = executor
        self.task_description = task_description.strip()
        self.max_attempts = max_attempts

    def _ask(self, instruction: str, content: str, temperature: float) -> str:
        messages = [
            {"role": "system", "content": "You edit system prompts for language models. "
                                          "Reply with the edited text only."},
            {"role": "user", "content": f"{instruction}\n\n---\n{content}"},
        ]
        last = None
        for _ in range(self.max_attempts):
            try:
                text = self.executor.complete(messages, meta={"call": "transform"}, temperature=temperature).text
            except TransportError as exc:
                last = exc
                continue
            if text.strip():
                return text.strip()
        raise TransformerFailure(f"transformer gave no usable output: {last}")

    def _sections(self, instruction, content, temperature) -> StructuredPrompt:
        for _ in range(self.max_attempts):
            reply = self._ask(instruction + " Use the headers Role:, Task:, Constraints:, Examples:, Format:.",
                              content, temperature)
            try:
                return parse_sections(reply)
            except EmptyPrompt:
                continue
        raise TransformerFailure("transformer did not return a prompt with a task section")

    def rewrite(self, component, text, *, strength=0.5, seed=0):
        how = "Rewrite it substantially, trying a different approach." if strength > 0.8 else \
            "Make one focused improvement."
        out = self._ask(f"This is the '{component}' section of a prompt. {how}", text or "(empty)",
                        temperature=min(1.5, 0.3 + strength))
        return out

    def simplify(self, component, text, *, seed=0):
        if not text.strip():
            return text
        return self._ask(f"Shorten this '{component}' section without losing its intent.", text, 0.3)

    def explore(self, prompt, *, seed=0):
        return self._sections("Write a very different prompt for the same task.", prompt.flatten(), 1.2)

    def generate(self, task_description="", *, seed=0, temperature=1.0):
        desc = task_description or self.task_description
        return self._sections("Write a fresh system prompt for this task.", desc, temperature)

    def crossover(self, first, second, *, seed=0):
        both = f"PROMPT 1:\n{first.flatten()}\n\nPROMPT 2:\n{second.flatten()}"
        return self._sections("Combine the strongest parts of these two prompts into one.", both, 0.7)

    def paraphrase(self, text, *, seed=0, temperature=0.7):
        return self._ask("Propose an alternative version of this system prompt for the same task.",
                         text, temperature)

    def decompose(self, text):
        return self._sections("Split this prompt into labeled sections without changing its wording.", text, 0.0)
