"""Five-component structured prompts and their flat text form."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, replace

from .errors import EmptyPrompt

COMPONENTS = ("role", "task", "constraints", "examples", "format")
_LABELS = {c: c.capitalize() for c in COMPONENTS}
_HEADER = re.compile(
    r"^[ \t]*(role|task|constraints|examples|format)[ \t]*:[ \t]*", re.IGNORECASE | re.MULTILINE
)


@dataclass(frozen=True)
class StructuredPrompt:
    role: str = ""
    task: str = ""
    constraints: str = ""
    examples: str = ""
    format: str = ""

    def __post_init__(self):
        if not self.task.strip():
            raise EmptyPrompt("the task component must be non-empty")

    def get(self, component: str) -> str:
        return getattr(self, component)

    def with_component(self, component: str, text: str) -> "StructuredPrompt":
        if component not in COMPONENTS:
            raise KeyError(component)
        return replace(self, **{component: text})

    def flatten(self) -> str:
        return flatten(self)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredPrompt":
        return cls(**{c: str(d.get(c, "")) for c in COMPONENTS})


def flatten(p: StructuredPrompt) -> str:
    """Labeled sections in canonical order; empty components are omitted."""
    parts = [f"{_LABELS[c]}: {p.get(c).strip()}" for c in COMPONENTS if p.get(c).strip()]
    return "\n\n".join(parts)


def parse_sections(text: str) -> StructuredPrompt:
    """Split on ``Role:``/``Task:``/... headers at line starts.

    Unlabeled text (before the first header) goes to ``task``; repeated
    headers are concatenated.
    """
    if not text or not text.strip():
        raise EmptyPrompt("prompt text is empty")
    found: dict[str, list[str]] = {c: [] for c in COMPONENTS}
    matches = list(_HEADER.finditer(text))
    lead = text[: matches[0].start()] if matches else text
    if lead.strip():
        found["task"].append(lead.strip())
    for m, nxt in zip(matches, matches[1:] + [None]):
        body = text[m.end(): nxt.start() if nxt else len(text)].strip()
        if body:
            found[m.group(1).lower()].append(body)
    fields = {c: "\n\n".join(v) for c, v in found.items()}
    if not fields["task"]:
        # Header-only prompts without a task keep their content under task.
        fields["task"] = text.strip()
        fields = {c: (fields[c] if c == "task" else "") for c in COMPONENTS}
    return StructuredPrompt(**fields)


def decompose_prompt(text: str, transformer=None) -> StructuredPrompt:
    """Structured view of a flat prompt.

    With a transformer that implements ``decompose`` (an LLM-backed one) the
    split is delegated to it; otherwise labeled headers are parsed.
    """
    if not text or not text.strip():
        raise EmptyPrompt("prompt text is empty")
    if transformer is not None and getattr(transformer, "llm_backed", False):
        return transformer.decompose(text)
    return parse_sections(text)


def canonical_text(text: str) -> str:
    """Formatting-insensitive canonical form used to key mock effects."""
    try:
        return flatten(parse_sections(text))
    except EmptyPrompt:
        return ""


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_prompt_list(path) -> list[str]:
    """Read a JSON array of prompt strings or structured-prompt objects."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, (str, dict)):
        data = [data]
    return [coerce_prompt_text(item) for item in data]


def coerce_prompt_text(item) -> str:
    if isinstance(item, StructuredPrompt):
        return item.flatten()
    if isinstance(item, dict):
        return StructuredPrompt.from_dict(item).flatten()
    if isinstance(item, str):
        if not item.strip():
            raise EmptyPrompt("prompt text is empty")
        return item
    raise TypeError(f"unsupported prompt entry: {type(item).__name__}")


def read_prompt_file(path) -> str:
    """A single prompt from a text file, or a JSON string/object."""
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        return coerce_prompt_text(raw.strip())
    return coerce_prompt_text(data)
