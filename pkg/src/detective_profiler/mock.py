"""Offline backends for mock runs and tests.

:class:`HeuristicMockBackend` recognizes which of the four workflow prompts
it was sent and answers in the expected format. Each character gets a
fixed pool of "facets" derived from a hash of its name, and every model
mentions a model-dependent subset of them, so the consensus and reverse
identification phases have something real to work on without a network.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from collections.abc import Callable, Mapping

from .gateway import ChatRequest, ModelSpec

ADJECTIVES = (
    "meticulous", "intuitive", "systematic", "empirical", "theatrical", "patient",
    "psychological", "forensic", "conversational", "moral", "skeptical", "analogical",
    "relentless", "unassuming", "experimental", "imaginative", "quiet", "rigorous",
    "social", "deductive", "abductive", "technical", "empathetic", "methodical",
)
NOUNS = (
    "observation", "questioning", "reconstruction", "inference", "profiling", "listening",
    "experimentation", "documentation", "confrontation", "gossip", "analogy", "deduction",
    "intuition", "disguise", "verification", "synthesis", "elimination", "patience",
    "rapport", "insight", "memory", "logic", "timing", "scrutiny",
)
FACETS_PER_CHARACTER = 8
_SENTENCES = (
    "The investigative method relies on {}.",
    "It is distinguished by {}.",
    "The detective consistently applies {}.",
)
_SENTENCE_RE = re.compile(r"(?:relies on|distinguished by|consistently applies) (.+?)\.$")


def _seed(*parts: str) -> int:
    return int.from_bytes(hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()[:8], "big")


def facets(character: str) -> list[str]:
    """The fixed facet pool for ``character`` (adjective + noun phrases)."""
    rng = random.Random(_seed("facets", character))
    combos = rng.sample([(a, n) for a in ADJECTIVES for n in NOUNS], FACETS_PER_CHARACTER)
    return [f"{a} {n}" for a, n in combos]


def _bullet_block(prompt: str, heading: str) -> list[str]:
    lines = prompt.splitlines()
    try:
        start = lines.index(heading) + 1
    except ValueError:
        return []
    items = []
    for line in lines[start:]:
        if not line.startswith("- "):
            break
        items.append(line[2:])
    return items


def _facet_of(trait: str) -> str:
    text = trait.strip().rstrip(".").lower()
    return text[len("use of "):] if text.startswith("use of ") else text


class HeuristicMockBackend:
    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str:
        prompt = request.prompt_text
        if prompt.startswith("Task: Generate a concise and formal description"):
            return self._describe(prompt, spec.model_id)
        if prompt.startswith("Extract the key traits"):
            return self._extract(prompt)
        if "Respond only with the name of the detective" in prompt:
            return self._identify(prompt, spec.model_id)
        if "group together all traits" in prompt:
            return self._group(prompt)
        return prompt

    def _describe(self, prompt: str, model_id: str) -> str:
        match = re.search(r"fictional detective (.+?)\.\n", prompt)
        name = match.group(1) if match else "unknown"
        rng = random.Random(_seed("describe", name, model_id))
        pool = facets(name)
        # earlier facets are mentioned by more models
        chosen = [f for i, f in enumerate(pool) if rng.random() < 0.95 - 0.11 * i][:5] or pool[:1]
        text = " ".join(_SENTENCES[i % len(_SENTENCES)].format(f) for i, f in enumerate(chosen))
        if _seed("think", model_id) % 4 == 0:
            text = f"<think>Recalling what is known about {name}.</think>\n{text}"
        return text

    def _extract(self, prompt: str) -> str:
        description = prompt.split("\n\nText: ", 1)[-1]
        style = _seed("style", description) % 3
        bullets = []
        for sentence in re.split(r"(?<=\.)\s+", description.strip()):
            match = _SENTENCE_RE.search(sentence)
            if not match:
                continue
            facet = match.group(1)
            if style == 2:
                bullets.append(f"- Use of {facet}")
            else:
                bullets.append("- " + facet[0].upper() + facet[1:] + ("." if style == 1 else ""))
        return "\n".join(bullets)

    def _group(self, prompt: str) -> str:
        by_noun: dict[str, list[str]] = {}
        for trait in _bullet_block(prompt, "List of Traits:"):
            facet = _facet_of(trait)
            words = facet.split()
            key = words[-1] if len(words) == 2 else facet
            by_noun.setdefault(key, []).append(trait)
        groups = []
        for members in by_noun.values():
            core = sorted({_facet_of(t) for t in members})
            groups.append({"label": "Reliance on " + " and ".join(core), "traits": members})
        return "```json\n" + json.dumps(groups, indent=2) + "\n```"

    def _identify(self, prompt: str, model_id: str) -> str:
        profile = " ".join(_bullet_block(prompt, "List of Traits:")).lower()
        roster = _bullet_block(prompt, "Choose only from the following list:")
        scores = [(sum(f in profile for f in facets(name)), name) for name in roster]
        best = max((s for s, _ in scores), default=0)
        if best == 0:
            return "I cannot determine the detective from these traits."
        name = next(n for s, n in scores if s == best)
        style = _seed("answer", model_id) % 3
        return ("**{}**", "{}.", "{}")[style].format(name)


class ScriptedBackend:
    """Answers from a fixed string, a mapping keyed by model_id, or a callable."""

    def __init__(self, responses: str | Mapping[str, str] | Callable[[ModelSpec, ChatRequest], str]):
        self.responses = responses
        self.requests: list[ChatRequest] = []

    def send(self, spec: ModelSpec, request: ChatRequest, api_key: str | None) -> str:
        self.requests.append(request)
        if isinstance(self.responses, str):
            return self.responses
        if callable(self.responses):
            return self.responses(spec, request)
        return self.responses[spec.model_id]
