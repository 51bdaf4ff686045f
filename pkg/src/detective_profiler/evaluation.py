"""Phase 5: reverse identification and classification metrics."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

from .errors import PhaseError, ValidationError
from .gateway import ChatRequest, Gateway, ModelSpec, sanitize
from .pipeline import CharacterProfile
from .prompts import render_identification_prompt

UNPARSED = "UNPARSED"


@dataclass(frozen=True)
class Prediction:
    true_character: str
    model_id: str
    predicted: str
    raw_response: str

    @property
    def correct(self) -> bool:
        return self.predicted == self.true_character

    def to_dict(self) -> dict[str, Any]:
        return {
            "true_character": self.true_character,
            "model_id": self.model_id,
            "predicted": self.predicted,
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Prediction:
        return cls(data["true_character"], data["model_id"], data["predicted"], data["raw_response"])


def parse_identification(
    raw: str,
    roster: Sequence[str],
    aliases: Mapping[str, Iterable[str]] | None = None,
) -> str:
    """Resolve a free-text answer to one roster name, or ``UNPARSED``.

    An exact case-insensitive match on a name or alias wins; otherwise the
    answer is accepted only if exactly one roster name occurs inside it.
    """
    if not roster:
        raise ValidationError("roster must be non-empty")
    answer = " ".join(sanitize(raw).split()).casefold()
    answer = answer.rstrip(".!")
    lookup: dict[str, str] = {}
    for name in roster:
        lookup[name.casefold()] = name
        for alias in (aliases or {}).get(name, ()):
            lookup.setdefault(alias.casefold(), name)
    if answer in lookup:
        return lookup[answer]
    hits = [name for name in roster if name.casefold() in answer]
    return hits[0] if len(hits) == 1 else UNPARSED


def identify(
    profile: CharacterProfile,
    roster: Sequence[str],
    identifier: ModelSpec,
    gateway: Gateway,
    *,
    aliases: Mapping[str, Iterable[str]] | None = None,
    max_output_tokens: int = 1024,
) -> Prediction:
    if not profile.groups:
        raise ValidationError(f"profile for {profile.character} is empty")
    if profile.character not in roster:
        raise ValidationError(f"{profile.character} is not in the roster")
    # identifiers see group labels only; scores stay internal
    request = ChatRequest(
        model_id=identifier.model_id,
        prompt_text=render_identification_prompt(profile.trait_labels, list(roster)),
        max_output_tokens=max_output_tokens,
        request_tag=f"validate/{profile.character}/{identifier.model_id}",
    )
    result = gateway.complete(identifier, request)
    predicted = parse_identification(result.clean_text, roster, aliases)
    return Prediction(profile.character, identifier.model_id, predicted, result.raw_text)


def identify_all(
    profiles: Sequence[CharacterProfile],
    roster: Sequence[str],
    identifiers: Sequence[ModelSpec],
    gateway: Gateway,
    *,
    aliases: Mapping[str, Iterable[str]] | None = None,
    max_output_tokens: int = 1024,
    max_workers: int = 8,
) -> list[Prediction]:
    pairs = [(p, m) for p in profiles if p.groups for m in identifiers]
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = [
            pool.submit(identify, p, roster, m, gateway, aliases=aliases, max_output_tokens=max_output_tokens)
            for p, m in pairs
        ]
    done, first_error = [], None
    for (p, m), future in zip(pairs, futures):
        exc = future.exception()
        if exc is None:
            done.append(future.result())
        elif first_error is None:
            first_error = (p, m, exc)
    if first_error:
        p, m, exc = first_error
        completed = sorted(f"{d.true_character}|{d.model_id}" for d in done)
        raise PhaseError("validate", f"{p.character}|{m.model_id}: {type(exc).__name__}: {exc}", completed) from exc
    return sorted(done, key=lambda d: (d.true_character, d.model_id))


@dataclass(frozen=True)
class ClassStats:
    correct: int
    total: int

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total) if self.total else Fraction(0)


@dataclass(frozen=True)
class EvalReport:
    """Per-class and overall accuracy plus the confusion matrix.

    ``confusion[actual][predicted]`` has a column for every roster name and
    one for ``UNPARSED``.
    """

    roster: tuple[str, ...]
    per_class: dict[str, ClassStats]
    overall: ClassStats
    confusion: dict[str, dict[str, int]]

    @property
    def columns(self) -> list[str]:
        return [*self.roster, UNPARSED]

    @property
    def unparsed_total(self) -> int:
        return sum(row[UNPARSED] for row in self.confusion.values())

    def matrix(self, include_unparsed: bool = False) -> list[list[int]]:
        cols = self.columns if include_unparsed else list(self.roster)
        return [[self.confusion[a][p] for p in cols] for a in self.roster]

    def to_dict(self) -> dict[str, Any]:
        return {
            "roster": list(self.roster),
            "per_class": [
                {"character": c, "correct": s.correct, "total": s.total, "accuracy": str(s.accuracy)}
                for c, s in self.per_class.items()
            ],
            "overall": {
                "correct": self.overall.correct,
                "total": self.overall.total,
                "accuracy": str(self.overall.accuracy),
            },
            "confusion": {
                "columns": self.columns,
                "rows": [{"actual": a, "counts": [self.confusion[a][p] for p in self.columns]} for a in self.roster],
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalReport:
        roster = tuple(data["roster"])
        columns = data["confusion"]["columns"]
        if columns != [*roster, UNPARSED]:
            raise ValidationError("confusion columns do not match the roster")
        confusion = {row["actual"]: dict(zip(columns, row["counts"])) for row in data["confusion"]["rows"]}
        per_class = {e["character"]: ClassStats(e["correct"], e["total"]) for e in data["per_class"]}
        overall = ClassStats(data["overall"]["correct"], data["overall"]["total"])
        return cls(roster, per_class, overall, confusion)


def evaluate(predictions: Sequence[Prediction], roster: Sequence[str]) -> EvalReport:
    """Count predictions into a confusion matrix; ``UNPARSED`` is always wrong."""
    if not predictions:
        raise ValidationError("no predictions to evaluate")
    roster = tuple(roster)
    if len(set(roster)) != len(roster):
        raise ValidationError("roster names must be unique")
    columns = [*roster, UNPARSED]
    confusion = {a: dict.fromkeys(columns, 0) for a in roster}
    for p in predictions:
        if p.true_character not in confusion:
            raise ValidationError(f"{p.true_character!r} is not in the roster")
        predicted = p.predicted if p.predicted in confusion else UNPARSED
        confusion[p.true_character][predicted] += 1

    per_class = {a: ClassStats(confusion[a][a], sum(confusion[a].values())) for a in roster}
    overall = ClassStats(sum(s.correct for s in per_class.values()), sum(s.total for s in per_class.values()))
    return EvalReport(roster, per_class, overall, confusion)
