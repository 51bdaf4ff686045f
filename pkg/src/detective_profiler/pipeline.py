"""Phases 1-4: descriptions, trait extraction, grouping, consensus profiles."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any

from .errors import ExtractionError, GroupingError, PhaseError, ValidationError
from .gateway import ChatRequest, Gateway, ModelSpec
from .prompts import render_description_prompt, render_extraction_prompt, render_grouping_prompt

logger = logging.getLogger(__name__)

MAX_SENTENCES = 5
DEFAULT_THRESHOLD = Fraction(1, 5)


def warning(phase: str, kind: str, detail: str, **extra: str) -> dict[str, str]:
    """Structured manifest warning."""
    entry = {"phase": phase, "kind": kind, "detail": detail}
    entry.update(extra)
    return entry


def _emit(sink: list[dict[str, str]] | None, entry: dict[str, str]) -> None:
    level = logging.INFO if entry["kind"] == "inconsistent" else logging.WARNING
    logger.log(level, "%s/%s: %s", entry["phase"], entry["kind"], entry["detail"])
    if sink is not None:
        sink.append(entry)


@dataclass(frozen=True)
class CharacterSpec:
    name: str
    aliases: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValidationError("character name must be non-empty")
        object.__setattr__(self, "aliases", frozenset(self.aliases))

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "aliases": sorted(self.aliases)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CharacterSpec:
        return cls(data["name"], frozenset(data.get("aliases", ())))


def validate_roster(roster: Sequence[CharacterSpec]) -> None:
    if not roster:
        raise ValidationError("roster must be non-empty")
    names = [c.name for c in roster]
    if len(set(names)) != len(names):
        raise ValidationError("character names must be unique within the roster")


_SENTENCE_END_RE = re.compile(r"(?<=[.!?])(?:\s+|$)")


def count_sentences(text: str) -> int:
    """Sentences end at '.', '!' or '?' followed by whitespace or end of text."""
    return sum(1 for part in _SENTENCE_END_RE.split(text.strip()) if part.strip())


@dataclass(frozen=True)
class Description:
    character: str
    model_id: str
    text: str
    sentence_count: int

    @property
    def length_warning(self) -> bool:
        return self.sentence_count > MAX_SENTENCES

    def to_dict(self) -> dict[str, Any]:
        return {
            "character": self.character,
            "model_id": self.model_id,
            "text": self.text,
            "sentence_count": self.sentence_count,
            "length_warning": self.length_warning,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Description:
        return cls(data["character"], data["model_id"], data["text"], data["sentence_count"])


@dataclass(frozen=True)
class TraitList:
    character: str
    model_id: str
    traits: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "traits", tuple(self.traits))
        if any(not t for t in self.traits):
            raise ValidationError("trait lists may not contain empty strings")
        if len(set(self.traits)) != len(self.traits):
            raise ValidationError("trait lists may not contain exact duplicates")

    def to_dict(self) -> dict[str, Any]:
        return {"character": self.character, "model_id": self.model_id, "traits": list(self.traits)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TraitList:
        return cls(data["character"], data["model_id"], tuple(data["traits"]))


def normalize(text: str) -> str:
    """Lowercase, NFKC-normalize, collapse whitespace, drop trailing punctuation."""
    text = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", text).lower())
    text = " ".join(text.split())
    while text and (text[-1].isspace() or unicodedata.category(text[-1]).startswith("P")):
        text = text[:-1]
    return text


@dataclass(frozen=True)
class TraitRecord:
    text: str
    normalized_text: str
    source_models: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_models", frozenset(self.source_models))
        if not self.source_models:
            raise ValidationError(f"trait {self.text!r} has no source models")

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "normalized_text": self.normalized_text,
            "source_models": sorted(self.source_models),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TraitRecord:
        return cls(data["text"], data["normalized_text"], frozenset(data["source_models"]))


@dataclass(frozen=True)
class TraitGroup:
    label: str
    members: tuple[TraitRecord, ...]
    consensus_score: Fraction | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValidationError(f"group {self.label!r} has no members")

    @property
    def supporting_models(self) -> frozenset[str]:
        return frozenset().union(*(m.source_models for m in self.members))

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "members": [m.to_dict() for m in self.members],
            "supporting_models": sorted(self.supporting_models),
            "consensus_score": None if self.consensus_score is None else str(self.consensus_score),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TraitGroup:
        score = data.get("consensus_score")
        group = cls(
            data["label"],
            tuple(TraitRecord.from_dict(m) for m in data["members"]),
            None if score is None else Fraction(score),
        )
        if sorted(group.supporting_models) != list(data.get("supporting_models", sorted(group.supporting_models))):
            raise ValidationError(f"group {group.label!r}: supporting_models disagree with members")
        return group


@dataclass(frozen=True)
class CharacterProfile:
    character: str
    groups: tuple[TraitGroup, ...]
    threshold: Fraction
    total_models: int
    excluded: tuple[TraitGroup, ...] = field(default=())

    @property
    def trait_labels(self) -> list[str]:
        return [g.label for g in self.groups]

    def to_dict(self) -> dict[str, Any]:
        return {
            "character": self.character,
            "threshold": str(self.threshold),
            "total_models": self.total_models,
            "groups": [g.to_dict() for g in self.groups],
            "excluded": [g.to_dict() for g in self.excluded],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CharacterProfile:
        return cls(
            data["character"],
            tuple(TraitGroup.from_dict(g) for g in data["groups"]),
            Fraction(data["threshold"]),
            data["total_models"],
            tuple(TraitGroup.from_dict(g) for g in data.get("excluded", ())),
        )


def _tag(phase: str, character: str, model_id: str) -> str:
    return f"{phase}/{character}/{model_id}"


def generate_descriptions(
    roster: Sequence[CharacterSpec],
    describers: Sequence[ModelSpec],
    gateway: Gateway,
    *,
    max_output_tokens: int = 1024,
    max_workers: int = 8,
    warnings: list[dict[str, str]] | None = None,
) -> list[Description]:
    """Ask every describer about every character; one record per pair.

    On failure the pairs that did complete are carried by the raised
    :class:`PhaseError` so the caller can record them.
    """
    if not roster:
        raise ValidationError("roster must be non-empty")
    if not describers:
        raise ValidationError("at least one describer model is required")

    def one(character: CharacterSpec, spec: ModelSpec) -> Description:
        request = ChatRequest(
            model_id=spec.model_id,
            prompt_text=render_description_prompt(character.name),
            max_output_tokens=max_output_tokens,
            request_tag=_tag("describe", character.name, spec.model_id),
        )
        text = gateway.complete(spec, request).clean_text
        if not text:
            raise ValidationError(f"empty description from {spec.model_id} for {character.name}")
        return Description(character.name, spec.model_id, text, count_sentences(text))

    pairs = [(c, m) for c in roster for m in describers]
    results, failures = fan_out(one, pairs, max_workers)
    if failures:
        done = sorted(f"{d.character}|{d.model_id}" for d in results)
        (c, m), exc = failures[0]
        raise PhaseError("describe", f"{c.name}|{m.model_id}: {type(exc).__name__}: {exc}", done) from exc

    results.sort(key=lambda d: (d.character, d.model_id))
    for d in results:
        if d.length_warning:
            _emit(warnings, warning("describe", "length", f"{d.sentence_count} sentences",
                                    character=d.character, model_id=d.model_id))
    return results


def fan_out(fn, items, max_workers):
    """Run ``fn(*item)`` for each item on a thread pool; returns (results, failures)."""
    results, failures = [], []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = {pool.submit(fn, *item): item for item in items}
        for future in as_completed(futures):
            try:
                results.append(future.result())
            except Exception as exc:  # collected and re-raised by the caller
                failures.append((futures[future], exc))
    failures.sort(key=lambda f: items.index(f[0]))
    return results, failures


_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+\.)\s+(.*\S)\s*$")


def parse_bullet_list(text: str) -> list[str]:
    """Items are lines starting with '-', '*', '•' or 'N.'; other lines are ignored."""
    items = []
    for line in text.splitlines():
        match = _BULLET_RE.match(line)
        if match:
            items.append(match.group(1).strip())
    return items


def extract_traits(
    description: Description,
    extractor: ModelSpec,
    gateway: Gateway,
    *,
    max_output_tokens: int = 1024,
) -> TraitList:
    if not extractor.has_role("extractor"):
        raise ValidationError(f"{extractor.model_id} does not carry the extractor role")
    request = ChatRequest(
        model_id=extractor.model_id,
        prompt_text=render_extraction_prompt(description.text),
        max_output_tokens=max_output_tokens,
        request_tag=_tag("extract", description.character, description.model_id),
    )
    items = parse_bullet_list(gateway.complete(extractor, request).clean_text)
    if not items:
        raise ExtractionError(
            f"no bullet items extracted for ({description.character}, {description.model_id})"
        )
    return TraitList(description.character, description.model_id, tuple(dict.fromkeys(items)))


def extract_all(
    descriptions: Sequence[Description],
    extractor: ModelSpec,
    gateway: Gateway,
    *,
    max_output_tokens: int = 1024,
    max_workers: int = 8,
) -> list[TraitList]:
    def one(description: Description) -> TraitList:
        return extract_traits(description, extractor, gateway, max_output_tokens=max_output_tokens)

    results, failures = fan_out(one, [(d,) for d in descriptions], max_workers)
    if failures:
        done = sorted(f"{t.character}|{t.model_id}" for t in results)
        (d,), exc = failures[0]
        raise PhaseError("extract", f"{d.character}|{d.model_id}: {type(exc).__name__}: {exc}", done) from exc
    return sorted(results, key=lambda t: (t.character, t.model_id))


def dedupe_traits(lists: Sequence[TraitList]) -> list[TraitRecord]:
    """Merge traits across models by normalized text, keeping provenance.

    The canonical text of a record is its first occurrence when lists are
    visited in model_id order.
    """
    characters = {tl.character for tl in lists}
    if len(characters) > 1:
        raise ValidationError(f"trait lists mix characters: {sorted(characters)}")
    texts: dict[str, str] = {}
    sources: dict[str, set[str]] = {}
    for tl in sorted(lists, key=lambda t: t.model_id):
        for trait in tl.traits:
            key = normalize(trait)
            if not key:
                continue
            texts.setdefault(key, trait)
            sources.setdefault(key, set()).add(tl.model_id)
    return [TraitRecord(texts[k], k, frozenset(sources[k])) for k in texts]


_ANY_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def parse_group_response(text: str) -> list[tuple[str, list[str]]]:
    """Parse the grouper's JSON array into ``(label, traits)`` pairs."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        match = _ANY_FENCE_RE.search(text)
        if not match:
            raise GroupingError("grouping response is not valid JSON", text) from None
        try:
            data = json.loads(match.group(1))
        except json.JSONDecodeError as exc:
            raise GroupingError(f"grouping response is not valid JSON: {exc}", text) from None

    if not isinstance(data, list):
        raise GroupingError("grouping response must be a JSON array", text)
    groups = []
    for entry in data:
        if not isinstance(entry, dict) or not isinstance(entry.get("label"), str):
            raise GroupingError("each group needs a string 'label'", text)
        traits = entry.get("traits")
        if not isinstance(traits, list) or not all(isinstance(t, str) for t in traits):
            raise GroupingError(f"group {entry['label']!r} needs a list of string 'traits'", text)
        groups.append((entry["label"], traits))
    return groups


def reconcile_groups(
    raw_groups: Iterable[tuple[str, Sequence[str]]],
    records: Sequence[TraitRecord],
    *,
    character: str = "",
    warnings: list[dict[str, str]] | None = None,
) -> list[TraitGroup]:
    """Map grouper output back onto input records so each record lands in one group.

    Unknown strings are dropped, records claimed twice stay in the first
    group, and records nobody claimed become singleton groups.
    """
    index = {r.normalized_text: r for r in records}
    assigned: set[str] = set()
    groups: list[TraitGroup] = []
    for label, strings in raw_groups:
        members: list[TraitRecord] = []
        for s in strings:
            key = normalize(s)
            record = index.get(key)
            if record is None:
                _emit(warnings, warning("group", "fabricated", f"dropped unknown trait {s!r}", character=character))
                continue
            if key in assigned:
                if not any(m.normalized_text == key for m in members):
                    _emit(warnings, warning("group", "duplicate",
                                            f"{record.text!r} already grouped; kept first assignment",
                                            character=character))
                continue
            assigned.add(key)
            members.append(record)
        if members:
            groups.append(TraitGroup(label.strip() or members[0].text, tuple(members)))
        else:
            _emit(warnings, warning("group", "empty", f"group {label!r} has no known traits", character=character))
    for record in records:
        if record.normalized_text not in assigned:
            _emit(warnings, warning("group", "unassigned", f"{record.text!r} made a singleton group",
                                    character=character))
            assigned.add(record.normalized_text)
            groups.append(TraitGroup(record.text, (record,)))
    return groups


def group_traits(
    records: Sequence[TraitRecord],
    grouper: ModelSpec,
    gateway: Gateway,
    *,
    character: str = "",
    total_models: int | None = None,
    max_output_tokens: int = 1024,
    warnings: list[dict[str, str]] | None = None,
) -> list[TraitGroup]:
    if not records:
        raise ValidationError("cannot group an empty trait set")
    if not grouper.has_role("grouper"):
        raise ValidationError(f"{grouper.model_id} does not carry the grouper role")
    request = ChatRequest(
        model_id=grouper.model_id,
        prompt_text=render_grouping_prompt([r.text for r in records]),
        max_output_tokens=max_output_tokens,
        request_tag=_tag("group", character, grouper.model_id),
    )
    result = gateway.complete(grouper, request)
    try:
        raw_groups = parse_group_response(result.clean_text)
    except GroupingError as exc:
        raise GroupingError(f"{character}: {exc}", result.raw_text) from None
    groups = reconcile_groups(raw_groups, records, character=character, warnings=warnings)
    if total_models is not None:
        groups = [replace(g, consensus_score=consensus_score(g, total_models)) for g in groups]
    return groups


def consensus_score(group: TraitGroup, total_models: int) -> Fraction:
    """Fraction of the ``total_models`` describers that back at least one member."""
    if total_models < 1:
        raise ValidationError("total_models must be positive")
    supporters = len(group.supporting_models)
    if supporters > total_models:
        raise ValidationError(f"group {group.label!r} has {supporters} supporters but only {total_models} models")
    return Fraction(supporters, total_models)


def _rank(group: TraitGroup) -> tuple[Fraction, str]:
    return (-group.consensus_score, group.label)


def synthesize_profile(
    character: str,
    groups: Sequence[TraitGroup],
    threshold: Fraction,
    total_models: int,
    *,
    warnings: list[dict[str, str]] | None = None,
) -> CharacterProfile:
    """Keep groups whose consensus score reaches ``threshold`` (inclusive)."""
    threshold = Fraction(threshold)
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold must be in (0, 1], got {threshold}")
    scored = [replace(g, consensus_score=consensus_score(g, total_models)) for g in groups]
    kept = sorted((g for g in scored if g.consensus_score >= threshold), key=_rank)
    dropped = sorted((g for g in scored if g.consensus_score < threshold), key=_rank)
    for g in dropped:
        _emit(warnings, warning("synthesize", "inconsistent",
                                f"{g.label!r} scored {g.consensus_score} < {threshold}", character=character))
    if not kept:
        _emit(warnings, warning("synthesize", "empty-profile", "no group reached the threshold",
                                character=character))
    return CharacterProfile(character, tuple(kept), threshold, total_models, tuple(dropped))
