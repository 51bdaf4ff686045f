"""Run phases against the artifact store, resuming from whatever is on disk."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from typing import Any

from .config import PipelineConfig
from .errors import ConfigError, PhaseError, ProfilerError, ValidationError
from .evaluation import EvalReport, Prediction, evaluate, identify_all
from .gateway import Backend, Gateway
from .pipeline import (
    CharacterProfile,
    Description,
    TraitGroup,
    TraitList,
    TraitRecord,
    dedupe_traits,
    extract_all,
    fan_out,
    generate_descriptions,
    group_traits,
    synthesize_profile,
    warning,
)
from .store import ArtifactStore, envelope

logger = logging.getLogger(__name__)

PHASES = ("describe", "extract", "group", "synthesize", "validate")
PHASE_ARTIFACTS = {
    "describe": ("descriptions",),
    "extract": ("traits",),
    "group": ("groups",),
    "synthesize": ("profiles",),
    "validate": ("predictions", "report"),
}


def check_partition(records: Sequence[TraitRecord], groups: Sequence[TraitGroup]) -> None:
    """Every input record must sit in exactly one group."""
    seen: dict[str, int] = {}
    for g in groups:
        for m in g.members:
            seen[m.normalized_text] = seen.get(m.normalized_text, 0) + 1
    expected = {r.normalized_text for r in records}
    if set(seen) != expected or any(n != 1 for n in seen.values()):
        raise ValidationError("grouping does not partition the trait records")


def check_provenance(records: Sequence[TraitRecord], groups: Sequence[TraitGroup]) -> None:
    before = frozenset().union(*(r.source_models for r in records))
    after = frozenset().union(*(g.supporting_models for g in groups))
    if before != after:
        raise ValidationError("grouping lost or invented source models")


class Runner:
    """Executes phases for one ``run_id``.

    ``run(PHASES, resume=True)`` reuses every valid artifact up to the first
    missing one and recomputes from there on. With ``resume=False`` each
    requested phase is recomputed and refuses to overwrite unless ``force``.
    """

    def __init__(
        self,
        config: PipelineConfig,
        run_id: str,
        *,
        store: ArtifactStore | None = None,
        gateway: Gateway | None = None,
        backends: Mapping[str, Backend] | None = None,
        force: bool = False,
        max_workers: int = 8,
    ):
        self.config = config
        self.run_id = run_id
        self.store = store or ArtifactStore(config.runs_dir)
        self.force = force
        self.max_workers = max_workers
        self.gateway = gateway or Gateway(
            models=config.registry,
            mode=config.mode,
            cache_dir=config.cache_dir or self.store.cache_dir(run_id),
            backends=backends or {},
            max_in_flight=config.max_in_flight,
            rate_per_second=config.rate_per_second,
        )
        self.computed: list[str] = []
        self.manifest = self._open_manifest()

    def _open_manifest(self) -> dict[str, Any]:
        config_hash = self.config.content_hash()
        manifest = self.store.load_manifest(self.run_id)
        if manifest is None:
            return self.store.new_manifest(self.run_id, config_hash)
        if manifest["config_hash"] != config_hash:
            if not self.force:
                raise ConfigError(
                    f"run {self.run_id!r} was created with a different configuration; "
                    "use a new --run-id or --force"
                )
            manifest["config_hash"] = config_hash
        return manifest

    def run(self, phases: Sequence[str] = PHASES, *, resume: bool = True) -> None:
        unknown = [p for p in phases if p not in PHASES]
        if unknown:
            raise ValidationError(f"unknown phases {unknown}")
        recomputing = False
        for phase in PHASES:
            if phase not in phases:
                continue
            if resume and not recomputing and not self.force and self._is_complete(phase):
                logger.info("%s: reusing artifacts on disk", phase)
                continue
            self._run_phase(phase, overwrite=resume or self.force)
            recomputing = True

    def _is_complete(self, phase: str) -> bool:
        return all(self.store.phase_complete(self.run_id, a) for a in PHASE_ARTIFACTS[phase])

    def _run_phase(self, phase: str, *, overwrite: bool) -> None:
        warnings: list[dict[str, str]] = []
        for artifact in PHASE_ARTIFACTS[phase]:
            self.manifest["phase_status"][artifact] = "pending"
        try:
            payloads = getattr(self, f"_{phase}")(warnings)
            for artifact, payload in payloads.items():
                self.store.write_artifact(self.run_id, artifact, payload, force=overwrite)
        except ProfilerError as exc:
            for artifact in PHASE_ARTIFACTS[phase]:
                self.manifest["phase_status"][artifact] = "failed"
            if isinstance(exc, PhaseError):
                self.manifest["partial"][phase] = exc.completed
            self._record_warnings(phase, warnings)
            self.store.save_manifest(self.manifest)
            raise
        for artifact in PHASE_ARTIFACTS[phase]:
            self.manifest["phase_status"][artifact] = "complete"
        self.manifest["partial"].pop(phase, None)
        self._record_warnings(phase, warnings)
        self.store.save_manifest(self.manifest)
        self.computed.append(phase)
        logger.info("%s: complete", phase)

    def _record_warnings(self, phase: str, warnings: list[dict[str, str]]) -> None:
        kept = [w for w in self.manifest["warnings"] if w.get("phase") != phase]
        self.manifest["warnings"] = kept + warnings

    def _read(self, artifact: str) -> dict[str, Any]:
        return self.store.read_artifact(self.run_id, artifact)

    # phases

    def _describe(self, warnings):
        descriptions = generate_descriptions(
            self.config.roster, self.config.describers, self.gateway,
            max_output_tokens=self.config.max_output_tokens, max_workers=self.max_workers, warnings=warnings,
        )
        return {"descriptions": envelope("descriptions", descriptions=[d.to_dict() for d in descriptions])}

    def _extract(self, warnings):
        descriptions = [Description.from_dict(d) for d in self._read("descriptions")["descriptions"]]
        lists = extract_all(
            descriptions, self.config.extractor, self.gateway,
            max_output_tokens=self.config.max_output_tokens, max_workers=self.max_workers,
        )
        return {"traits": envelope("traits", trait_lists=[t.to_dict() for t in lists])}

    def _group(self, warnings):
        lists = [TraitList.from_dict(t) for t in self._read("traits")["trait_lists"]]
        total = len(self.config.describers)

        def one(name: str) -> dict[str, Any]:
            records = dedupe_traits([t for t in lists if t.character == name])
            local: list[dict[str, str]] = []
            groups = []
            if records:
                groups = group_traits(
                    records, self.config.grouper, self.gateway, character=name, total_models=total,
                    max_output_tokens=self.config.max_output_tokens, warnings=local,
                )
                check_partition(records, groups)
                check_provenance(records, groups)
            else:
                local.append(warning("group", "no-traits", "no traits to group", character=name))
            return {"character": name, "groups": [g.to_dict() for g in groups], "warnings": local}

        names = self.config.roster_names
        done, failures = fan_out(one, [(n,) for n in names], self.max_workers)
        if failures:
            (name,), exc = failures[0]
            raise PhaseError("group", f"{name}: {type(exc).__name__}: {exc}", sorted(d["character"] for d in done)) from exc
        done.sort(key=lambda d: names.index(d["character"]))
        for d in done:
            warnings.extend(d.pop("warnings"))
        return {"groups": envelope("groups", total_models=total, characters=done)}

    def _synthesize(self, warnings):
        data = self._read("groups")
        profiles = [
            synthesize_profile(
                c["character"], [TraitGroup.from_dict(g) for g in c["groups"]],
                self.config.threshold, data["total_models"], warnings=warnings,
            )
            for c in data["characters"]
        ]
        return {"profiles": envelope(
            "profiles", threshold=str(self.config.threshold), profiles=[p.to_dict() for p in profiles],
        )}

    def _validate(self, warnings):
        profiles = [CharacterProfile.from_dict(p) for p in self._read("profiles")["profiles"]]
        for p in profiles:
            if not p.groups:
                warnings.append(warning("validate", "skipped", "empty profile not sent for identification",
                                        character=p.character))
        predictions = identify_all(
            profiles, self.config.roster_names, self.config.identifiers, self.gateway,
            aliases=self.config.aliases, max_output_tokens=self.config.max_output_tokens,
            max_workers=self.max_workers,
        )
        report = evaluate(predictions, self.config.roster_names)
        return {
            "predictions": envelope("predictions", identifier_input="labels-only",
                                    predictions=[p.to_dict() for p in predictions]),
            "report": envelope("report", **report.to_dict()),
        }


def load_profiles(store: ArtifactStore, run_id: str) -> list[CharacterProfile]:
    return [CharacterProfile.from_dict(p) for p in store.read_artifact(run_id, "profiles")["profiles"]]


def load_predictions(store: ArtifactStore, run_id: str) -> list[Prediction]:
    return [Prediction.from_dict(p) for p in store.read_artifact(run_id, "predictions")["predictions"]]


def load_report(store: ArtifactStore, run_id: str) -> EvalReport:
    data = dict(store.read_artifact(run_id, "report"))
    data.pop("schema_version")
    data.pop("phase")
    return EvalReport.from_dict(data)
