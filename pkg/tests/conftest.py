from __future__ import annotations

import json
from pathlib import Path

import pytest

from detective_profiler.config import PipelineConfig
from detective_profiler.gateway import Gateway, ModelSpec
from detective_profiler.pipeline import CharacterSpec

FIXTURES = Path(__file__).parent / "fixtures"

PAPER_NAMES = [
    "Hercule Poirot", "Sherlock Holmes", "William Murdoch", "Columbo",
    "Father Brown", "Miss Marple", "Auguste Dupin",
]


class NoNetworkBackend:
    """Fails the test if anything tries to dispatch."""

    def __init__(self):
        self.attempts = 0

    def send(self, spec, request, api_key):
        self.attempts += 1
        raise AssertionError(f"unexpected dispatch to {spec.model_id}")


def mock_models(n: int = 4) -> list[ModelSpec]:
    models = [
        ModelSpec(f"m{i}", "mock", "mock://heuristic", f"mock-{i}", frozenset({"describer", "identifier"}))
        for i in range(1, n + 1)
    ]
    models.append(ModelSpec("helper", "mock", "mock://heuristic", "mock-helper", frozenset({"extractor", "grouper"})))
    return models


def small_config(tmp_path: Path, *, mode: str = "mock", n_models: int = 4,
                 characters=("Hercule Poirot", "Sherlock Holmes"), **kw) -> PipelineConfig:
    return PipelineConfig(
        roster=[CharacterSpec(c) for c in characters],
        registry=mock_models(n_models),
        extractor_id="helper",
        grouper_id="helper",
        mode=mode,
        runs_dir=str(tmp_path / "runs"),
        **kw,
    )


def write_config(path: Path, config: PipelineConfig) -> Path:
    path.write_text(json.dumps(config.to_dict(), indent=2))
    return path


@pytest.fixture
def no_network():
    return NoNetworkBackend()


@pytest.fixture
def echo_spec():
    return ModelSpec("echo", "mock", "mock://echo", roles=frozenset({"describer"}))


@pytest.fixture
def record_gateway(tmp_path):
    def make(mode="record", **kw):
        return Gateway(models=[], mode=mode, cache_dir=tmp_path / "cache", **kw)
    return make


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
