"""Multi-model profiling of fictional characters' investigative traits.

Five phases: every describer model writes a description of each character,
an extractor turns descriptions into bullet traits, a grouper merges
equivalent traits (keeping which models produced them), groups backed by
enough models form the character's profile, and identifier models try to
name the character from that profile alone.
"""

from .config import PAPER_REGISTRY, PAPER_ROSTER, PipelineConfig, load_config, paper_config
from .evaluation import UNPARSED, EvalReport, Prediction, evaluate, identify, parse_identification
from .gateway import ChatRequest, CompletionResult, Gateway, ModelSpec, cache_key, sanitize
from .pipeline import (
    CharacterProfile,
    CharacterSpec,
    Description,
    TraitGroup,
    TraitList,
    TraitRecord,
    consensus_score,
    dedupe_traits,
    extract_traits,
    generate_descriptions,
    group_traits,
    normalize,
    parse_bullet_list,
    reconcile_groups,
    synthesize_profile,
)
from .prompts import (
    render_description_prompt,
    render_extraction_prompt,
    render_grouping_prompt,
    render_identification_prompt,
)
from .report import render_eval_report, render_trait_table
from .runner import Runner
from .store import ArtifactStore

__version__ = "0.1.0"

__all__ = [
    "PAPER_REGISTRY", "PAPER_ROSTER", "PipelineConfig", "load_config", "paper_config",
    "UNPARSED", "EvalReport", "Prediction", "evaluate", "identify", "parse_identification",
    "ChatRequest", "CompletionResult", "Gateway", "ModelSpec", "cache_key", "sanitize",
    "CharacterProfile", "CharacterSpec", "Description", "TraitGroup", "TraitList", "TraitRecord",
    "consensus_score", "dedupe_traits", "extract_traits", "generate_descriptions", "group_traits",
    "normalize", "parse_bullet_list", "reconcile_groups", "synthesize_profile",
    "render_description_prompt", "render_extraction_prompt", "render_grouping_prompt",
    "render_identification_prompt", "render_eval_report", "render_trait_table",
    "Runner", "ArtifactStore",
]
