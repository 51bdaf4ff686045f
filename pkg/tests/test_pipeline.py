from __future__ import annotations

import json
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from detective_profiler.errors import ExtractionError, GroupingError, PhaseError, ValidationError
from detective_profiler.gateway import Gateway, ModelSpec
from detective_profiler.mock import ScriptedBackend
from detective_profiler.pipeline import (
    CharacterProfile,
    CharacterSpec,
    Description,
    TraitGroup,
    TraitList,
    TraitRecord,
    consensus_score,
    count_sentences,
    dedupe_traits,
    extract_traits,
    generate_descriptions,
    group_traits,
    normalize,
    parse_bullet_list,
    parse_group_response,
    reconcile_groups,
    synthesize_profile,
)
from detective_profiler.runner import check_partition, check_provenance

HELPER = ModelSpec("helper", "mock", roles=frozenset({"extractor", "grouper"}))


def describers(n):
    return [ModelSpec(f"m{i:02d}", "mock", roles=frozenset({"describer"})) for i in range(1, n + 1)]


def scripted(text_or_fn):
    return Gateway([HELPER], mode="live", backends={"helper": ScriptedBackend(text_or_fn)})


def record(text, *models):
    return TraitRecord(text, normalize(text), frozenset(models))


def group(label, n_supporters, total=15):
    models = [f"m{i:02d}" for i in range(1, n_supporters + 1)]
    return TraitGroup(label, (record(label, *models),))


# oracle: count describers backing at least one member, one model at a time
def distinct_model_oracle(g: TraitGroup, all_models: list[str]) -> int:
    count = 0
    for model in all_models:
        for member in g.members:
            if model in member.source_models:
                count += 1
                break
    return count


# parse_bullet_list

@pytest.mark.parametrize(
    "text, expected",
    [
        ("- Keen observation\n- Logical deduction", ["Keen observation", "Logical deduction"]),
        ("intro line\n* A\n1. B", ["A", "B"]),
        ("", []),
        ("  • Indented bullet  \n12. Twelfth", ["Indented bullet", "Twelfth"]),
        ("Prose only, no bullets. Another sentence.", []),
        ("-\n- \n- x", ["x"]),
        ("*emphasis* line\n**bold** line", []),
    ],
)
def test_parse_bullet_list(text, expected):
    assert parse_bullet_list(text) == expected


# normalize

@pytest.mark.parametrize(
    "text, expected",
    [
        (" Keen  Observation. ", "keen observation"),
        ("A\u2014B", "a\u2014b"),
        ("keen observation.", "keen observation"),
        ("Ｆｕｌｌｗｉｄｔｈ", "fullwidth"),
        ("Ends with!?… ", "ends with"),
        ("tab\tand\nnewline", "tab and newline"),
    ],
)
def test_normalize(text, expected):
    assert normalize(text) == expected


@given(st.text(max_size=40))
def test_normalize_idempotent(text):
    assert normalize(normalize(text)) == normalize(text)


def test_count_sentences():
    assert count_sentences("One. Two! Three? Four.") == 4
    assert count_sentences("No terminal punctuation") == 1
    assert count_sentences("Dr.Who stays one. Two.") == 2


# generate_descriptions

def test_generate_descriptions_cardinality():
    gw = Gateway([], mode="mock")
    roster = [CharacterSpec(n) for n in ("A B", "C D", "E F")]
    out = generate_descriptions(roster, describers(5), gw)
    assert len(out) == 15
    assert [(d.character, d.model_id) for d in out] == sorted((d.character, d.model_id) for d in out)
    assert gw.calls["describe"] == 15


def test_generate_descriptions_single():
    spec = ModelSpec("solo", "mock", roles=frozenset({"describer"}))
    gw = Gateway([spec], mode="live", backends={"solo": ScriptedBackend("<think>x</think>It observes. It infers.")})
    [d] = generate_descriptions([CharacterSpec("Columbo")], [spec], gw)
    assert d == Description("Columbo", "solo", "It observes. It infers.", 2)
    assert not d.length_warning


def test_generate_descriptions_length_warning():
    spec = ModelSpec("chatty", "mock", roles=frozenset({"describer"}))
    gw = Gateway([spec], mode="live", backends={"chatty": ScriptedBackend("A. B. C. D. E. F. G.")})
    warnings = []
    [d] = generate_descriptions([CharacterSpec("Columbo")], [spec], gw, warnings=warnings)
    assert d.sentence_count == 7 and d.length_warning
    assert warnings[0]["kind"] == "length"


def test_generate_descriptions_partial_failure():
    specs = describers(3)

    def answer(spec, request):
        if spec.model_id == "m02":
            raise ValueError("backend exploded")
        return "Fine."

    gw = Gateway(specs, mode="live", backends={"mock": ScriptedBackend(answer)})
    with pytest.raises(PhaseError) as info:
        generate_descriptions([CharacterSpec("Columbo")], specs, gw)
    assert info.value.completed == ["Columbo|m01", "Columbo|m03"]


def test_generate_descriptions_preconditions():
    with pytest.raises(ValidationError):
        generate_descriptions([], describers(1), Gateway([], mode="mock"))
    with pytest.raises(ValidationError):
        generate_descriptions([CharacterSpec("X")], [], Gateway([], mode="mock"))


# extract_traits

DESC = Description("Columbo", "m01", "He asks questions.", 1)


@pytest.mark.parametrize(
    "response, expected",
    [("- A\n- B", ("A", "B")), ("- A\n- A", ("A",)), ("Traits:\n1. A\n2. B\n3. A", ("A", "B"))],
)
def test_extract_traits(response, expected):
    tl = extract_traits(DESC, HELPER, scripted(response))
    assert tl == TraitList("Columbo", "m01", expected)


def test_extract_traits_prose_is_error():
    with pytest.raises(ExtractionError, match="Columbo, m01"):
        extract_traits(DESC, HELPER, scripted("He is a man who asks many questions."))


def test_extract_traits_requires_role():
    with pytest.raises(ValidationError):
        extract_traits(DESC, ModelSpec("x", "mock", roles=frozenset({"describer"})), scripted("- A"))


def test_trait_list_invariants():
    with pytest.raises(ValidationError):
        TraitList("c", "m", ("a", "a"))
    with pytest.raises(ValidationError):
        TraitList("c", "m", ("a", ""))


# dedupe_traits

def test_dedupe_merges_sources():
    records = dedupe_traits([
        TraitList("H", "m2", ("Keen observation",)),
        TraitList("H", "m1", ("keen observation.", "Logic")),
    ])
    assert records[0] == TraitRecord("keen observation.", "keen observation", frozenset({"m1", "m2"}))
    assert records[1].text == "Logic"
    assert len(records) == 2


def test_dedupe_all_distinct():
    lists = [TraitList("H", f"m{i:02d}", (f"trait {i} a", f"trait {i} b")) for i in range(15)]
    assert len(dedupe_traits(lists)) == 30


def test_dedupe_mixed_characters():
    with pytest.raises(ValidationError):
        dedupe_traits([TraitList("H", "m1", ("a",)), TraitList("P", "m2", ("b",))])


# grouping

RECORDS = [record("Keen observation", "m1", "m2"), record("Logical deduction", "m2"), record("Disguises", "m3")]


def test_parse_group_response_tolerates_fences():
    body = json.dumps([{"label": "L", "traits": ["a"]}])
    assert parse_group_response(body) == [("L", ["a"])]
    assert parse_group_response(f"Here you go:\n```json\n{body}\n```\nDone.") == [("L", ["a"])]
    for bad in ("not json", '{"label": "L"}', '[{"label": 3, "traits": []}]', '[{"label": "L", "traits": [1]}]'):
        with pytest.raises(GroupingError):
            parse_group_response(bad)


def test_group_traits_single_group():
    response = json.dumps([{"label": "Everything", "traits": [r.text for r in RECORDS]}])
    [g] = group_traits(RECORDS, HELPER, scripted(response), total_models=4)
    assert g.supporting_models == {"m1", "m2", "m3"}
    assert g.consensus_score == Fraction(3, 4)


def test_group_traits_fenced():
    response = "```json\n" + json.dumps([{"label": "L", "traits": ["Keen observation"]}]) + "\n```"
    groups = group_traits(RECORDS, HELPER, scripted(response))
    assert groups[0].label == "L"
    assert len(groups) == 3


def test_group_traits_not_json():
    with pytest.raises(GroupingError) as info:
        group_traits(RECORDS, HELPER, scripted("not json"))
    assert info.value.raw_text == "not json"


def test_group_traits_preconditions():
    with pytest.raises(ValidationError):
        group_traits([], HELPER, scripted("[]"))
    with pytest.raises(ValidationError):
        group_traits(RECORDS, ModelSpec("x", "mock", roles=frozenset({"extractor"})), scripted("[]"))


def test_reconcile_exact_cover():
    raw = [("Observation", ["Keen observation"]), ("Reasoning", ["Logical deduction", "Disguises"])]
    warnings = []
    groups = reconcile_groups(raw, RECORDS, warnings=warnings)
    assert [(g.label, [m.text for m in g.members]) for g in groups] == [
        ("Observation", ["Keen observation"]),
        ("Reasoning", ["Logical deduction", "Disguises"]),
    ]
    assert warnings == []


def test_reconcile_repairs():
    raw = [
        ("Observation", ["keen observation.", "Telepathy"]),
        ("Also observation", ["Keen observation", "Logical deduction"]),
    ]
    warnings = []
    groups = reconcile_groups(raw, RECORDS, character="H", warnings=warnings)
    assert [(g.label, [m.text for m in g.members]) for g in groups] == [
        ("Observation", ["Keen observation"]),
        ("Also observation", ["Logical deduction"]),
        ("Disguises", ["Disguises"]),
    ]
    assert [w["kind"] for w in warnings] == ["fabricated", "duplicate", "unassigned"]
    assert all(w["character"] == "H" for w in warnings)


# consensus and synthesis

@pytest.mark.parametrize(
    "supporters, expected, rendered",
    [(11, Fraction(11, 15), "73.3"), (15, Fraction(1), "100.0"), (3, Fraction(1, 5), "20.0")],
)
def test_consensus_score(supporters, expected, rendered):
    from detective_profiler.report import trait_score

    score = consensus_score(group("g", supporters), 15)
    assert score == expected
    assert trait_score(score) == rendered


def test_consensus_score_errors():
    with pytest.raises(ValidationError):
        consensus_score(group("g", 1), 0)
    with pytest.raises(ValidationError):
        consensus_score(group("g", 5), 4)


def test_synthesize_profile():
    groups = [group("low", 2), group("mid", 3), group("high", 11)]
    warnings = []
    profile = synthesize_profile("Poirot", groups, Fraction(1, 5), 15, warnings=warnings)
    assert [g.label for g in profile.groups] == ["high", "mid"]
    assert [g.label for g in profile.excluded] == ["low"]
    assert [w["kind"] for w in warnings] == ["inconsistent"]


def test_synthesize_ties_by_label():
    profile = synthesize_profile("P", [group("b", 4), group("a", 4), group("c", 9)], Fraction(1, 5), 15)
    assert profile.trait_labels == ["c", "a", "b"]


def test_synthesize_empty_profile_warns():
    warnings = []
    profile = synthesize_profile("P", [group("x", 1)], Fraction(1, 5), 15, warnings=warnings)
    assert profile.groups == ()
    assert warnings[-1]["kind"] == "empty-profile"


def test_synthesize_threshold_bounds():
    for bad in (Fraction(0), Fraction(11, 10)):
        with pytest.raises(ValidationError):
            synthesize_profile("P", [group("x", 1)], bad, 15)


def test_profile_round_trip():
    profile = synthesize_profile("P", [group("b", 4), group("a", 1)], Fraction(1, 5), 15)
    assert CharacterProfile.from_dict(profile.to_dict()) == profile


# properties

@st.composite
def grouping_instances(draw):
    n_models = draw(st.integers(1, 8))
    models = [f"m{i}" for i in range(n_models)]
    n_traits = draw(st.integers(1, 30))
    records = [
        TraitRecord(f"trait {i}", f"trait {i}",
                    frozenset(draw(st.lists(st.sampled_from(models), min_size=1, max_size=n_models, unique=True))))
        for i in range(n_traits)
    ]
    n_groups = draw(st.integers(1, n_traits))
    assignment = [draw(st.integers(0, n_groups - 1)) for _ in records]
    raw = [(f"group {g}", [r.text for r, a in zip(records, assignment) if a == g]) for g in range(n_groups)]
    return models, records, raw


@settings(max_examples=200, deadline=None)
@given(grouping_instances())
def test_consensus_matches_oracle_and_invariants(instance):
    models, records, raw = instance
    groups = reconcile_groups(raw, records)
    check_partition(records, groups)
    check_provenance(records, groups)
    for g in groups:
        score = consensus_score(g, len(models))
        assert score == Fraction(distinct_model_oracle(g, models), len(models))
        assert 0 < score <= 1 and (score * len(models)).denominator == 1


@given(
    st.lists(st.integers(1, 15), min_size=1, max_size=20),
    st.integers(1, 15),
    st.integers(1, 15),
)
def test_threshold_monotonicity(supporters, t1, t2):
    lo, hi = sorted((Fraction(t1, 15), Fraction(t2, 15)))
    groups = [group(f"g{i}", k) for i, k in enumerate(supporters)]
    kept_lo = {g.label for g in synthesize_profile("P", groups, lo, 15).groups}
    kept_hi = {g.label for g in synthesize_profile("P", groups, hi, 15).groups}
    assert kept_hi <= kept_lo
