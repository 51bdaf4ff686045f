from __future__ import annotations

import re

import pytest
from hypothesis import assume, given, strategies as st

from detective_profiler.errors import ValidationError
from detective_profiler.prompts import (
    TEMPLATES,
    PromptTemplate,
    render_description_prompt,
    render_extraction_prompt,
    render_grouping_prompt,
    render_identification_prompt,
)

from .conftest import FIXTURES, PAPER_NAMES

SAMPLE_DESCRIPTION = (
    "The detective relies on psychological insight into human nature. He gathers information "
    "through methodical conversation and reconstructs events by logical inference."
)
SAMPLE_TRAITS = [
    "Reliance on psychological insight and understanding of human nature",
    "Systematic and methodical approach to gathering and analyzing information",
    "Emphasis on logical deduction and reasoning",
]


def golden(name: str) -> str:
    text = (FIXTURES / "golden" / f"{name}.txt").read_text(encoding="utf-8")
    assert text.endswith("\n")
    return text[:-1]


@pytest.mark.parametrize(
    "name, render",
    [
        ("description", lambda: render_description_prompt("Hercule Poirot")),
        ("extraction", lambda: render_extraction_prompt(SAMPLE_DESCRIPTION)),
        ("grouping", lambda: render_grouping_prompt(SAMPLE_TRAITS)),
        ("identification", lambda: render_identification_prompt(SAMPLE_TRAITS, PAPER_NAMES)),
    ],
)
def test_golden(name, render):
    assert render() == golden(name)


def test_description_prompt():
    text = render_description_prompt("Hercule Poirot")
    assert "the fictional detective Hercule Poirot" in text
    assert text.count("Hercule Poirot") == 3
    assert len(re.findall(r"^- ", text, re.M)) == 7
    with pytest.raises(ValidationError):
        render_description_prompt("")


def test_description_substitution_only():
    x = render_description_prompt("X").splitlines()
    y = render_description_prompt("Y").splitlines()
    differing = [i for i, (a, b) in enumerate(zip(x, y)) if a != b]
    assert len(x) == len(y)
    assert all(x[i].replace("X", "Y") == y[i] for i in differing)
    assert len(differing) == 3


def test_extraction_prompt():
    d = "Keen eye. Logical mind."
    text = render_extraction_prompt(d)
    assert text.endswith("Text: " + d)
    assert "Do not repeat traits" in text
    assert text == render_extraction_prompt(d)
    with pytest.raises(ValidationError):
        render_extraction_prompt("")


def test_grouping_prompt():
    text = render_grouping_prompt(["a", "b"])
    assert text.index("- a\n") < text.index("- b\n")
    assert '"label"' in text and '"traits"' in text
    for bad in ([], [""], ["two\nlines"]):
        with pytest.raises(ValidationError):
            render_grouping_prompt(bad)


def test_identification_prompt():
    text = render_identification_prompt(["Keen observation"], PAPER_NAMES)
    for name in PAPER_NAMES:
        assert text.count(name) == 1
    assert "Respond only with the name of the detective" in text
    assert "- Solo" in render_identification_prompt(["t"], ["Solo"])
    with pytest.raises(ValidationError):
        render_identification_prompt([], PAPER_NAMES)
    with pytest.raises(ValidationError):
        render_identification_prompt(["t"], [])


def test_template_strictness():
    template = PromptTemplate("t", "Hello ${a} and ${b}")
    assert template.placeholders == {"a", "b"}
    with pytest.raises(ValidationError, match="unbound"):
        template.render({"a": "1"})
    with pytest.raises(ValidationError, match="unused"):
        template.render({"a": "1", "b": "2", "c": "3"})
    with pytest.raises(ValidationError, match="template"):
        template.render({"a": "${b}", "b": "2"})
    assert template.render({"a": "$5", "b": "{x}"}) == "Hello $5 and {x}"


def test_template_placeholder_sets():
    assert TEMPLATES["description"].placeholders == {"D_name"}
    assert TEMPLATES["extraction"].placeholders == {"D_description"}
    assert TEMPLATES["grouping"].placeholders == {"D_traits"}
    assert TEMPLATES["identification"].placeholders == {"D_profile", "roster"}


safe_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc"), blacklist_characters="$\n\r"), min_size=1, max_size=40
).filter(str.strip)


@given(safe_text)
def test_round_trip_name(name):
    assume(name not in TEMPLATES["description"].body)
    text = render_description_prompt(name)
    assert text.count(name) >= 3
    assert text.replace(name, "${D_name}") == TEMPLATES["description"].body


@given(st.lists(safe_text, min_size=1, max_size=6))
def test_round_trip_traits(traits):
    text = render_grouping_prompt(traits)
    block = "\n".join("- " + t for t in traits)
    assert block in text
    assert text.replace(block, "${D_traits}", 1) == TEMPLATES["grouping"].body
