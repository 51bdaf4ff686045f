"""The four workflow prompts and their renderers.

Templates use ``${name}`` placeholders. Rendering is strict: every
placeholder must be bound and every bound name must be used. Values are
inserted verbatim, so values that look like placeholders are rejected
instead of escaped.
"""

from __future__ import annotations

import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

from .errors import ValidationError

BULLET = "- "

_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_TEMPLATE_LIKE_RE = re.compile(r"\$\{|\$[A-Za-z_]")

DESCRIPTION_TEMPLATE = """\
Task: Generate a concise and formal description of the distinguishing characteristics of the investigative method used by the fictional detective ${D_name}.

Requirements:
- Base your description of the investigative method used on stories where ${D_name} is the protagonist or a principal investigator.
- Focus solely on the investigative approach, strategies, and distinguishing features that define this detective's method of solving cases.
- Consider only the distinguishing characteristics that set the investigative method of ${D_name} apart from those of other fictional detectives.
- Do not include biographical details, story summaries, or references to specific cases.
- Structure the response as a single paragraph, without bullet points or numbered lists.
- Do not include any introductory or concluding sentences outside of the description itself.
- Limit the response to a maximum of 5 sentences."""

EXTRACTION_TEMPLATE = """\
Extract the key traits that describe the investigative method in the following text. \
List each trait as a separate bullet point. Use a formal and concise style. \
Do not repeat traits, and do not add information that is not present in the text.

Text: ${D_description}"""

GROUPING_TEMPLATE = """\
List of Traits:
${D_traits}

Task: Given the list of traits above describing the investigative methods of a fictional detective, \
group together all traits that express the same or highly similar idea, regardless of phrasing or wording.

For each group, provide:
- A description of the core idea of the investigative method, taking into account the grouped traits. \
Use all relevant distinguishing terms when writing the description.
- The list of original traits belonging to the group.

Present the output as a JSON array in the following format:
[
  {
    "label": "Description of the core idea of the investigative method using relevant distinguishing terms",
    "traits": [
        "Original phrasing 1",
        "Original phrasing 2"
    ]
  }
]"""

IDENTIFICATION_TEMPLATE = """\
List of Traits:
${D_profile}

You are given a list of traits describing the investigative method of a fictional detective. \
Your task is to identify which detective this description most likely refers to.

Choose only from the following list:
${roster}

Respond only with the name of the detective, without explanations or additional text."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))

    def render(self, values: Mapping[str, str]) -> str:
        names = self.placeholders
        unbound = names - values.keys()
        if unbound:
            raise ValidationError(f"{self.template_id}: unbound placeholders {sorted(unbound)}")
        unused = values.keys() - names
        if unused:
            raise ValidationError(f"{self.template_id}: unused values {sorted(unused)}")
        for name, value in values.items():
            if _TEMPLATE_LIKE_RE.search(value):
                raise ValidationError(f"{self.template_id}: value for {name} contains a template sequence")
        return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], self.body)


TEMPLATES = {
    "description": PromptTemplate("description", DESCRIPTION_TEMPLATE),
    "extraction": PromptTemplate("extraction", EXTRACTION_TEMPLATE),
    "grouping": PromptTemplate("grouping", GROUPING_TEMPLATE),
    "identification": PromptTemplate("identification", IDENTIFICATION_TEMPLATE),
}


def _bullets(items: Sequence[str], what: str) -> str:
    if not items:
        raise ValidationError(f"{what} must be non-empty")
    for item in items:
        if not item or not item.strip():
            raise ValidationError(f"{what} contains an empty entry")
        if "\n" in item or "\r" in item:
            raise ValidationError(f"{what} entry spans multiple lines: {item!r}")
    return "\n".join(BULLET + item for item in items)


def render_description_prompt(character_name: str) -> str:
    if not character_name or not character_name.strip():
        raise ValidationError("character name must be non-empty")
    return TEMPLATES["description"].render({"D_name": character_name})


def render_extraction_prompt(description: str) -> str:
    if not description or not description.strip():
        raise ValidationError("description must be non-empty")
    return TEMPLATES["extraction"].render({"D_description": description})


def render_grouping_prompt(traits: Sequence[str]) -> str:
    return TEMPLATES["grouping"].render({"D_traits": _bullets(traits, "trait list")})


def render_identification_prompt(profile_traits: Sequence[str], roster: Sequence[str]) -> str:
    return TEMPLATES["identification"].render({
        "D_profile": _bullets(profile_traits, "profile traits"),
        "roster": _bullets(roster, "roster"),
    })
