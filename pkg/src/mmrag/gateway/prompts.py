"""Prompt templates for multimodal description, extraction, answering and judging."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Mapping

from ..errors import MissingSlotError

_DESCRIBE_REPLY = """\
Reply with a single JSON object and nothing else:
{{
  "detailed_description": "<thorough description usable for retrieval>",
  "entity_info": {{
    "entity_name": "<short name for this NOUN>",
    "entity_type": "ETYPE",
    "summary": "<one or two sentences on what it shows and why it matters here>"
  }}
}}"""

VISION_TEMPLATE = (
    """\
You are analysing an image taken from a document, together with the text around it.

Image metadata (caption, footnotes, reference):
{content}

Surrounding document context:
{context}

Describe the image in detail: the overall composition, each object or panel and how
they relate, visible text and labels, colours and style, any depicted action, and for
charts or diagrams the axes, legends, series, trends and notable values. Tie what you
see to the surrounding context, naming the concepts the text uses for it.

"""
    + _DESCRIBE_REPLY.replace("NOUN", "image").replace("ETYPE", "image")
)

TABLE_TEMPLATE = (
    """\
You are analysing a table taken from a document, together with the text around it.

Table content:
{content}

Surrounding document context:
{context}

Describe the table precisely: its structure, what each column and row header means,
the key values with exact numbers and units, comparisons, extremes and trends, and how
the table supports the surrounding text. Quote names and figures exactly; do not
generalise where a specific value is available.

"""
    + _DESCRIBE_REPLY.replace("NOUN", "table").replace("ETYPE", "table")
)

EQUATION_TEMPLATE = (
    """\
You are analysing a mathematical expression taken from a document, together with the
text around it.

Expression (LaTeX):
{content}

Surrounding document context:
{context}

Explain what the expression means rather than restating its symbols: define every
variable, describe the operations and what they compute, the assumptions or theory it
rests on, how it relates to other formulas in the context, and where it is applied.

"""
    + _DESCRIBE_REPLY.replace("NOUN", "expression").replace("ETYPE", "equation")
)

ENTITY_EXTRACTION_TEMPLATE = """\
Extract the named entities and the relations between them from the text below.

Text:
{content}

Reply with a single JSON object and nothing else:
{{
  "entities": [{{"name": "...", "type": "...", "description": "..."}}],
  "relations": [{{"source": "<entity name>", "target": "<entity name>",
                 "predicate": "...", "description": "..."}}]
}}
Every relation endpoint must be the name of an entity listed in "entities".
"""

JUDGE_TEMPLATE = """\
You are grading an answer to a question against a reference answer.

Question:
{query}

Reference answer:
{reference}

Answer to grade:
{answer}

Judge factual content only; ignore wording, length and style. The answer is correct
if it states the same facts as the reference without contradicting it, and for
numerical questions gives an equivalent value. Reply with a single JSON object and
nothing else:
{{"correct": true or false, "reason": "<one sentence>"}}
"""

ANSWER_SYSTEM_PROMPT = """\
Answer the user's question using only the retrieved context and any attached images.
Context sections are delimited by [BEGIN <kind> <id>] and [END <kind>] lines, where
kind names the source (entity, relation, or a chunk with its modality). If the context
does not contain the answer, say so. Answer in one sentence."""

JSON_REPAIR_INSTRUCTION = "Your previous reply was not valid JSON. Return only valid JSON."


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    template_text: str

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(
            name for _, name, _, _ in string.Formatter().parse(self.template_text) if name
        )

    def render(self, slots: Mapping[str, str]) -> str:
        missing = sorted(self.slots - set(slots))
        if missing:
            raise MissingSlotError(f"{self.kind} prompt missing slots: {', '.join(missing)}")
        return self.template_text.format_map({k: str(slots[k]) for k in self.slots})


TEMPLATES: dict[str, PromptTemplate] = {
    t.kind: t
    for t in (
        PromptTemplate("vision", VISION_TEMPLATE),
        PromptTemplate("table", TABLE_TEMPLATE),
        PromptTemplate("equation", EQUATION_TEMPLATE),
        PromptTemplate("entity_extraction", ENTITY_EXTRACTION_TEMPLATE),
        PromptTemplate("judge", JUDGE_TEMPLATE),
    )
}


def render_prompt(kind: str, slots: Mapping[str, str]) -> str:
    try:
        template = TEMPLATES[kind]
    except KeyError:
        raise ValueError(f"unknown prompt kind {kind!r}") from None
    return template.render(slots)
