"""Canonical multimodal document model and its JSON ingestion format.

A knowledge source is an ordered list of atomic content units. Each unit has
one modality tag and a payload variant matching that tag. Sources are
immutable once loaded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Union

import jsonschema

from .errors import DuplicateUnitError, OrderError, RaggedTableError, SchemaError


class Modality(str, Enum):
    TEXT = "text"
    IMAGE = "image"
    TABLE = "table"
    EQUATION = "equation"
    GENERIC = "generic"


@dataclass(frozen=True)
class TextPayload:
    body: str


@dataclass(frozen=True)
class ImagePayload:
    # file path (relative to the corpus root) or a data:<mime>;base64,<...> URI
    image_ref: str
    caption: str | None = None
    footnotes: tuple[str, ...] = ()


@dataclass(frozen=True)
class TablePayload:
    caption: str | None = None
    header_rows: tuple[tuple[str, ...], ...] = ()
    body_rows: tuple[tuple[str, ...], ...] = ()
    raw: str = ""

    @property
    def n_columns(self) -> int:
        rows = self.header_rows + self.body_rows
        return len(rows[0]) if rows else 0


@dataclass(frozen=True)
class EquationPayload:
    latex: str
    surrounding_text: str | None = None


@dataclass(frozen=True)
class GenericPayload:
    """Forward-compatible extension payload; kept as canonical JSON text."""

    data_json: str

    @property
    def data(self) -> dict[str, Any]:
        return json.loads(self.data_json)


Payload = Union[TextPayload, ImagePayload, TablePayload, EquationPayload, GenericPayload]

_PAYLOAD_TYPES: dict[Modality, type] = {
    Modality.TEXT: TextPayload,
    Modality.IMAGE: ImagePayload,
    Modality.TABLE: TablePayload,
    Modality.EQUATION: EquationPayload,
    Modality.GENERIC: GenericPayload,
}


def unit_id_for(source_id: str, index: int) -> str:
    return f"{source_id}#{index}"


@dataclass(frozen=True)
class ContentUnit:
    unit_id: str
    index: int
    modality: Modality
    payload: Payload
    page_hint: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.payload, _PAYLOAD_TYPES[self.modality]):
            raise SchemaError(
                f"unit {self.unit_id}: payload {type(self.payload).__name__} "
                f"does not match modality {self.modality.value!r}"
            )

    @property
    def is_text(self) -> bool:
        return self.modality is Modality.TEXT


@dataclass(frozen=True)
class KnowledgeSource:
    source_id: str
    title: str
    units: tuple[ContentUnit, ...]
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.units)

    def __hash__(self) -> int:
        return hash((self.source_id, self.units))


@dataclass(frozen=True)
class ContextWindow:
    delta: int
    center: int
    members: tuple[ContentUnit, ...]

    @property
    def neighbors(self) -> tuple[ContentUnit, ...]:
        return tuple(u for u in self.members if u.index != self.center)


# ---------------------------------------------------------------------------
# JSON schema of the canonical document

_STR_LIST = {"type": "array", "items": {"type": "string"}}
_ROWS = {"type": "array", "items": _STR_LIST}
_OPT_STR = {"type": ["string", "null"]}

PAYLOAD_SCHEMAS: dict[str, dict[str, Any]] = {
    "text": {
        "type": "object",
        "required": ["body"],
        "properties": {"body": {"type": "string"}},
        "additionalProperties": False,
    },
    "image": {
        "type": "object",
        "required": ["image_ref"],
        "properties": {
            "image_ref": {"type": "string", "minLength": 1},
            "caption": _OPT_STR,
            "footnotes": _STR_LIST,
        },
        "additionalProperties": False,
    },
    "table": {
        "type": "object",
        "required": ["body_rows"],
        "properties": {
            "caption": _OPT_STR,
            "header_rows": _ROWS,
            "body_rows": _ROWS,
            "raw": {"type": "string"},
        },
        "additionalProperties": False,
    },
    "equation": {
        "type": "object",
        "required": ["latex"],
        "properties": {"latex": {"type": "string", "minLength": 1}, "surrounding_text": _OPT_STR},
        "additionalProperties": False,
    },
    "generic": {"type": "object"},
}

DOCUMENT_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["source_id", "units"],
    "properties": {
        "source_id": {"type": "string", "minLength": 1, "pattern": "^[^#]+$"},
        "title": {"type": "string"},
        "metadata": {"type": "object", "additionalProperties": {"type": "string"}},
        "units": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "modality", "payload"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "modality": {"enum": [m.value for m in Modality]},
                    "payload": {"type": "object"},
                    "page_hint": {"type": ["integer", "null"]},
                },
                "additionalProperties": False,
                "allOf": [
                    {
                        "if": {"properties": {"modality": {"const": tag}}},
                        "then": {"properties": {"payload": schema}},
                    }
                    for tag, schema in PAYLOAD_SCHEMAS.items()
                ],
            },
        },
    },
    "additionalProperties": False,
}

_VALIDATOR = jsonschema.Draft202012Validator(DOCUMENT_SCHEMA)


def _validate(doc: Any) -> None:
    error = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(doc))
    if error is not None:
        where = "/".join(str(p) for p in error.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {error.message}")


def _payload_from_json(modality: Modality, raw: dict[str, Any], where: str) -> Payload:
    if modality is Modality.TEXT:
        return TextPayload(body=raw["body"])
    if modality is Modality.IMAGE:
        return ImagePayload(
            image_ref=raw["image_ref"],
            caption=raw.get("caption"),
            footnotes=tuple(raw.get("footnotes", ())),
        )
    if modality is Modality.TABLE:
        header = tuple(tuple(r) for r in raw.get("header_rows", ()))
        body = tuple(tuple(r) for r in raw["body_rows"])
        widths = {len(r) for r in header + body}
        if len(widths) > 1:
            raise RaggedTableError(f"{where}: table rows have unequal widths {sorted(widths)}")
        return TablePayload(
            caption=raw.get("caption"), header_rows=header, body_rows=body, raw=raw.get("raw", "")
        )
    if modality is Modality.EQUATION:
        return EquationPayload(latex=raw["latex"], surrounding_text=raw.get("surrounding_text"))
    return GenericPayload(data_json=json.dumps(raw, sort_keys=True, ensure_ascii=False))


def payload_to_json(payload: Payload) -> dict[str, Any]:
    if isinstance(payload, TextPayload):
        return {"body": payload.body}
    if isinstance(payload, ImagePayload):
        return {
            "image_ref": payload.image_ref,
            "caption": payload.caption,
            "footnotes": list(payload.footnotes),
        }
    if isinstance(payload, TablePayload):
        return {
            "caption": payload.caption,
            "header_rows": [list(r) for r in payload.header_rows],
            "body_rows": [list(r) for r in payload.body_rows],
            "raw": payload.raw,
        }
    if isinstance(payload, EquationPayload):
        return {"latex": payload.latex, "surrounding_text": payload.surrounding_text}
    return payload.data


def load_source(document: str | bytes | dict[str, Any]) -> KnowledgeSource:
    """Validate a canonical document and return the ordered source.

    Units may appear in any order in the input, but their indices must form
    one contiguous run; they are renumbered from 0.
    """
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
    _validate(document)

    source_id = document["source_id"]
    raw_units = sorted(document["units"], key=lambda u: u["index"])
    indices = [u["index"] for u in raw_units]
    if len(set(indices)) != len(indices):
        raise OrderError(f"{source_id}: duplicate unit indices")
    if indices and indices != list(range(indices[0], indices[0] + len(indices))):
        raise OrderError(f"{source_id}: unit indices are not contiguous: {indices}")

    units = []
    for new_index, raw in enumerate(raw_units):
        modality = Modality(raw["modality"])
        uid = unit_id_for(source_id, new_index)
        units.append(
            ContentUnit(
                unit_id=uid,
                index=new_index,
                modality=modality,
                payload=_payload_from_json(modality, raw["payload"], uid),
                page_hint=raw.get("page_hint"),
            )
        )
    return KnowledgeSource(
        source_id=source_id,
        title=document.get("title", ""),
        units=tuple(units),
        metadata=dict(document.get("metadata", {})),
    )


def source_to_json(source: KnowledgeSource) -> dict[str, Any]:
    units = []
    for unit in source.units:
        entry: dict[str, Any] = {
            "index": unit.index,
            "modality": unit.modality.value,
            "payload": payload_to_json(unit.payload),
        }
        if unit.page_hint is not None:
            entry["page_hint"] = unit.page_hint
        units.append(entry)
    return {
        "source_id": source.source_id,
        "title": source.title,
        "metadata": dict(source.metadata),
        "units": units,
    }


def dump_source(source: KnowledgeSource) -> str:
    return json.dumps(source_to_json(source), ensure_ascii=False, indent=2, sort_keys=True)


def load_source_file(path: str | Path) -> KnowledgeSource:
    return load_source(Path(path).read_text(encoding="utf-8"))


def corpus_files(corpus_dir: str | Path) -> list[Path]:
    return sorted(p for p in Path(corpus_dir).glob("*.json") if p.is_file())


def load_corpus(corpus_dir: str | Path) -> list[KnowledgeSource]:
    """Load every ``*.json`` document of a corpus directory, sorted by file name."""
    sources = [load_source_file(p) for p in corpus_files(corpus_dir)]
    check_unique(sources)
    return sources


def check_unique(sources: Iterable[KnowledgeSource]) -> None:
    seen: set[str] = set()
    for source in sources:
        if source.source_id in seen:
            raise DuplicateUnitError(f"source_id {source.source_id!r} appears twice in the corpus")
        seen.add(source.source_id)


def neighborhood(source: KnowledgeSource, center: int, delta: int) -> ContextWindow:
    """Units within ``delta`` positions of ``center``, clipped to the source."""
    if not 0 <= center < len(source.units):
        raise IndexError(f"center {center} out of range for {len(source.units)} units")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    lo, hi = max(0, center - delta), min(len(source.units), center + delta + 1)
    return ContextWindow(delta=delta, center=center, members=source.units[lo:hi])


def modality_filter(source: KnowledgeSource, tag: Modality | str) -> list[ContentUnit]:
    tag = Modality(tag)
    return [u for u in source.units if u.modality is tag]


def payload_text(unit: ContentUnit) -> str:
    """Plain-text serialization of a unit's payload.

    Used as neighbor context in descriptions and as the stub describer's
    rendering of the unit itself.
    """
    p = unit.payload
    if isinstance(p, TextPayload):
        return p.body
    if isinstance(p, ImagePayload):
        return "\n".join([p.caption or "", *p.footnotes]).strip()
    if isinstance(p, TablePayload):
        return table_text(p)
    if isinstance(p, EquationPayload):
        return "\n".join(x for x in (p.latex, p.surrounding_text or "") if x)
    return p.data_json


def table_text(table: TablePayload) -> str:
    lines = [table.caption] if table.caption else []
    lines += [" | ".join(row) for row in table.header_rows + table.body_rows]
    if not (table.header_rows or table.body_rows) and table.raw:
        lines.append(table.raw)
    return "\n".join(lines)
