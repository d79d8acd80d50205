"""Cross-modal and text knowledge graph construction.

Non-text units are described by the vision model in the context of their
neighbors; each description is mined for entities which are attached to a
per-unit anchor node by ``belongs_to`` relations. Text units are packed into
token-bounded chunks and mined directly.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

from .content import ContentUnit, ImagePayload, KnowledgeSource, Modality, TablePayload, neighborhood
from .errors import MMRagError
from .gateway import Description, EntitySummary, ModelGateway, ModelProfile, ModelProfiles
from .graph import ANCHOR, BELONGS_TO, EXTRACTED, Entity, KnowledgeGraph, Relation, normalize_name

logger = logging.getLogger(__name__)

RELATED_TO = "related_to"
DEFAULT_DELTA = 1

T = TypeVar("T")
R = TypeVar("R")


def count_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class TextChunkingPolicy:
    max_chunk_tokens: int = 1024
    overlap_tokens: int = 64

    def __post_init__(self) -> None:
        if self.max_chunk_tokens <= 0:
            raise ValueError("max_chunk_tokens must be positive")
        if not 0 <= self.overlap_tokens < self.max_chunk_tokens:
            raise ValueError("overlap_tokens must be in [0, max_chunk_tokens)")


@dataclass(frozen=True)
class ChunkRecord:
    """Retrievable text for one chunk.

    Non-text chunks are one unit each and use the unit id as chunk id; text
    chunks are ``<source_id>#c<n>`` and may span several units.
    """

    chunk_id: str
    source_id: str
    unit_ids: tuple[str, ...]
    modality: Modality
    retrieval_text: str
    token_count: int
    entity_summary: EntitySummary | None = None
    image_ref: str | None = None
    caption: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "source_id": self.source_id,
            "unit_ids": list(self.unit_ids),
            "modality": self.modality.value,
            "retrieval_text": self.retrieval_text,
            "token_count": self.token_count,
            "entity_summary": None
            if self.entity_summary is None
            else {
                "entity_name": self.entity_summary.entity_name,
                "entity_type": self.entity_summary.entity_type,
                "summary": self.entity_summary.summary,
            },
            "image_ref": self.image_ref,
            "caption": self.caption,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "ChunkRecord":
        es = d.get("entity_summary")
        return cls(
            chunk_id=d["chunk_id"],
            source_id=d["source_id"],
            unit_ids=tuple(d["unit_ids"]),
            modality=Modality(d["modality"]),
            retrieval_text=d["retrieval_text"],
            token_count=d["token_count"],
            entity_summary=None if es is None else EntitySummary(**es),
            image_ref=d.get("image_ref"),
            caption=d.get("caption"),
        )


@dataclass
class UnitOutcome:
    """One line of the build manifest."""

    item_id: str
    status: str  # processed | skipped | graph_skipped
    stage: str
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {"id": self.item_id, "status": self.status, "stage": self.stage, "error": self.error}


# ---------------------------------------------------------------------------
# extraction routine


@dataclass(frozen=True)
class ExtractedEntity:
    name: str
    entity_type: str
    description: str


@dataclass(frozen=True)
class ExtractedRelation:
    source: str
    target: str
    predicate: str
    description: str


_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")
_QUOTED_RE = re.compile(r"\"([^\"\n]+)\"|“([^”\n]+)”")
_WORD_RE = re.compile(r"[^\s\"“”()\[\]{},;:.!?\x00]+")
_MASK = "\x00"

EDGE_STOPWORDS = frozenset(
    """a an the this that these those it its we our they their he she his her there here
    in on at of for and or but to from by with as is are was were be when where while if
    then after before during each every all some what which who how why""".split()
)


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text) if s.strip()]


def _sentence_spans(sentence: str) -> list[tuple[int, str]]:
    """(offset, surface) of quoted spans and capitalized word runs, by offset."""
    spans: list[tuple[int, str]] = []
    masked = sentence
    for m in _QUOTED_RE.finditer(sentence):
        inner = (m.group(1) or m.group(2)).strip()
        if inner:
            spans.append((m.start(), inner))
        masked = masked[: m.start()] + _MASK * (m.end() - m.start()) + masked[m.end() :]

    run: list[re.Match[str]] = []

    def flush() -> None:
        words = [w.group() for w in run]
        while words and words[0].lower() in EDGE_STOPWORDS:
            words.pop(0)
            run.pop(0)
        while words and words[-1].lower() in EDGE_STOPWORDS:
            words.pop()
        if words:
            spans.append((run[0].start(), " ".join(words)))
        run.clear()

    for w in _WORD_RE.finditer(masked):
        if not w.group()[0].isupper():
            flush()
            continue
        if run and masked[run[-1].end() : w.start()].strip(" \t"):
            flush()
        run.append(w)
    flush()
    return sorted(spans)


def stub_extract(description: str) -> tuple[list[ExtractedEntity], list[ExtractedRelation]]:
    """Offline extraction rule.

    Entities are double-quoted spans and runs of capitalized words (edge
    stopwords such as a sentence-initial "The" are trimmed). Any two distinct
    entities in the same sentence yield one ``related_to`` relation, oriented
    by first appearance; the same pair is never related twice.
    """
    entities: dict[str, ExtractedEntity] = {}
    relations: list[ExtractedRelation] = []
    related: set[frozenset[str]] = set()
    for sentence in split_sentences(description):
        seen: list[str] = []
        for _, surface in _sentence_spans(sentence):
            key = normalize_name(surface)
            if not key:
                continue
            if key not in entities:
                entities[key] = ExtractedEntity(surface, "concept", sentence)
            if key not in seen:
                seen.append(key)
        for i, a in enumerate(seen):
            for b in seen[i + 1 :]:
                if frozenset((a, b)) in related:
                    continue
                related.add(frozenset((a, b)))
                relations.append(
                    ExtractedRelation(entities[a].name, entities[b].name, RELATED_TO, sentence)
                )
    return list(entities.values()), relations


def _parse_extraction(reply: dict[str, Any]) -> tuple[list[ExtractedEntity], list[ExtractedRelation]]:
    entities: dict[str, ExtractedEntity] = {}
    for raw in reply.get("entities", []):
        if not isinstance(raw, dict) or not isinstance(raw.get("name"), str):
            continue
        key = normalize_name(raw["name"])
        if key and key not in entities:
            entities[key] = ExtractedEntity(
                raw["name"].strip(), str(raw.get("type") or "concept"), str(raw.get("description") or "")
            )
    relations = []
    for raw in reply.get("relations", []) or []:
        if not isinstance(raw, dict):
            continue
        src, dst = normalize_name(str(raw.get("source", ""))), normalize_name(str(raw.get("target", "")))
        if src not in entities or dst not in entities:
            logger.warning("dropping relation with undeclared endpoint: %r -> %r", raw.get("source"), raw.get("target"))
            continue
        if src == dst:
            continue
        relations.append(
            ExtractedRelation(
                entities[src].name,
                entities[dst].name,
                str(raw.get("predicate") or RELATED_TO),
                str(raw.get("description") or ""),
            )
        )
    return list(entities.values()), relations


def extract_graph(
    description: str, gateway: ModelGateway, profile: ModelProfile | None = None
) -> tuple[list[ExtractedEntity], list[ExtractedRelation]]:
    """Entities and relations mentioned in one piece of text."""
    if not description.strip():
        raise ValueError("cannot extract from empty text")
    profile = profile or gateway.profiles.chat
    if profile.effective_backend == "stub":
        return stub_extract(description)
    return _parse_extraction(gateway.extract_json(description, profile))


# ---------------------------------------------------------------------------
# graph builders


def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    """``map`` over a thread pool; results always come back in input order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class GraphBuild:
    graph: KnowledgeGraph = field(default_factory=KnowledgeGraph)
    chunks: list[ChunkRecord] = field(default_factory=list)
    outcomes: list[UnitOutcome] = field(default_factory=list)


def _non_text_chunk(unit: ContentUnit, source_id: str, desc: Description) -> ChunkRecord:
    p = unit.payload
    return ChunkRecord(
        chunk_id=unit.unit_id,
        source_id=source_id,
        unit_ids=(unit.unit_id,),
        modality=unit.modality,
        retrieval_text=desc.description,
        token_count=count_tokens(desc.description),
        entity_summary=desc.entity,
        image_ref=p.image_ref if isinstance(p, ImagePayload) else None,
        caption=p.caption if isinstance(p, (ImagePayload, TablePayload)) else None,
    )


def _unit_graph(
    unit: ContentUnit,
    desc: Description,
    entities: list[ExtractedEntity],
    relations: list[ExtractedRelation],
) -> KnowledgeGraph:
    """Anchor, intra-unit entities, their relations and belongs_to edges for one unit."""
    uid = unit.unit_id
    sources = frozenset([uid])
    g = KnowledgeGraph()
    anchor = Entity(
        f"mm:{uid}", desc.entity.entity_name, desc.entity.entity_type, desc.entity.summary, sources, ANCHOR
    )
    g.add_entity(anchor)
    ids = {anchor.normalized_name: anchor.entity_id}
    members: list[Entity] = []
    for k, e in enumerate(entities):
        key = normalize_name(e.name)
        if key in ids:
            # the unit's own name is the anchor, not an entity inside it
            continue
        ent = Entity(f"x:{uid}:{k}", e.name, e.entity_type, e.description, sources, EXTRACTED)
        g.add_entity(ent)
        ids[key] = ent.entity_id
        members.append(ent)
    for k, r in enumerate(relations):
        s, o = ids.get(normalize_name(r.source)), ids.get(normalize_name(r.target))
        if s is None or o is None or s == o:
            continue
        g.add_relation(Relation(f"r:{uid}:{k}", s, o, r.predicate, r.description, sources, EXTRACTED))
    for k, ent in enumerate(members):
        g.add_relation(
            Relation(
                f"b:{uid}:{k}",
                ent.entity_id,
                anchor.entity_id,
                BELONGS_TO,
                f"{ent.name} belongs to {unit.modality.value} {anchor.name}",
                sources,
                BELONGS_TO,
            )
        )
    return g


def describe_units(
    source: KnowledgeSource,
    delta: int,
    gateway: ModelGateway,
    profiles: ModelProfiles | None = None,
    workers: int = 1,
    extract: bool = True,
) -> list[tuple[ContentUnit, Description | MMRagError, Any]]:
    """Describe (and optionally mine) every non-text unit; failures are returned, not raised."""
    profiles = profiles or gateway.profiles
    units = [u for u in source.units if not u.is_text]

    def work(unit: ContentUnit) -> tuple[ContentUnit, Description | MMRagError, Any]:
        try:
            desc = gateway.describe_multimodal(unit, neighborhood(source, unit.index, delta), profiles.vision)
        except MMRagError as exc:
            return unit, exc, None
        if not extract:
            return unit, desc, None
        try:
            return unit, desc, extract_graph(desc.description, gateway, profiles.chat)
        except MMRagError as exc:
            return unit, exc, None

    return ordered_map(work, units, workers)


def build_cross_modal_graph(
    source: KnowledgeSource,
    gateway: ModelGateway,
    profiles: ModelProfiles | None = None,
    delta: int = DEFAULT_DELTA,
    workers: int = 1,
) -> GraphBuild:
    """Cross-modal graph and chunk records for the non-text units of a source.

    A unit whose description or extraction fails is skipped and recorded in
    the outcomes; the rest of the source is still processed.
    """
    build = GraphBuild()
    for unit, desc, extracted in describe_units(source, delta, gateway, profiles, workers):
        if isinstance(desc, MMRagError):
            logger.warning("skipping %s: %s", unit.unit_id, desc)
            build.outcomes.append(UnitOutcome(unit.unit_id, "skipped", "describe", f"{desc.code}: {desc}"))
            continue
        build.chunks.append(_non_text_chunk(unit, source.source_id, desc))
        build.graph.extend(_unit_graph(unit, desc, *extracted))
        build.outcomes.append(UnitOutcome(unit.unit_id, "processed", "describe"))
    return build


def describe_only(
    source: KnowledgeSource,
    gateway: ModelGateway,
    profiles: ModelProfiles | None = None,
    delta: int = DEFAULT_DELTA,
    workers: int = 1,
) -> GraphBuild:
    """Chunk records for non-text units without any graph (chunk-only mode)."""
    build = GraphBuild()
    for unit, desc, _ in describe_units(source, delta, gateway, profiles, workers, extract=False):
        if isinstance(desc, MMRagError):
            build.outcomes.append(UnitOutcome(unit.unit_id, "skipped", "describe", f"{desc.code}: {desc}"))
            continue
        build.chunks.append(_non_text_chunk(unit, source.source_id, desc))
        build.outcomes.append(UnitOutcome(unit.unit_id, "processed", "describe"))
    return build


def chunk_text_units(
    units: Iterable[ContentUnit], policy: TextChunkingPolicy
) -> list[tuple[str, tuple[str, ...]]]:
    """Pack text units into chunks of at most ``policy.max_chunk_tokens`` tokens.

    Units are never merged mid-way: whole units are packed greedily, and a
    unit too long for one chunk is cut into windows that overlap by
    ``policy.overlap_tokens``. Returns (chunk text, unit ids) pairs in order.
    """
    limit, step = policy.max_chunk_tokens, policy.max_chunk_tokens - policy.overlap_tokens
    segments: list[tuple[str, str, int]] = []
    for unit in units:
        tokens = unit.payload.body.split()
        if not tokens:
            continue
        if len(tokens) <= limit:
            segments.append((unit.payload.body.strip(), unit.unit_id, len(tokens)))
            continue
        start = 0
        while True:
            window = tokens[start : start + limit]
            segments.append((" ".join(window), unit.unit_id, len(window)))
            if start + limit >= len(tokens):
                break
            start += step

    chunks: list[tuple[str, tuple[str, ...]]] = []
    texts: list[str] = []
    uids: list[str] = []
    size = 0
    for text, uid, n in segments:
        if texts and size + n > limit:
            chunks.append(("\n\n".join(texts), tuple(dict.fromkeys(uids))))
            texts, uids, size = [], [], 0
        texts.append(text)
        uids.append(uid)
        size += n
    if texts:
        chunks.append(("\n\n".join(texts), tuple(dict.fromkeys(uids))))
    return chunks


def text_chunks(source: KnowledgeSource, policy: TextChunkingPolicy) -> list[ChunkRecord]:
    text_units = [u for u in source.units if u.is_text]
    return [
        ChunkRecord(
            chunk_id=f"{source.source_id}#c{n}",
            source_id=source.source_id,
            unit_ids=uids,
            modality=Modality.TEXT,
            retrieval_text=text,
            token_count=count_tokens(text),
        )
        for n, (text, uids) in enumerate(chunk_text_units(text_units, policy))
    ]


def build_text_graph(
    source: KnowledgeSource,
    gateway: ModelGateway,
    profiles: ModelProfiles | None = None,
    chunking: TextChunkingPolicy = TextChunkingPolicy(),
    workers: int = 1,
) -> GraphBuild:
    """Text chunks and the entities/relations mined from each of them."""
    profiles = profiles or gateway.profiles
    build = GraphBuild(chunks=text_chunks(source, chunking))

    def work(chunk: ChunkRecord) -> Any:
        try:
            return extract_graph(chunk.retrieval_text, gateway, profiles.chat)
        except MMRagError as exc:
            return exc

    for chunk, result in zip(build.chunks, ordered_map(work, build.chunks, workers)):
        if isinstance(result, MMRagError):
            logger.warning("no graph for %s: %s", chunk.chunk_id, result)
            build.outcomes.append(
                UnitOutcome(chunk.chunk_id, "graph_skipped", "extract", f"{result.code}: {result}")
            )
            continue
        entities, relations = result
        cid = chunk.chunk_id
        sources = frozenset([cid])
        ids: dict[str, str] = {}
        for k, e in enumerate(entities):
            ent = Entity(f"t:{cid}:{k}", e.name, e.entity_type, e.description, sources, EXTRACTED)
            build.graph.add_entity(ent)
            ids[ent.normalized_name] = ent.entity_id
        for k, r in enumerate(relations):
            s, o = ids.get(normalize_name(r.source)), ids.get(normalize_name(r.target))
            if s is None or o is None or s == o:
                continue
            build.graph.add_relation(Relation(f"tr:{cid}:{k}", s, o, r.predicate, r.description, sources))
        build.outcomes.append(UnitOutcome(cid, "processed", "extract"))
    return build
