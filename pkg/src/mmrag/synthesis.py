"""Context assembly, visual dereferencing and answer generation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

from .content import Modality
from .errors import ContextTooLargeError, DanglingKeyError
from .gateway import Message, ModelGateway, ModelProfile
from .gateway.prompts import ANSWER_SYSTEM_PROMPT
from .index import RetrievalIndex
from .media import ImageAttachment, resolve_image
from .retrieval import SelectionBundle

logger = logging.getLogger(__name__)

MAX_IMAGES = 6
RETRY_BUDGET_FRACTION = 0.8


@dataclass(frozen=True)
class Section:
    kind: str  # entity | relation | chunk:<modality>
    heading: str
    body: str

    def render(self) -> str:
        return f"[BEGIN {self.kind} {self.heading}]\n{self.body}\n[END {self.kind}]\n"


@dataclass(frozen=True)
class SynthesisContext:
    sections: tuple[Section, ...]

    @property
    def rendered(self) -> str:
        return "".join(s.render() for s in self.sections)


@dataclass(frozen=True)
class VisualItem:
    chunk_id: str
    image: ImageAttachment
    caption: str | None


@dataclass(frozen=True)
class VisualPayload:
    items: tuple[VisualItem, ...] = ()
    warnings: tuple[str, ...] = ()


def build_context(bundle: SelectionBundle, index: RetrievalIndex) -> SynthesisContext:
    """Delimited sections: entities, then relations, then chunks in rank order."""
    graph = index.graph
    sections: list[Section] = []
    for eid in bundle.entities:
        if eid not in graph.entities:
            raise DanglingKeyError(f"bundle references unknown entity {eid}")
        e = graph.entities[eid]
        sections.append(
            Section("entity", eid, f"name: {e.name}\ntype: {e.entity_type}\ndescription: {e.description}")
        )
    for rid in bundle.relations:
        if rid not in graph.relations:
            raise DanglingKeyError(f"bundle references unknown relation {rid}")
        r = graph.relations[rid]
        subj, obj = graph.entities[r.subject_id].name, graph.entities[r.object_id].name
        sections.append(Section("relation", rid, f"{subj} -[{r.predicate}]-> {obj}\n{r.description}"))
    for cand in bundle.chunks:
        chunk = index.chunks.get(cand.chunk_id)
        if chunk is None:
            raise DanglingKeyError(f"bundle references unknown chunk {cand.chunk_id}")
        sections.append(Section(f"chunk:{chunk.modality.value}", chunk.chunk_id, chunk.retrieval_text))
    return SynthesisContext(tuple(sections))


def dereference_visuals(
    bundle: SelectionBundle,
    index: RetrievalIndex,
    corpus_root: str | Path | None,
    max_images: int = MAX_IMAGES,
) -> VisualPayload:
    """Original image bytes for the admitted image chunks, in rank order.

    Unresolvable references are reported in ``warnings`` and skipped.
    """
    items: list[VisualItem] = []
    warnings: list[str] = []
    for cand in bundle.chunks:
        chunk = index.chunks[cand.chunk_id]
        if chunk.modality is not Modality.IMAGE or not chunk.image_ref:
            continue
        if len(items) >= max_images:
            warnings.append(f"{chunk.chunk_id}: dropped, image cap of {max_images} reached")
            continue
        try:
            items.append(VisualItem(chunk.chunk_id, resolve_image(chunk.image_ref, corpus_root), chunk.caption))
        except (OSError, ValueError) as exc:
            warnings.append(f"{chunk.chunk_id}: cannot resolve {chunk.image_ref!r}: {exc}")
    for w in warnings:
        logger.warning(w)
    return VisualPayload(tuple(items), tuple(warnings))


def shrink_context(context: SynthesisContext, index: RetrievalIndex, fraction: float) -> SynthesisContext:
    """Drop the lowest-ranked chunk sections until chunk text fits ``fraction`` of its size.

    At least one chunk section is always removed when any exist.
    """
    chunk_pos = [i for i, s in enumerate(context.sections) if s.kind.startswith("chunk:")]
    if not chunk_pos:
        return context
    sizes = [index.chunks[context.sections[i].heading].token_count for i in chunk_pos]
    limit = math.floor(sum(sizes) * fraction)
    keep = len(chunk_pos) - 1
    while keep > 0 and sum(sizes[:keep]) > limit:
        keep -= 1
    dropped = set(chunk_pos[keep:])
    return SynthesisContext(tuple(s for i, s in enumerate(context.sections) if i not in dropped))


def _messages(q: str, context: SynthesisContext, visuals: VisualPayload) -> list[Message]:
    kept = {s.heading for s in context.sections}
    images = tuple(v.image for v in visuals.items if v.chunk_id in kept)
    user = f"Question: {q}\n\nRetrieved context:\n{context.rendered}"
    return [Message("system", ANSWER_SYSTEM_PROMPT), Message("user", user, images)]


def generate_response(
    q: str,
    context: SynthesisContext,
    visuals: VisualPayload,
    gateway: ModelGateway,
    index: RetrievalIndex,
    profile: ModelProfile | None = None,
    dry_run: bool = False,
) -> str:
    """Answer ``q`` from the context and images; ``dry_run`` returns the context instead.

    If the provider rejects the request as too large, the lowest-ranked
    chunk sections (and their images) are dropped to 80% of the chunk text
    and the call is retried once.
    """
    if dry_run:
        return context.rendered
    profile = profile or gateway.profiles.vision
    try:
        return gateway.generate(_messages(q, context, visuals), profile)
    except ContextTooLargeError:
        smaller = shrink_context(context, index, RETRY_BUDGET_FRACTION)
        if smaller == context:
            raise
        logger.warning(
            "context too large, retrying with %d of %d sections", len(smaller.sections), len(context.sections)
        )
        return gateway.generate(_messages(q, smaller, visuals), profile)


__all__ = [
    "MAX_IMAGES",
    "Section",
    "SynthesisContext",
    "VisualItem",
    "VisualPayload",
    "build_context",
    "dereference_visuals",
    "generate_response",
    "shrink_context",
]
