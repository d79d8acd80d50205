"""End-to-end indexing, querying and evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .config import ROLES, EngineConfig
from .content import KnowledgeSource, dump_source
from .errors import MMRagError
from .gateway import ModelGateway
from .graph import KnowledgeGraph
from .index import FORMAT_VERSION, RetrievalIndex, align_and_merge, assemble_index
from .kg import (
    ChunkRecord,
    UnitOutcome,
    build_cross_modal_graph,
    build_text_graph,
    describe_only,
    text_chunks,
)
from .retrieval import RetrievalResult, retrieve
from .synthesis import SynthesisContext, VisualPayload, build_context, dereference_visuals, generate_response

logger = logging.getLogger(__name__)


def make_gateway(config: EngineConfig, corpus_root: str | Path | None = None, **kwargs: Any) -> ModelGateway:
    root = corpus_root or config.corpus_root
    return ModelGateway(
        config.profiles, corpus_root=Path(root) if root else None, max_in_flight=config.max_in_flight, **kwargs
    )


def corpus_digest(sources: Iterable[KnowledgeSource]) -> str:
    h = hashlib.sha256()
    for s in sources:
        h.update(dump_source(s).encode("utf-8"))
    return h.hexdigest()


def _chunk_order(chunk: ChunkRecord) -> tuple[int, int]:
    first = chunk.unit_ids[0]
    return int(first.rsplit("#", 1)[1]), 0 if chunk.modality.value != "text" else 1


def build_index(
    sources: Sequence[KnowledgeSource],
    config: EngineConfig,
    gateway: ModelGateway,
    workers: int | None = None,
) -> RetrievalIndex:
    """Dual-graph construction, fusion and embedding for a whole corpus.

    Output is independent of ``workers``: per-unit model calls may run
    concurrently but results are assembled in document order.
    """
    workers = workers or config.workers
    chunk_only = config.retrieval.chunk_only_mode
    cross, textual = KnowledgeGraph(), KnowledgeGraph()
    chunks: list[ChunkRecord] = []
    outcomes: list[UnitOutcome] = []

    for source in sources:
        logger.info("indexing %s (%d units)", source.source_id, len(source.units))
        if chunk_only:
            mm = describe_only(source, gateway, config.profiles, config.delta, workers)
            source_chunks = mm.chunks + text_chunks(source, config.chunking)
        else:
            mm = build_cross_modal_graph(source, gateway, config.profiles, config.delta, workers)
            tx = build_text_graph(source, gateway, config.profiles, config.chunking, workers)
            cross.extend(mm.graph)
            textual.extend(tx.graph)
            source_chunks = mm.chunks + tx.chunks
            outcomes += tx.outcomes
        outcomes += mm.outcomes
        chunks += sorted(source_chunks, key=_chunk_order)

    graph = KnowledgeGraph() if chunk_only else align_and_merge(cross, textual)
    manifest = {
        "format": FORMAT_VERSION,
        "sources": [s.source_id for s in sources],
        "corpus_digest": corpus_digest(sources),
        "delta": config.delta,
        "chunking": {
            "max_chunk_tokens": config.chunking.max_chunk_tokens,
            "overlap_tokens": config.chunking.overlap_tokens,
        },
        "chunk_only": chunk_only,
        "profiles": {
            role: {
                "backend": getattr(config.profiles, role).effective_backend,
                "model_name": getattr(config.profiles, role).model_name,
                "embed_dim": getattr(config.profiles, role).embed_dim if role == "embed" else None,
            }
            for role in ROLES
        },
        "units": [o.to_json() for o in outcomes],
        "counts": {
            "entities": len(graph.entities),
            "relations": len(graph.relations),
            "chunks": len(chunks),
            "skipped_units": sum(o.status == "skipped" for o in outcomes),
        },
    }
    return assemble_index(graph, chunks, gateway, manifest, config.profiles.embed)


@dataclass(frozen=True)
class QueryOutcome:
    result: RetrievalResult
    context: SynthesisContext
    visuals: VisualPayload
    answer: str


def answer_query(
    q: str,
    index: RetrievalIndex,
    config: EngineConfig,
    gateway: ModelGateway,
    dry_run: bool = False,
) -> QueryOutcome:
    result = retrieve(q, index, gateway, config.retrieval)
    context = build_context(result.bundle, index)
    visuals = (
        VisualPayload()
        if dry_run
        else dereference_visuals(result.bundle, index, gateway.corpus_root, config.max_images)
    )
    answer = generate_response(q, context, visuals, gateway, index, config.profiles.vision, dry_run)
    return QueryOutcome(result, context, visuals, answer)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalRecord:
    question: str
    reference: str
    answer: str
    verdict: bool | None
    reason: str
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "reference": self.reference,
            "answer": self.answer,
            "verdict": self.verdict,
            "reason": self.reason,
            "error": self.error,
        }


@dataclass
class EvalSummary:
    records: list[EvalRecord] = field(default_factory=list)
    strict: bool = False

    @property
    def total(self) -> int:
        return len(self.records)

    @property
    def correct(self) -> int:
        return sum(r.verdict is True for r in self.records)

    @property
    def errored(self) -> int:
        return sum(r.error is not None for r in self.records)

    @property
    def denominator(self) -> int:
        return self.total if self.strict else self.total - self.errored

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.denominator if self.denominator else None

    def to_json(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "correct": self.correct,
            "errored": self.errored,
            "strict": self.strict,
            "accuracy": self.accuracy,
        }


def read_qa_file(path: str | Path) -> list[dict[str, str]]:
    items = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{n}: invalid JSON: {exc}") from exc
        if not isinstance(row, dict) or not isinstance(row.get("question"), str) or "reference" not in row:
            raise ValueError(f"{path}:{n}: expected an object with question and reference")
        items.append({"question": row["question"], "reference": str(row["reference"])})
    if not items:
        raise ValueError(f"{path}: no questions")
    return items


def evaluate(
    items: Sequence[dict[str, str]],
    index: RetrievalIndex,
    config: EngineConfig,
    gateway: ModelGateway,
    strict: bool = False,
) -> EvalSummary:
    """Answer every question and grade it with the judge model.

    Failures while answering or judging are recorded as errored items.
    Without ``strict`` they are left out of the accuracy denominator; with
    it they count as wrong.
    """
    if not items:
        raise ValueError("no questions")
    summary = EvalSummary(strict=strict)
    for item in items:
        q, ref = item["question"], item["reference"]
        try:
            answer = answer_query(q, index, config, gateway).answer
        except MMRagError as exc:
            summary.records.append(EvalRecord(q, ref, "", None, "", f"{exc.code}: {exc}"))
            continue
        try:
            verdict, reason = gateway.judge(q, ref, answer, config.profiles.chat)
        except MMRagError as exc:
            summary.records.append(EvalRecord(q, ref, answer, None, "", f"{exc.code}: {exc}"))
            continue
        summary.records.append(EvalRecord(q, ref, answer, verdict, reason))
    return summary
