"""Hybrid retrieval over a :class:`RetrievalIndex`.

Two pathways feed one candidate pool: structural navigation (query terms
matched to entity names, then bounded-hop expansion over the graph) and
semantic matching (exact cosine scan over chunk embeddings). Pooled chunks
are ranked by a weighted sum of three signals:

    fused = w_sem * s_sem + w_str * s_str + w_mod * s_mod

with s_sem = (cos + 1) / 2, s_str = 1 / (1 + hops) (0 if not reached
structurally) and s_mod = 1 when the chunk's modality is one the query asks
for. Scores are compared at 1e-12 resolution and ties go to the smaller
chunk id.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .content import Modality
from .errors import ConfigError, EmptyQueryError
from .gateway import ModelGateway, ModelProfile
from .graph import normalize_name
from .index import RetrievalIndex
from .kg import count_tokens

SCORE_DECIMALS = 12

STOP_WORDS = frozenset(
    """a an the and or but if of at by for with about against between into through during before
    after above below to from up down in out on off over under again further then once here there
    when where why how all any both each few more most other some such no nor not only own same so
    than too very can will just should now is are was were be been being have has had having do
    does did doing i me my we our you your he him his she her it its they them their what which who
    whom this that these those am would could shall may might must show shows shown tell give find
    list lists please""".split()
)

# fixed lexicon: query word -> modality it asks for
MODALITY_LEXICON: dict[str, Modality] = {
    **{w: Modality.IMAGE for w in ("figure", "chart", "plot", "image", "picture", "diagram")},
    **{w: Modality.TABLE for w in ("table", "row", "column", "cell")},
    **{w: Modality.EQUATION for w in ("equation", "formula", "expression")},
}
_PLURALS = {"formulae": "formula"}

_TOKEN_RE = re.compile(r"[^\W_]+")


def _singular(word: str) -> str:
    if word in _PLURALS:
        return _PLURALS[word]
    if word.endswith("s") and word[:-1] in MODALITY_LEXICON:
        return word[:-1]
    return word


@dataclass(frozen=True)
class RetrievalConfig:
    top_k_semantic: int = 20
    hop_limit: int = 1
    w_sem: float = 0.5
    w_str: float = 0.3
    w_mod: float = 0.2
    entity_relation_token_budget: int = 20_000
    chunk_token_budget: int = 12_000
    use_reranker: bool = True
    chunk_only_mode: bool = False

    def __post_init__(self) -> None:
        weights = (self.w_sem, self.w_str, self.w_mod)
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"fusion weights must be non-negative and sum to 1, got {weights}")
        if self.entity_relation_token_budget <= 0 or self.chunk_token_budget <= 0:
            raise ConfigError("token budgets must be positive")
        if self.top_k_semantic <= 0 or self.hop_limit < 0:
            raise ConfigError("top_k_semantic must be positive and hop_limit non-negative")

    def with_weights(self, w_sem: float, w_str: float, w_mod: float) -> "RetrievalConfig":
        """Copy with the given weights rescaled to sum to 1."""
        total = w_sem + w_str + w_mod
        if total <= 0:
            raise ConfigError("at least one weight must be positive")
        return replace(self, w_sem=w_sem / total, w_str=w_str / total, w_mod=w_mod / total)


@dataclass(frozen=True)
class QueryAnalysis:
    raw: str
    normalized: str
    keywords: tuple[str, ...]
    modality_cues: frozenset[Modality]
    embedding: np.ndarray = field(compare=False, repr=False)

    def to_json(self) -> dict[str, Any]:
        return {
            "query": self.raw,
            "keywords": list(self.keywords),
            "modality_cues": sorted(m.value for m in self.modality_cues),
        }


@dataclass(frozen=True)
class StructuralHit:
    hop_distance: int
    matched_entities: tuple[str, ...]


@dataclass(frozen=True)
class RankedCandidate:
    chunk_id: str
    origin: frozenset[str]
    s_sem: float
    s_str: float
    s_mod: float
    fused: float
    hop_distance: int | None = None
    matched_entities: tuple[str, ...] = ()
    rerank_score: float | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "origin": sorted(self.origin),
            "s_sem": self.s_sem,
            "s_str": self.s_str,
            "s_mod": self.s_mod,
            "fused": self.fused,
            "hop_distance": self.hop_distance,
            "matched_entities": list(self.matched_entities),
            "rerank_score": self.rerank_score,
        }


@dataclass(frozen=True)
class SelectionBundle:
    chunks: tuple[RankedCandidate, ...] = ()
    entities: tuple[str, ...] = ()
    relations: tuple[str, ...] = ()
    chunk_tokens: int = 0
    entity_relation_tokens: int = 0


def _key(score: float) -> float:
    return round(score, SCORE_DECIMALS)


def _s_sem(cos: float) -> float:
    return min(1.0, max(0.0, (cos + 1.0) / 2.0))


def analyze_query(q: str, gateway: ModelGateway, profile: ModelProfile | None = None) -> QueryAnalysis:
    if not q or not q.strip():
        raise EmptyQueryError("query is empty")
    words = _TOKEN_RE.findall(q.lower())
    keywords = tuple(dict.fromkeys(w for w in words if w not in STOP_WORDS))
    cues = frozenset(MODALITY_LEXICON[s] for s in map(_singular, words) if s in MODALITY_LEXICON)
    (embedding,) = gateway.embed_batch([q], profile)
    return QueryAnalysis(q, normalize_name(q), keywords, cues, embedding)


def seed_entities(analysis: QueryAnalysis, index: RetrievalIndex) -> list[str]:
    """Entities whose normalized name is a query keyword or a whole-word part of the query."""
    keywords = set(analysis.keywords)
    seeds: set[str] = set()
    for name, ids in index.graph.name_index.items():
        if name in keywords or (
            name in analysis.normalized
            and re.search(rf"(?<!\w){re.escape(name)}(?!\w)", analysis.normalized)
        ):
            seeds.update(ids)
    return sorted(seeds)


def structural_candidates(
    analysis: QueryAnalysis, index: RetrievalIndex, config: RetrievalConfig
) -> dict[str, StructuralHit]:
    """Chunks reachable from query-matched entities within ``hop_limit`` hops.

    Relations are walked in both directions. A chunk is reached through any
    reached entity that cites it, or any relation citing it whose two
    endpoints were both reached (at the larger of their hop counts); its
    hop distance is the minimum over those contributors.
    """
    if config.chunk_only_mode:
        return {}
    graph = index.graph
    hops: dict[str, int] = {s: 0 for s in seed_entities(analysis, index)}
    adjacency = graph.adjacency()
    queue = deque(sorted(hops))
    while queue:
        node = queue.popleft()
        if hops[node] == config.hop_limit:
            continue
        for neighbor, _ in adjacency[node]:
            if neighbor not in hops:
                hops[neighbor] = hops[node] + 1
                queue.append(neighbor)

    best: dict[str, int] = {}
    via: dict[str, set[str]] = {}

    def reach(chunk: str, hop: int, entities: tuple[str, ...]) -> None:
        if chunk not in best or hop < best[chunk]:
            best[chunk] = hop
        via.setdefault(chunk, set()).update(entities)

    for eid, hop in hops.items():
        for chunk in graph.entities[eid].source_ids:
            reach(chunk, hop, (eid,))
    for r in graph.relations.values():
        if r.subject_id in hops and r.object_id in hops:
            hop = max(hops[r.subject_id], hops[r.object_id])
            for chunk in r.source_ids:
                reach(chunk, hop, (r.subject_id, r.object_id))

    return {
        c: StructuralHit(best[c], tuple(sorted(via[c], key=lambda e: (hops[e], e))))
        for c in sorted(best)
        if c in index.chunks
    }


def semantic_candidates(
    analysis: QueryAnalysis, index: RetrievalIndex, config: RetrievalConfig
) -> list[tuple[str, float]]:
    """Top-k chunks by exact cosine similarity, as (chunk id, cosine)."""
    index.check_query_dim(analysis.embedding)
    if not index.chunk_ids:
        return []
    cos = index.chunk_matrix @ analysis.embedding
    order = sorted(range(len(cos)), key=lambda i: (-_key(float(cos[i])), index.chunk_ids[i]))
    return [(index.chunk_ids[i], float(cos[i])) for i in order[: config.top_k_semantic]]


def unify_and_score(
    c_stru: dict[str, StructuralHit],
    c_seman: list[tuple[str, float]],
    analysis: QueryAnalysis,
    index: RetrievalIndex,
    config: RetrievalConfig,
    gateway: ModelGateway | None = None,
    rerank_profile: ModelProfile | None = None,
) -> list[RankedCandidate]:
    """Union of both pathways ranked by fused score (then optionally reranked)."""
    semantic = dict(c_seman)
    pool = sorted(set(c_stru) | set(semantic))
    scored = []
    for cid in pool:
        if cid in semantic:
            cos = semantic[cid]
        else:
            cos = float(index.chunk_vector(cid) @ analysis.embedding)
        hit = c_stru.get(cid)
        s_sem = _s_sem(cos)
        s_str = 1.0 / (1 + hit.hop_distance) if hit else 0.0
        s_mod = 1.0 if index.chunks[cid].modality in analysis.modality_cues else 0.0
        origin = frozenset(
            name for name, member in (("structural", hit), ("semantic", cid in semantic)) if member
        )
        scored.append(
            RankedCandidate(
                chunk_id=cid,
                origin=origin,
                s_sem=s_sem,
                s_str=s_str,
                s_mod=s_mod,
                fused=config.w_sem * s_sem + config.w_str * s_str + config.w_mod * s_mod,
                hop_distance=hit.hop_distance if hit else None,
                matched_entities=hit.matched_entities if hit else (),
            )
        )
    scored.sort(key=lambda c: (-_key(c.fused), c.chunk_id))

    if config.use_reranker and gateway is not None and scored:
        window = scored[: 2 * config.top_k_semantic]
        passages = [index.chunks[c.chunk_id].retrieval_text for c in window]
        order = gateway.rerank(analysis.raw, passages, rerank_profile)
        scored = [replace(window[i], rerank_score=score) for i, score in order] + scored[len(window) :]
    return scored


def apply_budgets(
    ranked: list[RankedCandidate], index: RetrievalIndex, config: RetrievalConfig
) -> SelectionBundle:
    """Admit ranked items until the next one would overflow its budget.

    Chunks and entity/relation context have separate budgets. Context is
    ordered by first mention in the ranking: each matched entity followed by
    its not yet admitted relations to other matched entities. Both lists
    stop at the first item that does not fit.
    """
    chunks: list[RankedCandidate] = []
    chunk_tokens = 0
    for cand in ranked:
        n = index.chunks[cand.chunk_id].token_count
        if chunk_tokens + n > config.chunk_token_budget:
            break
        chunks.append(cand)
        chunk_tokens += n

    if config.chunk_only_mode:
        return SelectionBundle(tuple(chunks), chunk_tokens=chunk_tokens)

    graph = index.graph
    mentioned = list(dict.fromkeys(e for c in ranked for e in c.matched_entities))
    matched = set(mentioned)
    incident: dict[str, list[str]] = {e: [] for e in mentioned}
    for r in graph.relations.values():
        if r.subject_id in matched and r.object_id in matched:
            incident[r.subject_id].append(r.relation_id)
            incident[r.object_id].append(r.relation_id)

    items: list[tuple[str, str, int]] = []
    seen_rel: set[str] = set()
    for eid in mentioned:
        items.append(("entity", eid, count_tokens(graph.entities[eid].text)))
        for rid in incident[eid]:
            if rid not in seen_rel:
                seen_rel.add(rid)
                items.append(("relation", rid, count_tokens(graph.relation_text(graph.relations[rid]))))

    entities: list[str] = []
    relations: list[str] = []
    er_tokens = 0
    for kind, item_id, n in items:
        if er_tokens + n > config.entity_relation_token_budget:
            break
        (entities if kind == "entity" else relations).append(item_id)
        er_tokens += n
    return SelectionBundle(tuple(chunks), tuple(entities), tuple(relations), chunk_tokens, er_tokens)


@dataclass(frozen=True)
class RetrievalResult:
    analysis: QueryAnalysis
    candidates: tuple[RankedCandidate, ...]
    bundle: SelectionBundle

    def to_json(self) -> dict[str, Any]:
        return {
            **self.analysis.to_json(),
            "candidates": [c.to_json() for c in self.candidates],
            "selected": {
                "chunks": [c.chunk_id for c in self.bundle.chunks],
                "entities": list(self.bundle.entities),
                "relations": list(self.bundle.relations),
                "chunk_tokens": self.bundle.chunk_tokens,
                "entity_relation_tokens": self.bundle.entity_relation_tokens,
            },
        }


def retrieve(
    q: str, index: RetrievalIndex, gateway: ModelGateway, config: RetrievalConfig = RetrievalConfig()
) -> RetrievalResult:
    analysis = analyze_query(q, gateway)
    c_stru = structural_candidates(analysis, index, config)
    c_seman = semantic_candidates(analysis, index, config)
    ranked = unify_and_score(c_stru, c_seman, analysis, index, config, gateway)
    return RetrievalResult(analysis, tuple(ranked), apply_budgets(ranked, index, config))


__all__ = [
    "MODALITY_LEXICON",
    "STOP_WORDS",
    "QueryAnalysis",
    "RankedCandidate",
    "RetrievalConfig",
    "RetrievalResult",
    "SelectionBundle",
    "StructuralHit",
    "analyze_query",
    "apply_budgets",
    "retrieve",
    "semantic_candidates",
    "seed_entities",
    "structural_candidates",
    "unify_and_score",
]
