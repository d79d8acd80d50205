"""Graph fusion, the embedding table, and the on-disk index archive."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ChecksumError, DimMismatchError, IndexConsistencyError, IndexFormatError, VersionError
from .gateway import ModelGateway, ModelProfile
from .graph import ANCHOR, EXTRACTED, Entity, KnowledgeGraph, Relation, normalize_name
from .kg import ChunkRecord

FORMAT_VERSION = "ragidx/1"
DESCRIPTION_SEPARATOR = " | "


def _join_unique(parts: Iterable[str]) -> str:
    return DESCRIPTION_SEPARATOR.join(dict.fromkeys(p for p in parts if p))


def align_and_merge(cross_modal: KnowledgeGraph, textual: KnowledgeGraph) -> KnowledgeGraph:
    """Fuse two graphs by normalized entity name.

    Same-name entities (within or across the inputs) collapse into one entity
    ``ent:<normalized name>``. Cross-modal attributes take precedence, a
    multimodal anchor stays an anchor, descriptions are concatenated without
    repeats and provenance is unioned. Relations follow their endpoints;
    identical relations are merged and any relation that would become a
    self-loop is dropped.
    """
    groups: dict[str, list[tuple[int, Entity]]] = {}
    for rank, graph in enumerate((cross_modal, textual)):
        for e in graph.entities.values():
            groups.setdefault(e.normalized_name, []).append((rank, e))

    merged = KnowledgeGraph()
    id_map: dict[tuple[int, str], str] = {}
    for key, members in groups.items():
        eid = "ent:" + key
        # preference: cross-modal anchors, other cross-modal entities, then text entities
        preferred = sorted(members, key=lambda m: (m[0], m[1].kind != ANCHOR))
        merged.add_entity(
            Entity(
                entity_id=eid,
                name=preferred[0][1].name,
                entity_type=next((e.entity_type for _, e in preferred if e.entity_type), ""),
                description=_join_unique(e.description for _, e in members),
                source_ids=frozenset().union(*(e.source_ids for _, e in members)),
                kind=ANCHOR if any(e.kind == ANCHOR for _, e in members) else EXTRACTED,
            )
        )
        for rank, e in members:
            id_map[(rank, e.entity_id)] = eid

    rel_groups: dict[tuple[str, str, str, str], list[Relation]] = {}
    for rank, graph in enumerate((cross_modal, textual)):
        for r in graph.relations.values():
            s, o = id_map[(rank, r.subject_id)], id_map[(rank, r.object_id)]
            if s == o:
                continue
            rel_groups.setdefault((s, r.predicate, o, r.kind), []).append(r)
    for (s, predicate, o, kind), rels in rel_groups.items():
        merged.add_relation(
            Relation(
                relation_id=f"rel:{kind}:{s}|{predicate}|{o}",
                subject_id=s,
                object_id=o,
                predicate=predicate,
                description=_join_unique(r.description for r in rels),
                source_ids=frozenset().union(*(r.source_ids for r in rels)),
                kind=kind,
            )
        )
    return merged


# ---------------------------------------------------------------------------


def entity_key(entity_id: str) -> str:
    return f"entity:{entity_id}"


def relation_key(relation_id: str) -> str:
    return f"relation:{relation_id}"


def chunk_key(chunk_id: str) -> str:
    return f"chunk:{chunk_id}"


@dataclass(eq=False)
class EmbeddingTable:
    keys: tuple[str, ...]
    matrix: np.ndarray  # (len(keys), dim) float64, rows L2-normalized

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.keys):
            raise IndexConsistencyError("embedding matrix shape does not match key count")
        if len(set(self.keys)) != len(self.keys):
            raise IndexConsistencyError("duplicate embedding table keys")
        if not np.all(np.isfinite(self.matrix)):
            raise IndexConsistencyError("embedding table contains non-finite values")
        self._row = {k: i for i, k in enumerate(self.keys)}

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: str) -> bool:
        return key in self._row

    def __getitem__(self, key: str) -> np.ndarray:
        return self.matrix[self._row[key]]

    def rows(self, keys: Sequence[str]) -> np.ndarray:
        return self.matrix[[self._row[k] for k in keys]]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.keys == other.keys and np.array_equal(self.matrix, other.matrix)


def component_texts(graph: KnowledgeGraph, chunks: Iterable[ChunkRecord]) -> dict[str, str]:
    """Embedding input for every entity, relation and chunk, keyed by table key."""
    texts = {entity_key(e.entity_id): e.text for e in graph.entities.values()}
    texts.update({relation_key(r.relation_id): graph.relation_text(r) for r in graph.relations.values()})
    texts.update({chunk_key(c.chunk_id): c.retrieval_text for c in chunks})
    return texts


def build_embedding_table(
    graph: KnowledgeGraph,
    chunks: Iterable[ChunkRecord],
    gateway: ModelGateway,
    profile: ModelProfile | None = None,
) -> EmbeddingTable:
    texts = component_texts(graph, chunks)
    if not texts:
        dim = (profile or gateway.profiles.embed).embed_dim
        return EmbeddingTable((), np.zeros((0, dim)))
    vectors = gateway.embed_batch(list(texts.values()), profile)
    return EmbeddingTable(tuple(texts), np.vstack(vectors))


@dataclass(eq=False)
class RetrievalIndex:
    graph: KnowledgeGraph
    table: EmbeddingTable
    chunks: dict[str, ChunkRecord]
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()
        self.chunk_ids: tuple[str, ...] = tuple(self.chunks)
        self._chunk_matrix = (
            self.table.rows([chunk_key(c) for c in self.chunk_ids])
            if self.chunk_ids
            else np.zeros((0, self.table.dim))
        )

    @property
    def chunk_matrix(self) -> np.ndarray:
        return self._chunk_matrix

    def chunk_vector(self, chunk_id: str) -> np.ndarray:
        return self.table[chunk_key(chunk_id)]

    @property
    def dim(self) -> int:
        return self.table.dim

    def validate(self) -> None:
        expected = set(component_texts(self.graph, self.chunks.values()))
        if set(self.table.keys) != expected:
            missing = sorted(expected - set(self.table.keys))[:3]
            extra = sorted(set(self.table.keys) - expected)[:3]
            raise IndexConsistencyError(f"embedding table mismatch (missing {missing}, extra {extra})")
        for c_id, c in self.chunks.items():
            if c_id != c.chunk_id:
                raise IndexConsistencyError(f"chunk map key {c_id} != {c.chunk_id}")
        for item in (*self.graph.entities.values(), *self.graph.relations.values()):
            dangling = item.source_ids - self.chunks.keys()
            if dangling:
                raise IndexConsistencyError(f"{item} cites unknown chunks {sorted(dangling)}")

    def check_query_dim(self, vector: np.ndarray) -> None:
        if vector.shape[-1] != self.dim:
            raise DimMismatchError(f"query embedding has dim {vector.shape[-1]}, index has {self.dim}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RetrievalIndex):
            return NotImplemented
        return (
            self.graph == other.graph
            and self.table == other.table
            and self.chunks == other.chunks
            and self.manifest == other.manifest
        )

    # -- archive --------------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = {
            "graph": self.graph.to_json(),
            "chunks": [c.to_json() for c in self.chunks.values()],
            "manifest": self.manifest,
            "table": {"keys": list(self.table.keys), "dim": self.table.dim},
        }
        meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode()
        n, dim = self.table.matrix.shape
        body = b"".join(
            [
                FORMAT_VERSION.encode() + b"\n",
                struct.pack("<Q", len(meta_bytes)),
                meta_bytes,
                struct.pack("<QI", n, dim),
                self.table.matrix.astype("<f8").tobytes(),
            ]
        )
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RetrievalIndex":
        header, newline, _ = data.partition(b"\n")
        if not newline or not header.startswith(b"ragidx/"):
            if FORMAT_VERSION.encode().startswith(data[: len(FORMAT_VERSION)]):
                raise ChecksumError("index archive is truncated")
            raise IndexFormatError("not an index archive (missing ragidx header)")
        found = header.decode("utf-8", "replace")
        if found != FORMAT_VERSION:
            raise VersionError(f"index format {found} is not supported (expected {FORMAT_VERSION})")
        if len(data) < 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
            raise ChecksumError("index archive checksum mismatch (corrupt or truncated file)")

        try:
            pos = len(header) + 1
            (meta_len,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            meta = json.loads(data[pos : pos + meta_len].decode())
            pos += meta_len
            n, dim = struct.unpack_from("<QI", data, pos)
            pos += 12
            matrix = np.frombuffer(data, dtype="<f8", count=n * dim, offset=pos).reshape(n, dim)
        except (struct.error, ValueError) as exc:
            raise ChecksumError(f"index archive is malformed: {exc}") from exc

        return cls(
            graph=KnowledgeGraph.from_json(meta["graph"]),
            table=EmbeddingTable(tuple(meta["table"]["keys"]), matrix.astype(np.float64)),
            chunks={c["chunk_id"]: ChunkRecord.from_json(c) for c in meta["chunks"]},
            manifest=meta["manifest"],
        )


def persist(index: RetrievalIndex, path: str | Path) -> None:
    """Write the archive atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(index.to_bytes())
    os.replace(tmp, path)


def load(path: str | Path) -> RetrievalIndex:
    return RetrievalIndex.from_bytes(Path(path).read_bytes())


def assemble_index(
    graph: KnowledgeGraph,
    chunks: Sequence[ChunkRecord],
    gateway: ModelGateway,
    manifest: Mapping[str, Any] | None = None,
    profile: ModelProfile | None = None,
) -> RetrievalIndex:
    table = build_embedding_table(graph, chunks, gateway, profile)
    return RetrievalIndex(graph, table, {c.chunk_id: c for c in chunks}, dict(manifest or {}))


__all__ = [
    "FORMAT_VERSION",
    "EmbeddingTable",
    "RetrievalIndex",
    "align_and_merge",
    "assemble_index",
    "build_embedding_table",
    "chunk_key",
    "component_texts",
    "entity_key",
    "load",
    "normalize_name",
    "persist",
    "relation_key",
]
