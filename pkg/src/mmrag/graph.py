"""Knowledge graph data model shared by the builders, fusion and retrieval."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import IndexConsistencyError

ANCHOR = "multimodal_anchor"
EXTRACTED = "extracted"
BELONGS_TO = "belongs_to"


def _is_edge_char(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def normalize_name(raw: str) -> str:
    """Matching key for entity alignment.

    NFKC, case-folded, punctuation and whitespace stripped from both ends,
    internal whitespace collapsed to single spaces. Idempotent.
    """
    text = unicodedata.normalize("NFKC", unicodedata.normalize("NFKC", raw).casefold())
    start, end = 0, len(text)
    while start < end and _is_edge_char(text[start]):
        start += 1
    while end > start and _is_edge_char(text[end - 1]):
        end -= 1
    return " ".join(text[start:end].split())


@dataclass(frozen=True)
class Entity:
    entity_id: str
    name: str
    entity_type: str
    description: str
    source_ids: frozenset[str]
    kind: str = EXTRACTED

    @property
    def normalized_name(self) -> str:
        return normalize_name(self.name)

    @property
    def text(self) -> str:
        """Text that represents the entity for embedding and budgeting."""
        return f"{self.name}: {self.description}"

    def to_json(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "name": self.name,
            "entity_type": self.entity_type,
            "description": self.description,
            "source_ids": sorted(self.source_ids),
            "kind": self.kind,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Entity":
        return cls(
            d["entity_id"], d["name"], d["entity_type"], d["description"], frozenset(d["source_ids"]), d["kind"]
        )


@dataclass(frozen=True)
class Relation:
    relation_id: str
    subject_id: str
    object_id: str
    predicate: str
    description: str
    source_ids: frozenset[str]
    kind: str = EXTRACTED

    def to_json(self) -> dict[str, Any]:
        return {
            "relation_id": self.relation_id,
            "subject_id": self.subject_id,
            "object_id": self.object_id,
            "predicate": self.predicate,
            "description": self.description,
            "source_ids": sorted(self.source_ids),
            "kind": self.kind,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Relation":
        return cls(
            d["relation_id"],
            d["subject_id"],
            d["object_id"],
            d["predicate"],
            d["description"],
            frozenset(d["source_ids"]),
            d["kind"],
        )


@dataclass(eq=False)
class KnowledgeGraph:
    """Entities and relations keyed by id, with a normalized-name index.

    Insertion order is preserved and is part of the graph's identity for
    serialization, so builders must add components in a deterministic order.
    """

    entities: dict[str, Entity] = field(default_factory=dict)
    relations: dict[str, Relation] = field(default_factory=dict)
    name_index: dict[str, set[str]] = field(default_factory=dict, init=False)

    def __post_init__(self) -> None:
        for e in self.entities.values():
            self.name_index.setdefault(e.normalized_name, set()).add(e.entity_id)
        for r in self.relations.values():
            self._check_endpoints(r)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.entities == other.entities and self.relations == other.relations

    def __len__(self) -> int:
        return len(self.entities)

    def _check_endpoints(self, r: Relation) -> None:
        for end in (r.subject_id, r.object_id):
            if end not in self.entities:
                raise IndexConsistencyError(f"relation {r.relation_id} points at unknown entity {end}")

    def add_entity(self, entity: Entity) -> None:
        if entity.entity_id in self.entities:
            raise IndexConsistencyError(f"duplicate entity id {entity.entity_id}")
        if not entity.normalized_name:
            raise IndexConsistencyError(f"entity {entity.entity_id} has an empty name")
        self.entities[entity.entity_id] = entity
        self.name_index.setdefault(entity.normalized_name, set()).add(entity.entity_id)

    def add_relation(self, relation: Relation) -> None:
        if relation.relation_id in self.relations:
            raise IndexConsistencyError(f"duplicate relation id {relation.relation_id}")
        self._check_endpoints(relation)
        self.relations[relation.relation_id] = relation

    def extend(self, other: "KnowledgeGraph") -> None:
        for e in other.entities.values():
            self.add_entity(e)
        for r in other.relations.values():
            self.add_relation(r)

    def lookup(self, name: str) -> set[str]:
        return set(self.name_index.get(normalize_name(name), ()))

    def adjacency(self) -> dict[str, list[tuple[str, str]]]:
        """Undirected adjacency: entity id -> [(neighbor id, relation id)]."""
        adj: dict[str, list[tuple[str, str]]] = {eid: [] for eid in self.entities}
        for r in self.relations.values():
            adj[r.subject_id].append((r.object_id, r.relation_id))
            adj[r.object_id].append((r.subject_id, r.relation_id))
        return adj

    def relation_text(self, relation: Relation) -> str:
        subj = self.entities[relation.subject_id].name
        obj = self.entities[relation.object_id].name
        return f"{subj} {relation.predicate} {obj}: {relation.description}"

    def to_json(self) -> dict[str, Any]:
        return {
            "entities": [e.to_json() for e in self.entities.values()],
            "relations": [r.to_json() for r in self.relations.values()],
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "KnowledgeGraph":
        g = cls()
        for e in d["entities"]:
            g.add_entity(Entity.from_json(e))
        for r in d["relations"]:
            g.add_relation(Relation.from_json(r))
        return g

    @classmethod
    def from_parts(cls, entities: Iterable[Entity], relations: Iterable[Relation]) -> "KnowledgeGraph":
        g = cls()
        for e in entities:
            g.add_entity(e)
        for r in relations:
            g.add_relation(r)
        return g
