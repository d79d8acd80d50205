"""Multimodal knowledge-graph retrieval-augmented generation.

Documents made of text, image, table and equation units are indexed into a
fused knowledge graph plus an embedding table, and queried through hybrid
graph/vector retrieval.
"""

from .config import EngineConfig
from .content import KnowledgeSource, Modality, load_corpus, load_source
from .gateway import ModelGateway, ModelProfile, ModelProfiles
from .index import RetrievalIndex, align_and_merge, load, persist
from .pipeline import answer_query, build_index, evaluate, make_gateway
from .retrieval import RetrievalConfig, retrieve

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "KnowledgeSource",
    "Modality",
    "ModelGateway",
    "ModelProfile",
    "ModelProfiles",
    "RetrievalConfig",
    "RetrievalIndex",
    "align_and_merge",
    "answer_query",
    "build_index",
    "evaluate",
    "load",
    "load_corpus",
    "load_source",
    "make_gateway",
    "persist",
    "retrieve",
]
