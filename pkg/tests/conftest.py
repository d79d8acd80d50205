from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from mmrag.config import EngineConfig
from mmrag.content import load_corpus
from mmrag.gateway import ModelGateway, ModelProfiles
from mmrag.kg import TextChunkingPolicy
from mmrag.pipeline import build_index

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"


@pytest.fixture
def offline(monkeypatch):
    monkeypatch.setenv("RAG_ANYTHING_OFFLINE", "1")


@pytest.fixture
def stub_config() -> EngineConfig:
    return EngineConfig(profiles=ModelProfiles.stub(), chunking=TextChunkingPolicy(64, 8))


@pytest.fixture
def gateway() -> ModelGateway:
    return ModelGateway(ModelProfiles.stub(), corpus_root=CORPUS)


@pytest.fixture
def corpus_dir(tmp_path) -> Path:
    dst = tmp_path / "corpus"
    shutil.copytree(CORPUS, dst)
    return dst


@pytest.fixture(scope="session")
def sources():
    return load_corpus(CORPUS)


@pytest.fixture(scope="session")
def fixture_index(sources):
    config = EngineConfig(profiles=ModelProfiles.stub(), chunking=TextChunkingPolicy(64, 8))
    return build_index(sources, config, ModelGateway(ModelProfiles.stub(), corpus_root=CORPUS))
