from __future__ import annotations

import os
from dataclasses import dataclass

from ..errors import ProfileError

OFFLINE_ENV = "RAG_ANYTHING_OFFLINE"

STUB_EMBED_DIM = 256
HTTP_EMBED_DIM = 3072


def offline_forced() -> bool:
    return os.environ.get(OFFLINE_ENV, "").strip() not in ("", "0", "false", "no")


@dataclass(frozen=True)
class ModelProfile:
    """Connection settings for one model role (chat, vision, embed, rerank)."""

    backend: str = "stub"
    model_name: str = "stub"
    endpoint_url: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    dimensions: int | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("http", "stub"):
            raise ProfileError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and not self.endpoint_url:
            raise ProfileError(f"http profile {self.model_name!r} requires endpoint_url")
        if self.max_retries < 0 or self.timeout_s <= 0:
            raise ProfileError("max_retries must be >= 0 and timeout_s > 0")

    @property
    def effective_backend(self) -> str:
        return "stub" if offline_forced() else self.backend

    @property
    def embed_dim(self) -> int:
        if self.effective_backend == "stub":
            return self.dimensions if self.backend == "stub" and self.dimensions else STUB_EMBED_DIM
        return self.dimensions or HTTP_EMBED_DIM

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None


@dataclass(frozen=True)
class ModelProfiles:
    chat: ModelProfile = ModelProfile()
    vision: ModelProfile = ModelProfile()
    embed: ModelProfile = ModelProfile()
    rerank: ModelProfile = ModelProfile()

    @classmethod
    def stub(cls) -> "ModelProfiles":
        return cls()

    @classmethod
    def openai_defaults(cls, endpoint_url: str = "https://api.openai.com/v1") -> "ModelProfiles":
        return cls(
            chat=ModelProfile("http", "gpt-4o-mini", endpoint_url),
            vision=ModelProfile("http", "gpt-4o-mini", endpoint_url),
            embed=ModelProfile("http", "text-embedding-3-large", endpoint_url, dimensions=HTTP_EMBED_DIM),
            rerank=ModelProfile("http", "bge-reranker-v2-m3", endpoint_url, api_key_env="RERANK_API_KEY"),
        )
