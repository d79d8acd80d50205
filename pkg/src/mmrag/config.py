"""Engine configuration and its INI file format.

Example::

    [paths]
    corpus_root = corpus
    index_path = corpus.ragidx

    [indexing]
    delta = 1
    max_chunk_tokens = 1024
    overlap_tokens = 64
    workers = 4

    [retrieval]
    top_k_semantic = 20
    hop_limit = 1
    w_sem = 0.5
    w_str = 0.3
    w_mod = 0.2
    use_reranker = true

    [profile.chat]
    backend = http
    model_name = gpt-4o-mini
    endpoint_url = https://api.openai.com/v1
    api_key_env = OPENAI_API_KEY

Secrets never go in the file; profiles name the environment variable that
holds the key.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .gateway import ModelProfile, ModelProfiles
from .kg import DEFAULT_DELTA, TextChunkingPolicy
from .retrieval import RetrievalConfig
from .synthesis import MAX_IMAGES

ROLES = ("chat", "vision", "embed", "rerank")


@dataclass(frozen=True)
class EngineConfig:
    profiles: ModelProfiles = field(default_factory=ModelProfiles.openai_defaults)
    retrieval: RetrievalConfig = RetrievalConfig()
    delta: int = DEFAULT_DELTA
    chunking: TextChunkingPolicy = TextChunkingPolicy()
    workers: int = 1
    max_in_flight: int = 8
    max_images: int = MAX_IMAGES
    corpus_root: str | None = None
    index_path: str | None = None

    def __post_init__(self) -> None:
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.workers < 1 or self.max_in_flight < 1 or self.max_images < 0:
            raise ConfigError("workers and max_in_flight must be >= 1, max_images >= 0")

    def replace(self, **changes: Any) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    def with_retrieval(self, **changes: Any) -> "EngineConfig":
        return dataclasses.replace(self, retrieval=dataclasses.replace(self.retrieval, **changes))

    # -- INI ----------------------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["paths"] = {k: v for k, v in (("corpus_root", self.corpus_root), ("index_path", self.index_path)) if v}
        cp["indexing"] = {
            "delta": str(self.delta),
            "max_chunk_tokens": str(self.chunking.max_chunk_tokens),
            "overlap_tokens": str(self.chunking.overlap_tokens),
            "workers": str(self.workers),
            "max_in_flight": str(self.max_in_flight),
        }
        cp["retrieval"] = {f.name: _fmt(getattr(self.retrieval, f.name)) for f in fields(RetrievalConfig)}
        cp["synthesis"] = {"max_images": str(self.max_images)}
        for role in ROLES:
            profile = getattr(self.profiles, role)
            cp[f"profile.{role}"] = {
                f.name: _fmt(getattr(profile, f.name))
                for f in fields(ModelProfile)
                if getattr(profile, f.name) is not None
            }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "EngineConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        unknown = set(cp.sections()) - {"paths", "indexing", "retrieval", "synthesis"} - {
            f"profile.{r}" for r in ROLES
        }
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            paths = cp["paths"] if cp.has_section("paths") else {}
            idx = cp["indexing"] if cp.has_section("indexing") else {}
            defaults = cls()
            retrieval = _build(RetrievalConfig, cp, "retrieval")
            profiles = ModelProfiles(
                **{r: _build(ModelProfile, cp, f"profile.{r}", getattr(defaults.profiles, r)) for r in ROLES}
            )
            chunking = TextChunkingPolicy(
                int(idx.get("max_chunk_tokens", defaults.chunking.max_chunk_tokens)),
                int(idx.get("overlap_tokens", defaults.chunking.overlap_tokens)),
            )
            return cls(
                profiles=profiles,
                retrieval=retrieval,
                delta=int(idx.get("delta", defaults.delta)),
                chunking=chunking,
                workers=int(idx.get("workers", defaults.workers)),
                max_in_flight=int(idx.get("max_in_flight", defaults.max_in_flight)),
                max_images=cp.getint("synthesis", "max_images", fallback=defaults.max_images),
                corpus_root=paths.get("corpus_root"),
                index_path=paths.get("index_path"),
            )
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        try:
            return cls.from_ini(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_BOOLEAN_STATES = configparser.ConfigParser.BOOLEAN_STATES


def _build(cls: type, cp: configparser.ConfigParser, section: str, base: Any = None) -> Any:
    """Instantiate a dataclass from one INI section, falling back to ``base`` or defaults."""
    base = base if base is not None else cls()
    if not cp.has_section(section):
        return base
    known = {f.name: f for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, raw in cp[section].items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        current = getattr(base, key)
        if isinstance(current, bool):
            if raw.lower() not in _BOOLEAN_STATES:
                raise ConfigError(f"[{section}] {key} must be a boolean")
            kwargs[key] = _BOOLEAN_STATES[raw.lower()]
        elif isinstance(current, int) or key == "dimensions":
            kwargs[key] = int(raw)
        elif isinstance(current, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    # an explicit section replaces unset optional fields of the base profile
    if cls is ModelProfile:
        for opt in ("endpoint_url", "dimensions"):
            kwargs.setdefault(opt, None)
    return dataclasses.replace(base, **kwargs)
