from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx
import numpy as np

from ..content import (
    ContentUnit,
    ContextWindow,
    EquationPayload,
    ImagePayload,
    Modality,
    TablePayload,
    payload_text,
    table_text,
)
from ..errors import EmptyInputError, MalformedReplyError, ModelTransportError
from ..media import ImageAttachment, resolve_image
from . import stub
from .http import HttpClient
from .profiles import ModelProfile, ModelProfiles
from .prompts import JSON_REPAIR_INSTRUCTION, render_prompt

logger = logging.getLogger(__name__)

EMBED_BATCH_SIZE = 64

_PROMPT_KIND = {
    Modality.IMAGE: "vision",
    Modality.TABLE: "table",
    Modality.EQUATION: "equation",
    # no dedicated template for extension payloads; the vision one reads them well enough
    Modality.GENERIC: "vision",
}


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    images: tuple[ImageAttachment, ...] = ()


@dataclass(frozen=True)
class EntitySummary:
    entity_name: str
    entity_type: str
    summary: str


@dataclass(frozen=True)
class Description:
    description: str
    entity: EntitySummary


def parse_json_reply(text: str) -> Any:
    """Parse a model reply that should be JSON, tolerating code fences and chatter."""
    cleaned = re.sub(r"^\s*```(?:json)?\s*|\s*```\s*$", "", text.strip())
    try:
        return json.loads(cleaned)
    except json.JSONDecodeError:
        pass
    start, end = cleaned.find("{"), cleaned.rfind("}")
    if start == -1 or end <= start:
        raise MalformedReplyError(f"no JSON object in reply: {text[:120]!r}")
    try:
        return json.loads(cleaned[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MalformedReplyError(f"reply is not valid JSON: {exc}") from exc


def _description_from_reply(reply: Any, fallback_type: str) -> Description:
    if not isinstance(reply, dict):
        raise MalformedReplyError("description reply must be a JSON object")
    info = reply.get("entity_info", reply)
    text = reply.get("detailed_description") or reply.get("description")
    name = info.get("entity_name") if isinstance(info, dict) else None
    if not isinstance(text, str) or not text.strip():
        raise MalformedReplyError("reply lacks a detailed_description")
    if not isinstance(name, str) or not name.strip():
        raise MalformedReplyError("reply lacks entity_info.entity_name")
    return Description(
        description=text.strip(),
        entity=EntitySummary(
            entity_name=name.strip(),
            entity_type=str(info.get("entity_type") or fallback_type),
            summary=str(info.get("summary") or text).strip(),
        ),
    )


def _judge_from_reply(reply: Any) -> tuple[bool, str]:
    if not isinstance(reply, dict) or not isinstance(reply.get("correct"), bool):
        raise MalformedReplyError("judge reply must contain a boolean 'correct'")
    return reply["correct"], str(reply.get("reason", ""))


@dataclass
class ModelGateway:
    """Chat, vision, embedding and rerank access behind one object.

    Each operation takes an optional profile; when omitted the gateway uses
    the profile configured for that role.
    """

    profiles: ModelProfiles = field(default_factory=ModelProfiles)
    corpus_root: Path | None = None
    max_in_flight: int = 8
    transport: httpx.BaseTransport | None = None
    retry_backoff_s: float = 0.5

    def __post_init__(self) -> None:
        self._http = HttpClient(
            threading.BoundedSemaphore(self.max_in_flight), self.transport, self.retry_backoff_s
        )

    # -- embeddings ---------------------------------------------------------

    def embed_batch(self, texts: Sequence[str], profile: ModelProfile | None = None) -> list[np.ndarray]:
        profile = profile or self.profiles.embed
        if not texts:
            raise EmptyInputError("embed_batch needs at least one text")
        for i, text in enumerate(texts):
            if not text.strip():
                raise EmptyInputError(f"text {i} is empty")
        if profile.effective_backend == "stub":
            return [stub.stub_embed(t, profile.embed_dim) for t in texts]

        out: list[np.ndarray] = []
        for start in range(0, len(texts), EMBED_BATCH_SIZE):
            batch = list(texts[start : start + EMBED_BATCH_SIZE])
            body: dict[str, Any] = {"model": profile.model_name, "input": batch}
            if profile.dimensions:
                body["dimensions"] = profile.dimensions
            data = self._http.post(profile, "/embeddings", body)
            try:
                rows = sorted(data["data"], key=lambda r: r["index"])
                vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
            except (KeyError, TypeError, ValueError) as exc:
                raise ModelTransportError(f"unexpected /embeddings response: {exc}") from exc
            if len(vectors) != len(batch):
                raise ModelTransportError("embedding count does not match input count")
            for v in vectors:
                norm = np.linalg.norm(v)
                if not np.all(np.isfinite(v)) or norm == 0:
                    raise ModelTransportError("provider returned a degenerate embedding")
                out.append(v / norm)
        return out

    # -- reranking ----------------------------------------------------------

    def rerank(
        self, query: str, passages: Sequence[str], profile: ModelProfile | None = None
    ) -> list[tuple[int, float]]:
        """Indices of ``passages`` by descending relevance; ties keep input order."""
        profile = profile or self.profiles.rerank
        if not passages:
            raise EmptyInputError("rerank needs at least one passage")
        if profile.effective_backend == "stub":
            scores = stub.stub_rerank(query, passages, profile.embed_dim)
        else:
            # "documents" for Cohere/Jina-style servers, "texts" for TEI
            data = self._http.post(
                profile,
                "/rerank",
                {
                    "model": profile.model_name,
                    "query": query,
                    "documents": list(passages),
                    "texts": list(passages),
                },
            )
            scores = [0.0] * len(passages)
            try:
                rows = data["results"] if isinstance(data, dict) else data
                for row in rows:
                    scores[int(row["index"])] = float(
                        np.clip(row.get("relevance_score", row.get("score", 0.0)), 0.0, 1.0)
                    )
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise ModelTransportError(f"unexpected /rerank response: {exc}") from exc
        order = sorted(range(len(passages)), key=lambda i: (-scores[i], i))
        return [(i, scores[i]) for i in order]

    # -- generation ---------------------------------------------------------

    def generate(self, messages: Sequence[Message], profile: ModelProfile | None = None) -> str:
        profile = profile or self.profiles.chat
        if not any(m.role == "user" for m in messages):
            raise ValueError("generate needs at least one user message")
        if profile.effective_backend == "stub":
            return stub.stub_generate(
                [
                    {
                        "role": m.role,
                        "text": m.text,
                        "images": [hashlib.sha256(img.data).hexdigest() for img in m.images],
                    }
                    for m in messages
                ]
            )
        data = self._http.post(profile, "/chat/completions", self.chat_body(messages, profile))
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ModelTransportError(f"unexpected /chat/completions response: {exc}") from exc

    @staticmethod
    def chat_body(messages: Sequence[Message], profile: ModelProfile) -> dict[str, Any]:
        wire = []
        for m in messages:
            if m.images:
                content: Any = [{"type": "text", "text": m.text}] + [
                    {"type": "image_url", "image_url": {"url": img.data_uri()}} for img in m.images
                ]
            else:
                content = m.text
            wire.append({"role": m.role, "content": content})
        return {"model": profile.model_name, "messages": wire, "temperature": 0}

    def complete_json(
        self,
        prompt: str,
        parse: Callable[[Any], Any],
        profile: ModelProfile | None = None,
        images: Sequence[ImageAttachment] = (),
    ) -> Any:
        """Ask for a JSON reply; one repair round-trip if the first reply is unusable."""
        messages = [Message("user", prompt, tuple(images))]
        reply = self.generate(messages, profile)
        try:
            return parse(parse_json_reply(reply))
        except MalformedReplyError as exc:
            logger.warning("malformed JSON reply, retrying once: %s", exc)
        messages += [Message("assistant", reply), Message("user", JSON_REPAIR_INSTRUCTION)]
        return parse(parse_json_reply(self.generate(messages, profile)))

    # -- multimodal description ---------------------------------------------

    def describe_multimodal(
        self, unit: ContentUnit, window: ContextWindow, profile: ModelProfile | None = None
    ) -> Description:
        """Detailed description plus entity summary for one non-text unit."""
        profile = profile or self.profiles.vision
        if unit.is_text:
            raise ValueError("describe_multimodal is for non-text units")
        if window.center != unit.index:
            raise ValueError("window is not centred on the unit")

        if profile.effective_backend == "stub":
            e = stub.stub_entity_summary(unit)
            return Description(stub.stub_description(unit, window), EntitySummary(**e))

        context = "\n".join(t for t in (payload_text(n) for n in window.neighbors) if t) or "(none)"
        images: list[ImageAttachment] = []
        p = unit.payload
        if isinstance(p, ImagePayload):
            content = "\n".join(
                [f"caption: {p.caption or ''}", f"footnotes: {'; '.join(p.footnotes)}", f"reference: {p.image_ref}"]
            )
            try:
                images.append(resolve_image(p.image_ref, self.corpus_root))
            except (OSError, ValueError) as exc:
                logger.warning("%s: describing without pixels, image unavailable: %s", unit.unit_id, exc)
        elif isinstance(p, TablePayload):
            content = table_text(p) or p.raw
        elif isinstance(p, EquationPayload):
            content = p.latex
        else:
            content = payload_text(unit)
        prompt = render_prompt(_PROMPT_KIND[unit.modality], {"content": content, "context": context})
        return self.complete_json(
            prompt, lambda r: _description_from_reply(r, unit.modality.value), profile, images
        )

    # -- structured extraction & judging --------------------------------------

    def extract_json(self, text: str, profile: ModelProfile | None = None) -> dict[str, Any]:
        """Raw entity/relation JSON from the extraction prompt (http backends only)."""

        def parse(reply: Any) -> dict[str, Any]:
            if not isinstance(reply, dict) or not isinstance(reply.get("entities", []), list):
                raise MalformedReplyError("extraction reply must be an object with an entities list")
            return reply

        return self.complete_json(
            render_prompt("entity_extraction", {"content": text}), parse, profile or self.profiles.chat
        )

    def judge(
        self, query: str, reference: str, answer: str, profile: ModelProfile | None = None
    ) -> tuple[bool, str]:
        profile = profile or self.profiles.chat
        if profile.effective_backend == "stub":
            return _judge_from_reply(stub.stub_judge(reference, answer))
        prompt = render_prompt("judge", {"query": query, "reference": reference, "answer": answer})
        return self.complete_json(prompt, _judge_from_reply, profile)
