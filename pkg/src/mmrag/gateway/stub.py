"""Deterministic offline backends.

Every function here is a pure function of its arguments, so results are
byte-identical across processes, machines and runs.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from typing import Sequence

import numpy as np

from ..content import ContentUnit, ContextWindow, ImagePayload, TablePayload, payload_text

_TOKEN_RE = re.compile(r"[^\W_]+")


def hash_tokens(text: str) -> list[str]:
    """Lowercased alphanumeric runs; the stripped text itself if there are none."""
    tokens = _TOKEN_RE.findall(text.lower())
    return tokens or [text.strip()]


def token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def stub_embed(text: str, dim: int) -> np.ndarray:
    """Feature-hashed bag of words, L2-normalized."""
    vec = np.zeros(dim, dtype=np.float64)
    for token, count in Counter(hash_tokens(text)).items():
        vec[token_bucket(token, dim)] += count
    return vec / np.linalg.norm(vec)


def stub_rerank(query: str, passages: Sequence[str], dim: int) -> list[float]:
    q = stub_embed(query, dim)
    # hashed count vectors are non-negative, so cosines already lie in [0, 1]
    return [float(np.clip(q @ stub_embed(p, dim), 0.0, 1.0)) for p in passages]


def stub_generate(messages: Sequence[dict]) -> str:
    canonical = json.dumps(messages, sort_keys=True, ensure_ascii=False)
    return "stub-answer " + hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def stub_description(unit: ContentUnit, window: ContextWindow) -> str:
    """``<modality> content:`` block followed by a ``surrounding context:`` block.

    Labels are lower case so the stub extractor never mistakes them for
    entity names.
    """
    context = [t for t in (payload_text(n) for n in window.neighbors) if t]
    return "\n".join(
        [f"{unit.modality.value} content:", payload_text(unit), "surrounding context:", *context]
    )


def stub_entity_summary(unit: ContentUnit) -> dict[str, str]:
    caption = ""
    if isinstance(unit.payload, (ImagePayload, TablePayload)):
        caption = (unit.payload.caption or "").strip()
    name = caption or f"unit:{unit.unit_id}"
    return {
        "entity_name": name,
        "entity_type": unit.modality.value,
        "summary": payload_text(unit).strip() or name,
    }


def stub_judge(reference: str, answer: str) -> dict[str, object]:
    correct = reference.strip().lower() in answer.lower()
    return {
        "correct": correct,
        "reason": "answer contains the reference" if correct else "reference not found in answer",
    }
