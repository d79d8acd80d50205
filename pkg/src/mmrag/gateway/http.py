"""OpenAI-compatible HTTP client with retries and a shared in-flight limit."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any

import httpx

from ..errors import ContextTooLargeError, ModelTransportError
from .profiles import ModelProfile

logger = logging.getLogger(__name__)

RETRY_BACKOFF_S = 0.5
_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}
_CONTEXT_MARKERS = ("context_length_exceeded", "maximum context length", "too many tokens")


class HttpClient:
    def __init__(
        self,
        limiter: threading.BoundedSemaphore,
        transport: httpx.BaseTransport | None = None,
        backoff_s: float = RETRY_BACKOFF_S,
    ) -> None:
        self._limiter = limiter
        self._transport = transport
        self._backoff_s = backoff_s

    def post(self, profile: ModelProfile, path: str, body: dict[str, Any]) -> dict[str, Any]:
        url = profile.endpoint_url.rstrip("/") + path
        headers = {"Content-Type": "application/json"}
        key = profile.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_error = "no attempt made"
        for attempt in range(profile.max_retries + 1):
            if attempt:
                time.sleep(self._backoff_s * 2 ** (attempt - 1))
            try:
                with self._limiter, httpx.Client(
                    transport=self._transport, timeout=profile.timeout_s
                ) as client:
                    resp = client.post(url, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("POST %s failed (attempt %d): %s", url, attempt + 1, last_error)
                continue

            if resp.status_code == 413 or (
                resp.status_code == 400 and any(m in resp.text.lower() for m in _CONTEXT_MARKERS)
            ):
                raise ContextTooLargeError(f"{url}: provider rejected payload ({resp.status_code})")
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("POST %s returned %d (attempt %d)", url, resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ModelTransportError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ModelTransportError(f"{url}: response is not JSON") from exc

        raise ModelTransportError(
            f"{url}: giving up after {profile.max_retries + 1} attempts ({last_error})"
        )
