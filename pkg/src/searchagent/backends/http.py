"""Live HTTP backends: a generic JSON sampling endpoint and a JSON search
endpoint, with bounded exponential backoff and a client-side token bucket.

Wire contracts (documented in the README):

* LLM:  ``POST {endpoint}`` with ``{"model", "prompt", "n", "temperature",
  "stop"}`` returning ``{"samples": [{"text", "token_count",
  "sum_log_prob"}, ...]}``.
* Search: ``GET {endpoint}?q=...&k=...`` returning
  ``{"provider": "...", "results": [{"title", "snippet"}, ...]}``.

Credentials are read from an environment variable whose *name* is part of
the configuration; the key itself never lands in any archive.
"""

from __future__ import annotations

import os
import threading
import time
from datetime import datetime, timezone
from typing import Callable, Sequence

import httpx

from ..errors import BackendUnreachable, ProviderError, RateLimitedError
from ..types import ResultItem, SampleResult, SearchQueryRecord
from .base import LinkIdAllocator, check_sample_args, check_search_args

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class TokenBucket:
    """Classic token bucket; ``acquire`` sleeps until a token is available."""

    def __init__(
        self,
        rate_per_sec: float,
        capacity: float | None = None,
        time_fn: Callable[[], float] = time.monotonic,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        if rate_per_sec <= 0:
            raise ValueError("rate_per_sec must be positive")
        self.rate = rate_per_sec
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_sec)
        self._tokens = self.capacity
        self._time_fn = time_fn
        self._sleep_fn = sleep_fn
        self._updated = time_fn()
        self._lock = threading.Lock()

    def acquire(self, tokens: float = 1.0) -> None:
        while True:
            with self._lock:
                now = self._time_fn()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= tokens:
                    self._tokens -= tokens
                    return
                wait = (tokens - self._tokens) / self.rate
            self._sleep_fn(wait)


class _HttpBase:
    def __init__(
        self,
        endpoint: str,
        api_key_env: str | None,
        timeout: float,
        max_retries: int,
        backoff_base: float,
        backoff_cap: float,
        rate_limit: TokenBucket | None,
        transport: httpx.BaseTransport | None,
        sleep_fn: Callable[[float], None],
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.rate_limit = rate_limit
        self._sleep_fn = sleep_fn
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request(self, method: str, **kwargs) -> httpx.Response:
        if self.rate_limit is not None:
            self.rate_limit.acquire()
        last_status: int | None = None
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep_fn(min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1)))
            try:
                resp = self._client.request(method, self.endpoint, headers=self._headers(), **kwargs)
            except httpx.HTTPError as exc:
                last_exc = exc
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_status = resp.status_code
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"{self.endpoint} answered HTTP {resp.status_code}: {resp.text[:200]}")
            return resp
        if last_status == 429:
            raise RateLimitedError(f"{self.endpoint} kept answering 429 after {self.max_retries + 1} attempts")
        if last_status is not None:
            raise BackendUnreachable(f"{self.endpoint} kept answering HTTP {last_status}")
        raise BackendUnreachable(f"{self.endpoint} unreachable: {last_exc}")

    def close(self) -> None:
        self._client.close()


class HttpLLM(_HttpBase):
    def __init__(
        self,
        endpoint: str,
        model: str = "default",
        api_key_env: str | None = "SEARCHAGENT_LLM_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        rate_limit: TokenBucket | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep_fn: Callable[[float], None] = time.sleep,
    ):
        super().__init__(endpoint, api_key_env, timeout, max_retries, backoff_base,
                         backoff_cap, rate_limit, transport, sleep_fn)
        self.model = model

    def sample(self, prompt: str, n: int, temperature: float, stop: Sequence[str]) -> list[SampleResult]:
        check_sample_args(prompt, n, temperature)
        resp = self._request("POST", json={
            "model": self.model,
            "prompt": prompt,
            "n": n,
            "temperature": temperature,
            "stop": list(stop),
        })
        try:
            payload = resp.json()
            samples = [
                SampleResult.make(
                    text=s["text"],
                    token_count=int(s["token_count"]),
                    sum_log_prob=float(s["sum_log_prob"]),
                )
                for s in payload["samples"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed sampling response from {self.endpoint}: {exc}") from exc
        if len(samples) != n:
            raise ProviderError(f"{self.endpoint} returned {len(samples)} samples, expected {n}")
        return samples


class HttpSearch(_HttpBase):
    def __init__(
        self,
        endpoint: str,
        api_key_env: str | None = "SEARCHAGENT_SEARCH_API_KEY",
        provider: str = "http",
        snippet_byte_cap: int = 1024,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        rate_limit: TokenBucket | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep_fn: Callable[[float], None] = time.sleep,
        clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
    ):
        super().__init__(endpoint, api_key_env, timeout, max_retries, backoff_base,
                         backoff_cap, rate_limit, transport, sleep_fn)
        self.provider = provider
        self.snippet_byte_cap = snippet_byte_cap
        self._clock = clock

    def search(self, query: str, top_k: int, allocator: LinkIdAllocator) -> SearchQueryRecord:
        check_search_args(query, top_k)
        resp = self._request("GET", params={"q": query, "k": top_k})
        try:
            payload = resp.json()
            raw = [(str(r["title"]), str(r.get("snippet", ""))) for r in payload["results"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed search response from {self.endpoint}: {exc}") from exc
        raw = raw[:top_k]
        ids = allocator.take(len(raw))
        results = []
        truncated: list[int] = []
        for link_id, (title, snippet) in zip(ids, raw):
            snippet, was_truncated = _cap_bytes(snippet, self.snippet_byte_cap)
            if was_truncated:
                truncated.append(link_id)
            results.append(ResultItem(link_id=link_id, link_text=title, snippet=snippet))
        retrieved_at = self._clock().strftime("%Y-%m-%dT%H:%M:%SZ")
        return SearchQueryRecord(
            query=query,
            results=tuple(results),
            provider=payload.get("provider", self.provider),
            retrieved_at=retrieved_at,
            truncated_link_ids=tuple(truncated),
        )


def _cap_bytes(text: str, cap: int) -> tuple[str, bool]:
    encoded = text.encode("utf-8")
    if len(encoded) <= cap:
        return text, False
    return encoded[:cap].decode("utf-8", errors="ignore"), True
