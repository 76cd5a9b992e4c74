"""Backend protocols shared by live, scripted and replay implementations."""

from __future__ import annotations

import threading
from typing import Protocol, Sequence, runtime_checkable

from ..types import SampleResult, SearchQueryRecord

#: Default stop sequences: the end marker plus the start of a new example block.
DEFAULT_STOP: tuple[str, ...] = ("# [END]", "\n#########################")

EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"


@runtime_checkable
class LLMBackend(Protocol):
    def sample(
        self, prompt: str, n: int, temperature: float, stop: Sequence[str]
    ) -> list[SampleResult]: ...


@runtime_checkable
class SearchBackend(Protocol):
    def search(self, query: str, top_k: int, allocator: "LinkIdAllocator") -> SearchQueryRecord: ...


class LinkIdAllocator:
    """Monotone link-id counter; one instance per trajectory, never shared."""

    def __init__(self, start: int = 1):
        if start < 1:
            raise ValueError("link ids start at 1")
        self._next = start
        self._lock = threading.Lock()

    def take(self, n: int) -> list[int]:
        with self._lock:
            ids = list(range(self._next, self._next + n))
            self._next += n
        return ids

    @property
    def next_id(self) -> int:
        return self._next


def check_sample_args(prompt: str, n: int, temperature: float) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if not isinstance(prompt, str):
        raise TypeError("prompt must be a string")


def check_search_args(query: str, top_k: int) -> None:
    if not query.strip():
        raise ValueError("query must be non-empty")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
