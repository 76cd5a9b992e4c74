"""Record/replay fixture archives.

A recording session wraps live backends and captures every (request,
response) pair into a directory of JSONL files keyed by a content hash of
the request. Replaying the archive reproduces a run byte-identically with
no live backend at all. Repeated identical requests are replayed in
recorded order (FIFO per key), so replay a recorded run with the same
parallelism discipline it was captured with (the CLI records and replays
sequentially per trajectory).
"""

from __future__ import annotations

import threading
from collections import deque
from pathlib import Path
from typing import Sequence

from ..errors import FixtureMiss
from ..logio import canonical_dumps, read_jsonl, sha256_text
from ..types import ResultItem, SampleResult, SearchQueryRecord
from .base import LinkIdAllocator, check_sample_args, check_search_args

LLM_FILE = "llm.jsonl"
SEARCH_FILE = "search.jsonl"


def _llm_key(prompt: str, n: int, temperature: float, stop: Sequence[str]) -> str:
    return sha256_text(canonical_dumps(
        {"prompt": prompt, "n": n, "temperature": temperature, "stop": list(stop)}
    ))


def _search_key(query: str, top_k: int) -> str:
    return sha256_text(canonical_dumps({"query": query, "top_k": top_k}))


def _normalize_query(q: str) -> str:
    return " ".join(q.casefold().split())


class FixtureArchive:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, filename: str, entry: dict) -> None:
        line = canonical_dumps(entry) + "\n"
        with self._lock:
            with open(self.root / filename, "a", encoding="utf-8") as f:
                f.write(line)


class RecordingLLM:
    def __init__(self, inner, archive: FixtureArchive):
        self.inner = inner
        self.archive = archive

    def sample(self, prompt: str, n: int, temperature: float, stop: Sequence[str]) -> list[SampleResult]:
        samples = self.inner.sample(prompt, n, temperature, stop)
        self.archive.append(LLM_FILE, {
            "key": _llm_key(prompt, n, temperature, stop),
            "prompt": prompt,
            "n": n,
            "temperature": temperature,
            "stop": list(stop),
            "samples": [s.to_dict() for s in samples],
        })
        return samples


class RecordingSearch:
    def __init__(self, inner, archive: FixtureArchive):
        self.inner = inner
        self.archive = archive

    def search(self, query: str, top_k: int, allocator: LinkIdAllocator) -> SearchQueryRecord:
        record = self.inner.search(query, top_k, allocator)
        truncated = set(record.truncated_link_ids)
        self.archive.append(SEARCH_FILE, {
            "key": _search_key(query, top_k),
            "query": query,
            "top_k": top_k,
            "provider": record.provider,
            "retrieved_at": record.retrieved_at,
            "items": [
                {"link_text": r.link_text, "snippet": r.snippet, "truncated": r.link_id in truncated}
                for r in record.results
            ],
        })
        return record


class RecordingSession:
    """Wraps a pair of live backends; everything they serve lands in ``root``."""

    def __init__(self, llm, search, root: Path | str):
        self.archive = FixtureArchive(root)
        self.llm = RecordingLLM(llm, self.archive)
        self.search = RecordingSearch(search, self.archive)

    @property
    def root(self) -> Path:
        return self.archive.root


class ReplayLLM:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self._by_key: dict[str, deque[list[SampleResult]]] = {}
        self._lock = threading.Lock()
        path = self.root / LLM_FILE
        if path.exists():
            for entry in read_jsonl(path):
                samples = [SampleResult.from_dict(s) for s in entry["samples"]]
                self._by_key.setdefault(entry["key"], deque()).append(samples)

    def sample(self, prompt: str, n: int, temperature: float, stop: Sequence[str]) -> list[SampleResult]:
        check_sample_args(prompt, n, temperature)
        key = _llm_key(prompt, n, temperature, stop)
        with self._lock:
            queue = self._by_key.get(key)
            if not queue:
                raise FixtureMiss(
                    f"no recorded samples for prompt starting {prompt[:60]!r} (n={n})", key=key
                )
            return queue.popleft()


class ReplaySearch:
    def __init__(self, root: Path | str, normalized_fallback: bool = True):
        self.root = Path(root)
        self.normalized_fallback = normalized_fallback
        self._by_key: dict[str, deque[dict]] = {}
        self._by_norm: dict[str, deque[dict]] = {}
        self._lock = threading.Lock()
        path = self.root / SEARCH_FILE
        if path.exists():
            for entry in read_jsonl(path):
                self._by_key.setdefault(entry["key"], deque()).append(entry)
                self._by_norm.setdefault(_normalize_query(entry["query"]), deque()).append(entry)

    @staticmethod
    def _drop(queue: deque[dict] | None, entry: dict) -> None:
        if queue is not None and entry in queue:
            queue.remove(entry)

    def search(self, query: str, top_k: int, allocator: LinkIdAllocator) -> SearchQueryRecord:
        check_search_args(query, top_k)
        key = _search_key(query, top_k)
        with self._lock:
            queue = self._by_key.get(key)
            if queue:
                entry = queue.popleft()
                self._drop(self._by_norm.get(_normalize_query(entry["query"])), entry)
            elif self.normalized_fallback and self._by_norm.get(_normalize_query(query)):
                entry = self._by_norm[_normalize_query(query)].popleft()
                self._drop(self._by_key.get(entry["key"]), entry)
            else:
                raise FixtureMiss(f"no recorded results for query {query!r}", key=query)
        items = entry["items"][:top_k]
        ids = allocator.take(len(items))
        results = tuple(
            ResultItem(link_id=i, link_text=item["link_text"], snippet=item["snippet"])
            for i, item in zip(ids, items)
        )
        truncated = tuple(i for i, item in zip(ids, items) if item.get("truncated"))
        return SearchQueryRecord(
            query=entry["query"],
            results=results,
            provider=entry.get("provider", "replay"),
            retrieved_at=entry.get("retrieved_at", "1970-01-01T00:00:00Z"),
            truncated_link_ids=truncated,
        )
