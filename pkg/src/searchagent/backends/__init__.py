from .base import DEFAULT_STOP, LinkIdAllocator, LLMBackend, SearchBackend
from .fixtures import (
    FixtureArchive,
    RecordingLLM,
    RecordingSearch,
    RecordingSession,
    ReplayLLM,
    ReplaySearch,
)
from .http import HttpLLM, HttpSearch, TokenBucket
from .scripted import (
    ScriptedLLM,
    SimulatedAgentLLM,
    SimulatedSearch,
    StaticSearch,
    canned,
)

__all__ = [
    "DEFAULT_STOP",
    "LinkIdAllocator",
    "LLMBackend",
    "SearchBackend",
    "FixtureArchive",
    "RecordingLLM",
    "RecordingSearch",
    "RecordingSession",
    "ReplayLLM",
    "ReplaySearch",
    "HttpLLM",
    "HttpSearch",
    "TokenBucket",
    "ScriptedLLM",
    "SimulatedAgentLLM",
    "SimulatedSearch",
    "StaticSearch",
    "canned",
]
