"""Exception types shared across the package."""

from __future__ import annotations


class SearchAgentError(Exception):
    """Base class for all package errors."""


class ConfigError(SearchAgentError):
    pass


class RenderError(SearchAgentError):
    """A prompt template could not be rendered (e.g. a missing slot)."""

    def __init__(self, message: str, slot: str | None = None):
        super().__init__(message)
        self.slot = slot


class ParseError(SearchAgentError):
    """A model completion failed to parse.

    ``kind`` is a stable machine-readable tag, one of:
    unterminated_string, bad_token, too_deep, unbalanced_brackets,
    missing_cue, unknown_constructor, wrong_constructor, malformed_kwarg,
    unexpected_keyword, missing_keyword, bad_value, unrevised_failed_check.
    """

    def __init__(self, kind: str, message: str, pos: int | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.pos = pos


class VerdictParseError(ParseError):
    """No boolean verdict found in a judge completion."""

    def __init__(self, message: str):
        super().__init__("missing_verdict", message)


class RankParseError(SearchAgentError):
    """A ranking completion had no usable ``Answer: #X`` line."""


class TransitionError(SearchAgentError):
    """An action is illegal for the agent state it was produced in."""

    def __init__(self, state: str, action_kind: str):
        super().__init__(f"action {action_kind!r} is illegal in state {state!r}")
        self.state = state
        self.action_kind = action_kind


class BudgetMisuse(SearchAgentError):
    """Internal invariant breach around the search budget; signals a bug."""


class BackendError(SearchAgentError):
    pass


class BackendUnreachable(BackendError):
    pass


class RateLimitedError(BackendError):
    pass


class ScriptExhausted(BackendError):
    """A scripted backend ran out of canned samples (cycling is forbidden)."""


class FixtureMiss(BackendError):
    """A replay backend had no recorded entry for the request."""

    def __init__(self, message: str, key: str):
        super().__init__(message)
        self.key = key


class ProviderError(BackendError):
    pass


class AllUnparseable(SearchAgentError):
    """Every sample of a step failed to parse or validate."""


class InsufficientQuestions(SearchAgentError):
    pass


class EmptyMixtureError(SearchAgentError):
    pass


class IntegrityError(SearchAgentError):
    """Stored manifest disagrees with a recount of the mixture file."""


class EvalOnlyDatasetError(SearchAgentError):
    """Refused to build fine-tuning examples from an eval-only dataset."""


class DatasetLoadError(SearchAgentError):
    pass


class UndefinedCorrelationError(SearchAgentError):
    """Correlation is undefined (zero variance in an input vector)."""
