from .canonical import canonicalize, fine_tune_target, past_actions_block, py_str, search_result_block
from .grammar import (
    ParsedCompletion,
    parse_action_list,
    parse_action_literal,
    parse_autoeval_verdict,
    parse_completion,
)
from .templates import (
    TemplateLibrary,
    default_library,
    render_autoeval_prompt,
    render_prompt,
)

__all__ = [
    "canonicalize",
    "fine_tune_target",
    "past_actions_block",
    "py_str",
    "search_result_block",
    "ParsedCompletion",
    "parse_action_list",
    "parse_action_literal",
    "parse_autoeval_verdict",
    "parse_completion",
    "TemplateLibrary",
    "default_library",
    "render_autoeval_prompt",
    "render_prompt",
]
