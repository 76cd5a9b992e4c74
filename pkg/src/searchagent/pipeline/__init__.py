from .grow import GrowResult, grow, trajectory_seed
from .improve import (
    FILTERS,
    FineTuneExample,
    MixtureManifest,
    improve,
    manifest_path,
    mixture_stats,
)
from .questions import load_questions, sample_question_set

__all__ = [
    "GrowResult",
    "grow",
    "trajectory_seed",
    "FILTERS",
    "FineTuneExample",
    "MixtureManifest",
    "improve",
    "manifest_path",
    "mixture_stats",
    "load_questions",
    "sample_question_set",
]
