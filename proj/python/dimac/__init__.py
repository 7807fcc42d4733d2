"""Python access to the summarization core."""

from ._core import (
    DimacError,
    Summarizer,
    baseline_invariance_check,
    build_labels,
    default_config,
    discounted_returns,
    evaluate,
    greedy_match,
    normalize,
    rouge_l,
    rouge_n,
    run_command,
    split_corpus,
    synthetic_corpus,
)

__all__ = [
    "DimacError",
    "Summarizer",
    "baseline_invariance_check",
    "build_labels",
    "default_config",
    "discounted_returns",
    "evaluate",
    "greedy_match",
    "normalize",
    "rouge_l",
    "rouge_n",
    "run_command",
    "split_corpus",
    "synthetic_corpus",
]
