"""Python bindings for the kgsynth library."""

from ._kgsynth import (
    Error,
    ValidationError,
    __version__,
    bucketize,
    decode,
    estimate_cost,
    linearize,
    parse,
    sample,
    score,
)

__all__ = [
    "Error",
    "ValidationError",
    "__version__",
    "bucketize",
    "decode",
    "estimate_cost",
    "linearize",
    "parse",
    "sample",
    "score",
]
