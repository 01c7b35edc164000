"""Input validation helpers shared by the estimators and pipelines."""

from __future__ import annotations

import numbers
from typing import Iterable

import numpy as np


class InvalidTokenError(ValueError):
    """A token id outside the vocabulary."""


def check_token_seq(seq: Iterable[int], vocab_size: int, name: str = "sequence") -> tuple[int, ...]:
    """Return ``seq`` as a tuple of python ints, all in ``[0, vocab_size)``."""
    if isinstance(seq, (str, bytes)):
        raise TypeError(f"{name} must be a sequence of token ids, got {type(seq).__name__}")
    out = []
    for pos, tok in enumerate(seq):
        if isinstance(tok, (bool, np.bool_)) or not isinstance(tok, numbers.Integral):
            raise InvalidTokenError(f"{name}[{pos}] = {tok!r} is not an integer token id")
        tok = int(tok)
        if not 0 <= tok < vocab_size:
            raise InvalidTokenError(
                f"{name}[{pos}] = {tok} outside vocabulary of size {vocab_size}")
        out.append(tok)
    return tuple(out)


def check_probability(p: float, name: str = "p") -> float:
    p = float(p)
    if not (0.0 < p <= 1.0):
        raise ValueError(f"{name} must lie in (0, 1], got {p}")
    return p


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_logprob_vector(vec, vocab_size: int, atol: float = 1e-6) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (vocab_size,):
        raise ValueError(f"expected a vector of length {vocab_size}, got shape {vec.shape}")
    total = float(np.exp(vec).sum())
    if not abs(total - 1.0) <= atol:
        raise ValueError(f"distribution not normalized: sum of probabilities = {total!r}")
    return vec
