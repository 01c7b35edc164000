"""scikit-learn style front ends for the decoding pipelines.

>>> para = ReflectiveParaphraser(order=3, random_state=0).fit(corpus_lines)
>>> para.transform(["the red dog runs to the park ."])
"""

from __future__ import annotations

from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .lm import Direction, NGramLM
from .pipelines import (DecodeResult, LMPair, PipelineConfig, abductive_infill, paraphrase,
                        preset, select_with_novelty_threshold)
from .vocab import Tokenizer, build_vocabulary


def _check_texts(X, name="X") -> list[str]:
    if isinstance(X, str):
        raise TypeError(f"{name} must be an iterable of strings, not a single string")
    texts = list(X)
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise TypeError(f"{name}[{i}] is {type(t).__name__}, expected str")
    return texts


class _ReflectiveBase(BaseEstimator):
    _preset = "paraphrase"

    def __init__(self, order=3, k=0.1, lowercase=True, split_punct=True,
                 novelty_threshold=0.0, random_state=0, config=None,
                 forward_lm=None, backward_lm=None):
        self.order = order
        self.k = k
        self.lowercase = lowercase
        self.split_punct = split_punct
        self.novelty_threshold = novelty_threshold
        self.random_state = random_state
        self.config = config
        self.forward_lm = forward_lm
        self.backward_lm = backward_lm

    def fit(self, X=None, y=None):
        """Train forward and backward n-gram models on raw text documents.

        When both ``forward_lm`` and ``backward_lm`` are given, ``X`` may be
        None and no training happens.
        """
        self.tokenizer_ = Tokenizer(self.lowercase, self.split_punct)
        if self.forward_lm is not None and self.backward_lm is not None:
            self.lms_ = LMPair(self.forward_lm, self.backward_lm)
        else:
            if X is None:
                raise ValueError("X is required unless forward_lm and backward_lm are given")
            docs = [self.tokenizer_.tokenize(t) for t in _check_texts(X) if t.strip()]
            if not docs:
                raise ValueError("cannot fit on an empty corpus")
            vocab = build_vocabulary(docs)
            fwd = NGramLM(self.order, self.k, Direction.FORWARD.value, vocab).fit(docs)
            bwd = NGramLM(self.order, self.k, Direction.BACKWARD.value, vocab).fit(docs)
            self.lms_ = LMPair(fwd, bwd)
        overrides = dict(self.config or {})
        overrides.setdefault("seed", self.random_state)
        overrides.setdefault("novelty_threshold", self.novelty_threshold)
        self.config_ = preset(self._preset, **overrides)
        return self

    def _encode(self, text: str) -> tuple[int, ...]:
        return tuple(self.lms_.vocab.encode(self.tokenizer_.tokenize(text)))

    def _decode(self, ids) -> str:
        return self.tokenizer_.detokenize(self.lms_.vocab.decode(ids))


class ReflectiveParaphraser(TransformerMixin, _ReflectiveBase):
    """Unsupervised paraphraser; ``transform`` maps sentences to paraphrases."""

    _preset = "paraphrase"

    def decode(self, sentence: str, rng_key: tuple = ()) -> DecodeResult:
        check_is_fitted(self, "lms_")
        return paraphrase(self._encode(sentence), self.lms_, self.config_, rng_key)

    def transform(self, X: Iterable[str]) -> list[str]:
        check_is_fitted(self, "lms_")
        out = []
        for i, sentence in enumerate(_check_texts(X)):
            result = self.decode(sentence, rng_key=(i,))
            if not result.candidates:
                out.append("")
                continue
            sel = select_with_novelty_threshold(result.candidates, self.config_.novelty_threshold)
            out.append(self._decode(sel.candidate.tokens))
        return out


class AbductiveInfiller(_ReflectiveBase):
    """Fills the gap between two observations; ``predict`` takes (o1, o2) pairs."""

    _preset = "anlg"

    def decode(self, o1: str, o2: str, rng_key: tuple = ()) -> DecodeResult:
        check_is_fitted(self, "lms_")
        return abductive_infill(self._encode(o1), self._encode(o2), self.lms_, self.config_,
                                rng_key)

    def predict(self, X: Iterable[tuple[str, str]]) -> list[str]:
        """Best filter-passing hypothesis per pair, or ``""`` when none survives."""
        check_is_fitted(self, "lms_")
        out = []
        for i, pair in enumerate(X):
            if len(pair) != 2:
                raise ValueError(f"X[{i}] must be an (o1, o2) pair")
            result = self.decode(pair[0], pair[1], rng_key=(i,))
            out.append(self._decode(result.candidates[0].tokens) if result.candidates else "")
        return out


__all__ = ["ReflectiveParaphraser", "AbductiveInfiller", "PipelineConfig"]
