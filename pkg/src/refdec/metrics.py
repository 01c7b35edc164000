"""Sentence-level BLEU, novelty and contextual cross-entropy."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

from .lm import LanguageModel


@dataclass(frozen=True)
class BleuConfig:
    """``smoothing="add-one"`` adds one to numerator and denominator of the 2..N-gram
    precisions (unigram precision is never smoothed)."""

    max_ngram_order: int = 4
    smoothing: str = "add-one"
    lowercase: bool = False

    def __post_init__(self):
        if not 1 <= self.max_ngram_order <= 4:
            raise ValueError("max_ngram_order must be in 1..4")
        if self.smoothing not in ("none", "add-one"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


UNSMOOTHED = BleuConfig(smoothing="none")


def _ngrams(seq: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def _prep(seq, cfg):
    seq = list(seq)
    if cfg.lowercase:
        seq = [t.lower() if isinstance(t, str) else t for t in seq]
    return seq


def bleu(candidate: Sequence[Hashable], references: Sequence[Sequence[Hashable]],
         cfg: BleuConfig = BleuConfig()) -> float:
    """BLEU in [0, 100] of one candidate against one or more references.

    Modified (clipped) n-gram precisions, geometric mean, brevity penalty
    against the closest reference length.  Orders longer than the candidate
    are dropped from the mean, so identical short sentences still score 100.
    """
    cand = _prep(candidate, cfg)
    refs = [_prep(r, cfg) for r in references]
    if not cand:
        raise ValueError("candidate must be non-empty")
    if not refs or any(not r for r in refs):
        raise ValueError("need at least one reference, all non-empty")
    max_n = min(cfg.max_ngram_order, len(cand))
    log_sum = 0.0
    for n in range(1, max_n + 1):
        counts = _ngrams(cand, n)
        max_ref: Counter = Counter()
        for r in refs:
            for gram, c in _ngrams(r, n).items():
                max_ref[gram] = max(max_ref[gram], c)
        matched = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = sum(counts.values())
        if n > 1 and cfg.smoothing == "add-one":
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    score = 100.0 * bp * math.exp(log_sum / max_n)
    return min(100.0, max(0.0, score))


def novelty(generated: Sequence[Hashable], source: Sequence[Hashable],
            cfg: BleuConfig = BleuConfig()) -> float:
    """100 minus BLEU of the generation against its source."""
    return 100.0 - bleu(generated, [source], cfg)


def contextual_cross_entropy(text: Sequence[int], contexts: Sequence[Sequence[int]],
                             lm: LanguageModel) -> float:
    """Mean negative log-probability of each context adjacent to ``text``.

    For a forward ``lm`` the contexts are right contexts (scored after the
    text); for a backward one they are left contexts.
    """
    if not contexts:
        raise ValueError("need at least one context")
    return -sum(lm.sequence_logprob(c, text) for c in contexts) / len(contexts)
