"""Unidirectional language models.

Every model exposes the same contract: ``next_token_logprobs(prefix)`` returns
a normalized log-probability vector over the vocabulary, where ``prefix`` is
always given in logical (left-to-right) order.  For a forward model the prefix
is the text to the left of the predicted position; for a backward model it is
the text to the right.  Backward models handle the reversal internally.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .validation import check_positive_int, check_token_seq
from .vocab import Tokenizer, Vocabulary, build_vocabulary

DEFAULT_FLOOR = -60.0
FORMAT_NAME = "refdec-ngram-lm"
FORMAT_VERSION = 1


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"

    @property
    def opposite(self) -> "Direction":
        return Direction.BACKWARD if self is Direction.FORWARD else Direction.FORWARD


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x)
    return x - (m + math.log(np.exp(x - m).sum()))


def logsumexp(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    m = float(np.max(x))
    return m + math.log(float(np.exp(x - m).sum()))


class LanguageModel(ABC):
    """Next-token distribution provider with a declared reading direction."""

    floor: float = DEFAULT_FLOOR

    @property
    @abstractmethod
    def vocab(self) -> Vocabulary: ...

    @property
    @abstractmethod
    def lm_direction(self) -> Direction: ...

    @abstractmethod
    def _logprobs(self, prefix: tuple[int, ...]) -> np.ndarray:
        """Normalized log-probs given a validated logical-order prefix."""

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def start_id(self) -> int:
        """Marker padding the reading history (the edge the model reads from)."""
        v = self.vocab
        return v.bos_id if self.lm_direction is Direction.FORWARD else v.eos_id

    @property
    def stop_id(self) -> int:
        """Marker the model emits when its reading reaches the far edge."""
        v = self.vocab
        return v.eos_id if self.lm_direction is Direction.FORWARD else v.bos_id

    def next_token_logprobs(self, prefix: Sequence[int]) -> np.ndarray:
        prefix = check_token_seq(prefix, self.vocab_size, "prefix")
        return np.maximum(self._logprobs(prefix), self.floor)

    def sequence_logprob(self, seq: Sequence[int], conditioning: Sequence[int] = ()) -> float:
        """Log-probability of ``seq`` adjacent to ``conditioning``.

        Forward: ``seq`` follows ``conditioning``.  Backward: ``seq`` precedes
        it, and tokens are scored right to left.
        """
        seq = check_token_seq(seq, self.vocab_size, "seq")
        cond = check_token_seq(conditioning, self.vocab_size, "conditioning")
        total = 0.0
        if self.lm_direction is Direction.FORWARD:
            ctx = list(cond)
            for tok in seq:
                total += float(self.next_token_logprobs(ctx)[tok])
                ctx.append(tok)
        else:
            ctx = list(cond)
            for tok in reversed(seq):
                total += float(self.next_token_logprobs(ctx)[tok])
                ctx.insert(0, tok)
        return total


def next_token_logprobs(lm: LanguageModel, prefix: Sequence[int]) -> np.ndarray:
    return lm.next_token_logprobs(prefix)


def sequence_logprob(lm: LanguageModel, seq: Sequence[int],
                     conditioning: Sequence[int] = ()) -> float:
    return lm.sequence_logprob(seq, conditioning)


class CallableLM(LanguageModel):
    """Adapter turning any ``prefix -> logits`` function into a LanguageModel.

    ``fn`` receives the logical-order prefix as a tuple of ids and returns
    unnormalized log-scores over the vocabulary (``-inf`` allowed).  This is
    the hook for plugging in external models.
    """

    def __init__(self, vocab: Vocabulary, direction: Direction | str,
                 fn: Callable[[tuple[int, ...]], np.ndarray], floor: float = DEFAULT_FLOOR):
        self._vocab = vocab
        self._direction = Direction(direction)
        self.fn = fn
        self.floor = floor

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def lm_direction(self) -> Direction:
        return self._direction

    def _logprobs(self, prefix):
        scores = np.asarray(self.fn(prefix), dtype=np.float64)
        if scores.shape != (self.vocab_size,):
            raise ValueError(f"delegate returned shape {scores.shape}, "
                             f"expected ({self.vocab_size},)")
        return log_softmax(scores)


class NGramLM(BaseEstimator, LanguageModel):
    """Interpolated add-k n-gram model.

    Each order backs off to the next lower one with a Dirichlet-style weight::

        P_n(t | h) = (c(h, t) + k |V| P_{n-1}(t | h')) / (c(h) + k |V|)

    and the unigram level is plain add-k.  Every conditional is strictly
    positive for k > 0.

    Parameters
    ----------
    order : int
        Maximum n-gram order (1 = unigram).
    k : float
        Additive smoothing constant, > 0.
    direction : {"forward", "backward"}
        Backward models are trained on reversed documents.
    vocabulary : Vocabulary, optional
        Fixed vocabulary (e.g. shared between a forward/backward pair).  Built
        from the training documents when omitted.
    floor : float
        Lower bound applied to every returned log-probability.
    max_order : int
        Largest accepted ``order``.
    """

    def __init__(self, order=3, k=0.1, direction="forward", vocabulary=None,
                 floor=DEFAULT_FLOOR, max_order=10):
        self.order = order
        self.k = k
        self.direction = direction
        self.vocabulary = vocabulary
        self.floor = floor
        self.max_order = max_order

    # -- LanguageModel -------------------------------------------------

    @property
    def vocab(self) -> Vocabulary:
        check_is_fitted(self, "vocab_")
        return self.vocab_

    @property
    def lm_direction(self) -> Direction:
        return Direction(self.direction)

    def __sklearn_is_fitted__(self):
        return hasattr(self, "counts_")

    # -- training ------------------------------------------------------

    def fit(self, X, y=None):
        """Count n-grams over ``X``, an iterable of token-string documents."""
        order = check_positive_int(self.order, "order")
        if order > self.max_order:
            raise ValueError(f"order {order} exceeds max_order {self.max_order}")
        if not self.k > 0:
            raise ValueError(f"smoothing constant k must be > 0, got {self.k}")
        direction = Direction(self.direction)
        docs = [list(d) for d in X]
        if not docs:
            raise ValueError("cannot train on an empty corpus")
        vocab = self.vocabulary if self.vocabulary is not None else build_vocabulary(docs)
        self.vocab_ = vocab
        counts = [defaultdict(lambda: defaultdict(int)) for _ in range(order)]
        for doc in docs:
            ids = vocab.encode(doc)
            self._count_ids(ids, counts, direction)
        self._set_counts({m + 1: {ctx: dict(nxt) for ctx, nxt in counts[m].items()}
                          for m in range(order)})
        return self

    def _count_ids(self, ids, counts, direction):
        order = len(counts)
        if direction is Direction.FORWARD:
            seq = list(ids) + [self.vocab_.eos_id]
            pad = self.vocab_.bos_id
        else:
            seq = list(reversed(ids)) + [self.vocab_.bos_id]
            pad = self.vocab_.eos_id
        hist = [pad] * (order - 1) + seq
        for pos, tok in enumerate(seq):
            full = hist[pos:pos + order - 1]
            for m in range(order):
                ctx = tuple(full[len(full) - m:]) if m else ()
                counts[m][ctx][tok] += 1

    def _set_counts(self, counts: dict[int, dict[tuple, dict[int, int]]]):
        """Install raw counts and derive the dense lookup tables."""
        V = len(self.vocab_)
        self.counts_ = counts
        uni = np.zeros(V)
        for tok, c in counts[1].get((), {}).items():
            uni[tok] += c
        kV = self.k * V
        self._unigram = np.log((uni + self.k) / (uni.sum() + kV))
        self._tables = {}
        for m in range(2, self.order + 1):
            table = {}
            for ctx, nxt in counts[m].items():
                ids = np.fromiter(nxt.keys(), dtype=np.int64, count=len(nxt))
                cs = np.fromiter(nxt.values(), dtype=np.float64, count=len(nxt))
                table[ctx] = (ids, cs, float(cs.sum()))
            self._tables[m] = table
        self._cache: dict[tuple, np.ndarray] = {}

    # -- inference -----------------------------------------------------

    def _logprobs(self, prefix):
        check_is_fitted(self, "counts_")
        n = self.order - 1
        if self.lm_direction is Direction.FORWARD:
            tail = prefix[len(prefix) - n:] if n else ()
        else:
            tail = tuple(reversed(prefix[:n])) if n else ()
        history = (self.start_id,) * (n - len(tail)) + tuple(tail)
        return self._reading_logprobs(history)

    def _reading_logprobs(self, history: tuple[int, ...]) -> np.ndarray:
        cached = self._cache.get(history)
        if cached is not None:
            return cached
        kV = self.k * len(self.vocab_)
        probs = np.exp(self._unigram)
        for m in range(2, self.order + 1):
            entry = self._tables[m].get(history[len(history) - (m - 1):])
            if entry is None:
                continue
            ids, cs, total = entry
            scaled = probs * kV
            np.add.at(scaled, ids, cs)
            probs = scaled / (total + kV)
        out = np.log(probs)
        out.setflags(write=False)
        self._cache[history] = out
        return out

    def perplexity(self, docs: Iterable[Sequence[str]]) -> float:
        """Per-token perplexity (stop marker included) over token-string documents."""
        total, n = 0.0, 0
        for doc in docs:
            ids = self.vocab.encode(doc)
            if self.lm_direction is Direction.FORWARD:
                seq = ids + [self.stop_id]
            else:
                seq = [self.stop_id] + ids
            total += self.sequence_logprob(seq)
            n += len(seq)
        if n == 0:
            raise ValueError("no tokens to evaluate")
        return math.exp(-total / n)


def train_reference_lm(corpus: Iterable[Sequence[str]], order: int = 3,
                       direction: Direction | str = Direction.FORWARD, k: float = 0.1,
                       vocabulary: Vocabulary | None = None, **kwargs) -> NGramLM:
    return NGramLM(order=order, k=k, direction=Direction(direction).value,
                   vocabulary=vocabulary, **kwargs).fit(corpus)


# -- serialization ------------------------------------------------------


class LMFormatError(ValueError):
    """Malformed model file; the message names the offending field or offset."""


class LMVersionError(LMFormatError):
    """Model file written with an unsupported format version."""


def lm_to_dict(lm: NGramLM, tokenizer: Tokenizer | None = None) -> dict:
    check_is_fitted(lm, "counts_")
    ngrams = []
    for m in range(1, lm.order + 1):
        entries = [{"context": list(ctx), "next": [[t, c] for t, c in sorted(nxt.items())]}
                   for ctx, nxt in sorted(lm.counts_[m].items())]
        ngrams.append({"order": m, "entries": entries})
    out = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "direction": lm.lm_direction.value,
        "order": lm.order,
        "smoothing": {"method": "interpolated-add-k", "k": lm.k},
        "floor": lm.floor,
        "vocabulary": lm.vocab_.to_dict(),
        "ngrams": ngrams,
    }
    tok = tokenizer if tokenizer is not None else getattr(lm, "tokenizer_", None)
    if tok is not None:
        out["tokenizer"] = tok.to_dict()
    return out


def save_lm(lm: NGramLM, path, tokenizer: Tokenizer | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(lm_to_dict(lm, tokenizer), fh, indent=1)
        fh.write("\n")


def _field(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise LMFormatError(f"missing field '{where}{key}'")
    val = obj[key]
    if kind is int and isinstance(val, bool) or not isinstance(val, kind):
        raise LMFormatError(f"field '{where}{key}' has wrong type {type(val).__name__}")
    return val


def lm_from_dict(data: dict) -> NGramLM:
    if not isinstance(data, dict):
        raise LMFormatError("top-level value must be an object")
    if data.get("format") != FORMAT_NAME:
        raise LMFormatError(f"field 'format' must be {FORMAT_NAME!r}, got {data.get('format')!r}")
    version = _field(data, "format_version", int, "")
    if version != FORMAT_VERSION:
        raise LMVersionError(f"unsupported format_version {version} (expected {FORMAT_VERSION})")
    try:
        direction = Direction(_field(data, "direction", str, ""))
    except ValueError as exc:
        raise LMFormatError(f"field 'direction': {exc}") from None
    order = _field(data, "order", int, "")
    smoothing = _field(data, "smoothing", dict, "")
    k = _field(smoothing, "k", (int, float), "smoothing.")
    floor = _field(data, "floor", (int, float), "")
    v = _field(data, "vocabulary", dict, "")
    try:
        vocab = Vocabulary.from_list(_field(v, "tokens", list, "vocabulary."),
                                     _field(v, "bos_id", int, "vocabulary."),
                                     _field(v, "eos_id", int, "vocabulary."),
                                     _field(v, "unk_id", int, "vocabulary."))
    except ValueError as exc:
        if isinstance(exc, LMFormatError):
            raise
        raise LMFormatError(f"field 'vocabulary': {exc}") from None
    V = len(vocab)
    ngrams = _field(data, "ngrams", list, "")
    if len(ngrams) != order:
        raise LMFormatError(f"field 'ngrams' has {len(ngrams)} orders, expected {order}")
    counts = {}
    for i, block in enumerate(ngrams):
        where = f"ngrams[{i}]."
        m = _field(block, "order", int, where)
        if m != i + 1:
            raise LMFormatError(f"field '{where}order' is {m}, expected {i + 1}")
        table = {}
        for j, entry in enumerate(_field(block, "entries", list, where)):
            ew = f"{where}entries[{j}]."
            ctx = _field(entry, "context", list, ew)
            if len(ctx) != m - 1 or not all(isinstance(t, int) and 0 <= t < V for t in ctx):
                raise LMFormatError(f"field '{ew}context' invalid for order {m}")
            nxt = {}
            for pair in _field(entry, "next", list, ew):
                if (not isinstance(pair, list) or len(pair) != 2
                        or not all(isinstance(x, int) and not isinstance(x, bool) for x in pair)
                        or not 0 <= pair[0] < V or pair[1] < 1):
                    raise LMFormatError(f"field '{ew}next' has invalid entry {pair!r}")
                nxt[pair[0]] = pair[1]
            table[tuple(ctx)] = nxt
        counts[m] = table
    lm = NGramLM(order=order, k=float(k), direction=direction.value, vocabulary=vocab,
                 floor=float(floor), max_order=max(order, 10))
    lm.vocab_ = vocab
    lm._set_counts(counts)
    if "tokenizer" in data:
        tok = data["tokenizer"]
        if not isinstance(tok, dict):
            raise LMFormatError("field 'tokenizer' must be an object")
        lm.tokenizer_ = Tokenizer(**{key: bool(tok[key]) for key in ("lowercase", "split_punct")
                                     if key in tok})
    return lm


def load_lm(path) -> NGramLM:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LMFormatError(f"{path}: not valid JSON at offset {exc.pos} "
                            f"(line {exc.lineno}, column {exc.colno}): {exc.msg}") from None
    return lm_from_dict(data)
