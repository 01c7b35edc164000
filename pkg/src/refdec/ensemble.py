"""Token-normalized product of experts over a context ensemble.

Each expert is the reverse-direction language model conditioned on one
sampled context.  At every position the experts' log-probabilities are
combined with simplex weights and renormalized over the whole vocabulary::

    log RD(t | text) = sum_i w_i log LM(t | text + c_i) - log Z(text)
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .lm import Direction, LanguageModel, log_softmax
from .sampling import NucleusParams, make_rng, sample_sequence, teacher_forced_logprobs
from .validation import check_positive_int, check_token_seq

SIMPLEX_ATOL = 1e-8


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def decoder_direction(self) -> Direction:
        """Direction of the LM that decodes *towards* this side's contexts."""
        return Direction.BACKWARD if self is Side.RIGHT else Direction.FORWARD

    @classmethod
    def generated_by(cls, direction: Direction) -> "Side":
        """Side of the contexts a model of ``direction`` produces from a source."""
        return cls.RIGHT if Direction(direction) is Direction.FORWARD else cls.LEFT


class DirectionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ContextEnsemble:
    contexts: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]
    side: Side

    def __post_init__(self):
        contexts = tuple(tuple(int(t) for t in c) for c in self.contexts)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "contexts", contexts)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "side", Side(self.side))
        if not contexts:
            raise ValueError("an ensemble needs at least one context")
        if len(contexts) != len(weights):
            raise ValueError(f"{len(contexts)} contexts but {len(weights)} weights")
        if min(weights) < 0:
            raise ValueError("weights must be nonnegative")
        if abs(sum(weights) - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"weights must sum to 1, got {sum(weights)!r}")

    @classmethod
    def uniform(cls, contexts, side) -> "ContextEnsemble":
        n = len(contexts)
        return cls(tuple(contexts), (1.0 / n,) * n, side)

    def __len__(self) -> int:
        return len(self.contexts)

    def to_dict(self, vocab=None) -> dict:
        out = {"side": self.side.value, "weights": list(self.weights),
               "contexts": [list(c) for c in self.contexts]}
        if vocab is not None:
            out["context_text"] = [" ".join(vocab.decode(c)) for c in self.contexts]
        return out


class ReflectiveSampler:
    """A context ensemble bound to the language model that decodes towards it.

    Right-side contexts pair with a backward LM (decoding right to left),
    left-side contexts with a forward LM.  Exposes the provider interface
    (``next_token_logprobs``), so it can be handed directly to
    :func:`refdec.sampling.sample_sequence`.

    ``restrict`` is an optional hook for large vocabularies: given the
    current text it returns the token ids allowed at this position; all
    others get zero probability.
    """

    def __init__(self, ensemble: ContextEnsemble, lm: LanguageModel,
                 separator: Sequence[int] = (),
                 restrict: Callable[[tuple[int, ...]], Sequence[int]] | None = None):
        if lm.lm_direction is not ensemble.side.decoder_direction:
            raise DirectionMismatchError(
                f"{ensemble.side.value} contexts need a {ensemble.side.decoder_direction.value} "
                f"LM, got {lm.lm_direction.value}")
        self.ensemble = ensemble
        self.lm = lm
        self.separator = check_token_seq(separator, lm.vocab_size, "separator")
        self.restrict = restrict
        self._weights = np.asarray(ensemble.weights, dtype=np.float64)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    @property
    def lm_direction(self) -> Direction:
        return self.lm.lm_direction

    @property
    def stop_id(self) -> int:
        return self.lm.stop_id

    @property
    def vocab_size(self) -> int:
        return self.lm.vocab_size

    @property
    def vocab(self):
        return self.lm.vocab

    def expert_conditioning(self, text: tuple[int, ...], i: int) -> tuple[int, ...]:
        ctx = self.ensemble.contexts[i]
        if self.lm_direction is Direction.BACKWARD:
            return text + self.separator + ctx
        return ctx + self.separator + text

    def expert_logprobs(self, text: Sequence[int]) -> np.ndarray:
        """(n_experts, |V|) matrix of floored expert log-probabilities."""
        text = tuple(text)
        return np.stack([self.lm.next_token_logprobs(self.expert_conditioning(text, i))
                         for i in range(len(self.ensemble))])

    def next_token_logprobs(self, text: Sequence[int]) -> np.ndarray:
        text = check_token_seq(text, self.vocab_size, "text")
        cached = self._cache.get(text)
        if cached is None:
            cached = self._combine(text)
            cached.setflags(write=False)
            self._cache[text] = cached
        return cached

    def _combine(self, text: tuple[int, ...]) -> np.ndarray:
        scores = self._weights @ self.expert_logprobs(text)
        if self.restrict is not None:
            allowed = np.asarray(list(self.restrict(text)), dtype=np.int64)
            masked = np.full_like(scores, -np.inf)
            masked[allowed] = scores[allowed]
            scores = masked
        return np.maximum(log_softmax(scores), self.lm.floor)


def _join(sampler: ReflectiveSampler, partial, inner) -> tuple[int, ...]:
    partial, inner = tuple(partial), tuple(inner)
    if sampler.lm_direction is Direction.BACKWARD:
        return partial + inner
    return inner + partial


def rd_next_token_dist(sampler: ReflectiveSampler, partial: Sequence[int],
                       fixed_inner_context: Sequence[int] = ()) -> np.ndarray:
    """PoE distribution for the token adjacent to ``partial``.

    ``partial`` is the already generated suffix (backward) or prefix
    (forward); ``fixed_inner_context`` sits between the generation and the
    contexts.
    """
    return sampler.next_token_logprobs(_join(sampler, partial, fixed_inner_context))


def rd_sequence_logprob(sampler: ReflectiveSampler, s: Sequence[int],
                        fixed_inner_context: Sequence[int] = ()) -> float:
    s = check_token_seq(s, sampler.vocab_size, "s")
    if not s:
        return 0.0
    dists = teacher_forced_logprobs(sampler, s, fixed_inner_context)
    targets = s if sampler.lm_direction is Direction.FORWARD else s[::-1]
    return float(sum(d[t] for d, t in zip(dists, targets)))


def rd_sample(sampler: ReflectiveSampler, fixed_inner_context: Sequence[int],
              params: NucleusParams, count: int,
              rng: np.random.Generator | None = None) -> list[tuple[int, ...]]:
    check_positive_int(count, "count")
    if rng is None:
        rng = make_rng(params.rng_seed)
    return [sample_sequence(sampler, fixed_inner_context, params, rng) for _ in range(count)]
