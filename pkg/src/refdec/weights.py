"""Learning simplex weights over a context ensemble, and pruning them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import ContextEnsemble, ReflectiveSampler, Side
from .lm import LanguageModel, Direction
from .sampling import teacher_forced_logprobs
from .validation import check_positive_int, check_token_seq

logger = logging.getLogger(__name__)


class WeightLearningError(ValueError):
    pass


@dataclass(frozen=True)
class WeightLearnConfig:
    max_iters: int = 200
    step_size: float = 0.5
    convergence_tol: float = 1e-4
    k_c: int = 6

    def __post_init__(self):
        check_positive_int(self.max_iters, "max_iters")
        check_positive_int(self.k_c, "k_c")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be > 0")


@dataclass
class WeightTrace:
    """Accepted optimizer iterates (iteration 0 is the uniform start)."""

    iterations: list[int] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    converged: bool = False

    def record(self, it, objective, w):
        self.iterations.append(it)
        self.objectives.append(float(objective))
        self.weights.append(np.array(w, copy=True))

    def to_records(self) -> list[dict]:
        return [{"iteration": i, "objective": j, "weights": w.tolist()}
                for i, j, w in zip(self.iterations, self.objectives, self.weights)]


def _logsumexp_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


class WeightObjective:
    """Log-probability of ``s`` under the reflective sampler, as a function of w.

    The expert distributions at every position of ``s`` do not depend on the
    weights, so they are computed once into a (positions, experts, |V|)
    table.  With ``S_j = sum_i w_i L_ij`` the objective and its gradient are::

        J(w)      = sum_j  S_j[s_j] - logsumexp(S_j)
        dJ/dw_i   = sum_j  L_ij[s_j] - E_{t ~ softmax(S_j)} L_ij[t]

    J is concave in w (linear minus log-sum-exp of linear).
    """

    def __init__(self, lm: LanguageModel, contexts: Sequence[Sequence[int]], s: Sequence[int],
                 fixed_inner_context: Sequence[int] = (), separator: Sequence[int] = ()):
        s = check_token_seq(s, lm.vocab_size, "s_src")
        if not s:
            raise ValueError("s_src must be non-empty")
        if not contexts:
            raise ValueError("need at least one context")
        side = Side.RIGHT if lm.lm_direction is Direction.BACKWARD else Side.LEFT
        probe = ReflectiveSampler(ContextEnsemble.uniform(list(contexts), side), lm, separator)
        positions = teacher_forced_logprobs(_ExpertTable(probe), s, fixed_inner_context)
        self.table = np.stack(positions)  # (P, n, V)
        self.targets = np.asarray(s if lm.lm_direction is Direction.FORWARD else s[::-1])
        P = len(self.targets)
        self.target_lp = self.table[np.arange(P), :, self.targets]  # (P, n)
        bad = ~np.isfinite(self.table).all(axis=(0, 2))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise WeightLearningError(
                f"non-finite expert log-probabilities for context {i}: {list(contexts[i])}")

    @property
    def n_contexts(self) -> int:
        return self.table.shape[1]

    def _scores(self, w):
        return np.einsum("i,piv->pv", np.asarray(w, dtype=np.float64), self.table)

    def value(self, w) -> float:
        S = self._scores(w)
        P = len(self.targets)
        return float((S[np.arange(P), self.targets] - _logsumexp_rows(S)).sum())

    def gradient(self, w) -> np.ndarray:
        return self.value_and_gradient(w)[1]

    def value_and_gradient(self, w) -> tuple[float, np.ndarray]:
        S = self._scores(w)
        P = len(self.targets)
        lse = _logsumexp_rows(S)
        q = np.exp(S - lse[:, None])
        expected = np.einsum("pv,piv->pi", q, self.table)
        value = float((S[np.arange(P), self.targets] - lse).sum())
        return value, (self.target_lp - expected).sum(axis=0)

    def finite_difference_gradient(self, w, eps: float = 1e-5) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        grad = np.empty_like(w)
        for i in range(len(w)):
            e = np.zeros_like(w)
            e[i] = eps
            grad[i] = (self.value(w + e) - self.value(w - e)) / (2 * eps)
        return grad


class _ExpertTable:
    """Provider view of a sampler returning the raw expert matrix per position."""

    def __init__(self, sampler: ReflectiveSampler):
        self.sampler = sampler
        self.lm_direction = sampler.lm_direction
        self.stop_id = sampler.stop_id

    def next_token_logprobs(self, text):
        return self.sampler.expert_logprobs(text)


def _normalize(z: np.ndarray) -> np.ndarray:
    with np.errstate(under="ignore"):
        w = np.exp(z - z.max())
    return w / w.sum()


def learn_weights(contexts: Sequence[Sequence[int]], s_src: Sequence[int], lm: LanguageModel,
                  cfg: WeightLearnConfig = WeightLearnConfig(),
                  fixed_inner_context: Sequence[int] = (), separator: Sequence[int] = (),
                  return_trace: bool = False):
    """Maximize the reflective log-probability of ``s_src`` over the simplex.

    Exponentiated-gradient ascent from uniform weights.  A step is accepted
    only if it does not lower the objective; otherwise the step size is
    halved and retried, and grown by 1.5x after each accepted step.  Stops
    when the Frank-Wolfe gap ``max_i g_i - <w, g>`` (an upper bound on the
    remaining improvement, by concavity) drops below ``convergence_tol``.
    """
    objective = WeightObjective(lm, contexts, s_src, fixed_inner_context, separator)
    n = objective.n_contexts
    side = Side.RIGHT if lm.lm_direction is Direction.BACKWARD else Side.LEFT
    w = np.full(n, 1.0 / n)
    value, grad = objective.value_and_gradient(w)
    trace = WeightTrace()
    trace.record(0, value, w)
    eta = cfg.step_size
    for it in range(1, cfg.max_iters + 1):
        gap = float(grad.max() - w @ grad)
        if gap <= cfg.convergence_tol:
            trace.converged = True
            break
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        while eta > 1e-12:
            cand = _normalize(logw + eta * (grad - grad.max()))
            cand_value, cand_grad = objective.value_and_gradient(cand)
            if np.isfinite(cand_value) and cand_value >= value:
                break
            eta *= 0.5
        else:
            break
        w, value, grad = cand, cand_value, cand_grad
        trace.record(it, value, w)
        eta *= 1.5
    logger.debug("learned %d weights in %d iterations, objective %.6f", n, len(trace.iterations) - 1,
                 value)
    ensemble = ContextEnsemble(tuple(tuple(c) for c in contexts), tuple(w.tolist()), side)
    if return_trace:
        return ensemble, trace
    return ensemble


def prune_weights(ensemble: ContextEnsemble, k_c: int) -> ContextEnsemble:
    """Keep the ``k_c`` heaviest contexts (ties to lower index) and renormalize."""
    if isinstance(k_c, bool) or not isinstance(k_c, int) or k_c < 1:
        raise ValueError(f"k_c must be an integer >= 1, got {k_c!r}")
    n = len(ensemble)
    if n <= k_c:
        return ensemble
    w = ensemble.weights
    keep = sorted(sorted(range(n), key=lambda i: (-w[i], i))[:k_c])
    total = sum(w[i] for i in keep)
    if total <= 0:
        new_w = [1.0 / k_c] * k_c
    else:
        new_w = [w[i] / total for i in keep]
    return ContextEnsemble(tuple(ensemble.contexts[i] for i in keep), tuple(new_w), ensemble.side)
