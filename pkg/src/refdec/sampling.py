"""Nucleus sampling, seeded sequence sampling and entropy calibration.

A *provider* is anything with ``lm_direction``, ``stop_id`` and
``next_token_logprobs(prefix)`` -- language models and reflective samplers
both qualify.  Sequences are always returned in logical order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .lm import DEFAULT_FLOOR, Direction
from .validation import check_positive_int, check_probability


class Provider(Protocol):
    lm_direction: Direction
    stop_id: int

    def next_token_logprobs(self, prefix: Sequence[int]) -> np.ndarray: ...


def make_rng(seed: int, *names) -> np.random.Generator:
    """PCG64 generator for a named sub-stream of ``seed``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [zlib.crc32(str(n).encode("utf-8")) for n in names]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


@dataclass(frozen=True)
class NucleusParams:
    p: float = 1.0
    max_len: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        check_probability(self.p, "p")
        check_positive_int(self.max_len, "max_len")


@dataclass(frozen=True)
class EntropyTarget:
    h_target: float
    tolerance: float = 0.05
    p_min: float = 1e-3
    p_max: float = 1.0
    max_iter: int = 40

    def __post_init__(self):
        if self.h_target < 0:
            raise ValueError("h_target must be >= 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        check_probability(self.p_min, "p_min")
        check_probability(self.p_max, "p_max")
        if self.p_min > self.p_max:
            raise ValueError("p_min must not exceed p_max")


def nucleus_support(dist: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Kept token ids (descending probability, ties by id) and their renormalized log-probs."""
    p = check_probability(p)
    dist = np.asarray(dist, dtype=np.float64)
    order = np.argsort(-dist, kind="stable")
    if p >= 1.0:
        n_keep = len(order)
    else:
        cum = np.cumsum(np.exp(dist[order]))
        n_keep = min(int(np.searchsorted(cum / cum[-1], p, side="left")) + 1, len(order))
    kept = order[:n_keep]
    lp = dist[kept]
    m = lp[0]
    lp = lp - (m + math.log(np.exp(lp - m).sum()))
    return kept, lp


def nucleus_filter(dist: np.ndarray, p: float, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """Top-p truncation: keep the smallest probability-sorted prefix with mass >= p."""
    kept, lp = nucleus_support(dist, p)
    out = np.full(len(dist), floor, dtype=np.float64)
    out[kept] = lp
    return out


def _text_for(direction: Direction, conditioning: tuple, generated: list) -> tuple:
    if direction is Direction.FORWARD:
        return conditioning + tuple(generated)
    return tuple(reversed(generated)) + conditioning


def sample_sequence(provider: Provider, conditioning: Sequence[int], params: NucleusParams,
                    rng: np.random.Generator | None = None) -> tuple[int, ...]:
    """Autoregressive nucleus sampling, stopping at the provider's stop marker.

    The stop marker, when drawn, is included in the result.
    """
    if rng is None:
        rng = make_rng(params.rng_seed)
    cond = tuple(int(t) for t in conditioning)
    direction = Direction(provider.lm_direction)
    generated: list[int] = []
    for _ in range(params.max_len):
        dist = provider.next_token_logprobs(_text_for(direction, cond, generated))
        kept, lp = nucleus_support(dist, params.p)
        cdf = np.cumsum(np.exp(lp))
        idx = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(kept) - 1)
        tok = int(kept[idx])
        generated.append(tok)
        if tok == provider.stop_id:
            break
    return tuple(generated) if direction is Direction.FORWARD else tuple(reversed(generated))


def teacher_forced_logprobs(provider: Provider, s: Sequence[int],
                            conditioning: Sequence[int] = ()) -> list[np.ndarray]:
    """Distribution at each position of ``s`` given the true neighbours, in reading order."""
    s = tuple(int(t) for t in s)
    cond = tuple(int(t) for t in conditioning)
    out = []
    if Direction(provider.lm_direction) is Direction.FORWARD:
        for i in range(len(s)):
            out.append(provider.next_token_logprobs(cond + s[:i]))
    else:
        for i in reversed(range(len(s))):
            out.append(provider.next_token_logprobs(s[i + 1:] + cond))
    return out


def _truncated_entropy(dist: np.ndarray, p: float) -> float:
    _, lp = nucleus_support(dist, p)
    return max(0.0, float(-(np.exp(lp) * lp).sum()))


def estimate_sequence_entropy(provider: Provider, s: Sequence[int],
                              conditioning: Sequence[int] = (), p: float = 1.0) -> float:
    """Sum of per-position entropies of the nucleus-truncated distribution along ``s``."""
    if len(s) == 0:
        raise ValueError("s must be non-empty")
    return sum(_truncated_entropy(d, p) for d in teacher_forced_logprobs(provider, s, conditioning))


@dataclass(frozen=True)
class Calibration:
    p: float
    entropy: float
    # None when |entropy - target| <= tolerance; otherwise why not:
    # "below_range", "above_range" (target outside [h(p_min), h(p_max)])
    # or "gap" (target falls inside a jump of the step function).
    flag: str | None = None

    @property
    def converged(self) -> bool:
        return self.flag is None


def calibrate_p(provider: Provider, s: Sequence[int], conditioning: Sequence[int],
                target: EntropyTarget) -> Calibration:
    """Bisection for the nucleus p whose summed entropy over ``s`` hits the target."""
    if len(s) == 0:
        raise ValueError("s must be non-empty")
    dists = teacher_forced_logprobs(provider, s, conditioning)

    def h(p):
        return sum(_truncated_entropy(d, p) for d in dists)

    goal, tol = target.h_target, target.tolerance
    lo, hi = target.p_min, target.p_max
    h_lo = h(lo)
    if h_lo >= goal - tol:
        return Calibration(lo, h_lo, None if abs(h_lo - goal) <= tol else "below_range")
    h_hi = h(hi)
    if h_hi <= goal + tol:
        return Calibration(hi, h_hi, None if abs(h_hi - goal) <= tol else "above_range")
    for _ in range(target.max_iter):
        mid = 0.5 * (lo + hi)
        h_mid = h(mid)
        if abs(h_mid - goal) <= tol:
            return Calibration(mid, h_mid, None)
        if h_mid < goal:
            lo, h_lo = mid, h_mid
        else:
            hi, h_hi = mid, h_mid
    if goal - h_lo <= h_hi - goal:
        return Calibration(lo, h_lo, "gap")
    return Calibration(hi, h_hi, "gap")
