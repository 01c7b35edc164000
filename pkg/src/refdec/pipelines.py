"""End-to-end reflective decoding: paraphrasing and abductive infilling."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple, Sequence

import numpy as np

from .ensemble import ContextEnsemble, ReflectiveSampler, Side, rd_sample, rd_sequence_logprob
from .lm import Direction, LanguageModel
from .metrics import BleuConfig, novelty
from .sampling import Calibration, EntropyTarget, NucleusParams, calibrate_p, make_rng, sample_sequence
from .validation import check_positive_int, check_probability, check_token_seq
from .vocab import TERMINAL_PUNCT, Vocabulary
from .weights import WeightLearnConfig, WeightTrace, learn_weights, prune_weights

logger = logging.getLogger(__name__)

TASKS = ("paraphrase", "anlg")
TRIM_MODES = ("sentence", "complete")


@dataclass(frozen=True)
class PipelineConfig:
    """All run parameters.

    ``sample_len`` fixes the generation length; when it is None the length
    is ``len(source) + sample_len_extra``.  ``infill_trim`` is the
    :func:`postprocess` mode for infill hypotheses; paraphrases always keep
    a single sentence.
    """

    task: str = "paraphrase"
    n_c: int = 80
    k_c: int = 6
    p_c: float = 0.7
    len_c: int = 50
    n_samples: int = 30
    sample_len: int | None = None
    sample_len_extra: int = 5
    h_sample: float = 4.0
    novelty_threshold: float = 0.0
    seed: int = 0
    entropy_tolerance: float = 0.05
    p_min: float = 1e-3
    weight_max_iters: int = 200
    weight_step_size: float = 0.5
    weight_tol: float = 1e-4
    score_contexts: str = "pruned"
    infill_trim: str = "sentence"
    length_normalize: bool = False
    separator: tuple[str, ...] = ()
    bleu_max_order: int = 4
    bleu_smoothing: str = "add-one"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("n_c", "k_c", "len_c", "n_samples", "weight_max_iters"):
            check_positive_int(getattr(self, name), name)
        if self.sample_len is not None:
            check_positive_int(self.sample_len, "sample_len")
        check_positive_int(self.sample_len_extra, "sample_len_extra", minimum=0)
        check_probability(self.p_c, "p_c")
        if self.h_sample < 0:
            raise ValueError("h_sample must be >= 0")
        if not 0.0 <= self.novelty_threshold <= 100.0:
            raise ValueError("novelty_threshold must lie in [0, 100]")
        if self.score_contexts not in ("pruned", "all"):
            raise ValueError("score_contexts must be 'pruned' or 'all'")
        if self.infill_trim not in TRIM_MODES:
            raise ValueError(f"infill_trim must be one of {TRIM_MODES}")
        object.__setattr__(self, "separator", tuple(self.separator))

    @property
    def weight_config(self) -> WeightLearnConfig:
        return WeightLearnConfig(self.weight_max_iters, self.weight_step_size,
                                 self.weight_tol, self.k_c)

    @property
    def bleu_config(self) -> BleuConfig:
        return BleuConfig(self.bleu_max_order, self.bleu_smoothing)

    def entropy_target(self) -> EntropyTarget:
        return EntropyTarget(self.h_sample, self.entropy_tolerance, self.p_min, 1.0)

    def generation_length(self, source_len: int) -> int:
        if self.sample_len is not None:
            return self.sample_len
        return max(1, source_len + self.sample_len_extra)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["separator"] = list(self.separator)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def parameter_table(self) -> dict:
        """The run parameters under their conventional short names."""
        length = (f"len(s)+{self.sample_len_extra}" if self.sample_len is None
                  else self.sample_len)
        length_key = "len_s_hat" if self.task == "paraphrase" else "len_h"
        return {length_key: length, "len_c": self.len_c, "n_s_hat": self.n_samples,
                "n_c": self.n_c, "h_sample": self.h_sample, "p_c": self.p_c, "k_c": self.k_c}


PRESETS = {
    "paraphrase": dict(task="paraphrase", sample_len=None, sample_len_extra=5, len_c=50,
                       n_samples=30, n_c=80, h_sample=4.0, p_c=0.7, k_c=6),
    "anlg": dict(task="anlg", sample_len=20, len_c=50, n_samples=20, n_c=50,
                 h_sample=6.0, p_c=0.9, k_c=6),
}


def preset(name: str, **overrides) -> PipelineConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PipelineConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class LMPair:
    forward: LanguageModel
    backward: LanguageModel

    def __post_init__(self):
        if self.forward.lm_direction is not Direction.FORWARD:
            raise ValueError("LMPair.forward must be a forward model")
        if self.backward.lm_direction is not Direction.BACKWARD:
            raise ValueError("LMPair.backward must be a backward model")
        if self.forward.vocab != self.backward.vocab:
            raise ValueError("forward and backward models must share a vocabulary")

    @property
    def vocab(self) -> Vocabulary:
        return self.forward.vocab

    def __getitem__(self, direction) -> LanguageModel:
        return self.forward if Direction(direction) is Direction.FORWARD else self.backward


@dataclass
class Candidate:
    tokens: tuple[int, ...]
    origin: Direction  # decoding direction of the sampler that produced it
    index: int  # position in the pooled sample list (forward samples first)
    rd_logprob: float = float("nan")
    task_score: float = float("nan")
    novelty: float | None = None
    passed_filter: bool = True
    trimmed: bool = True
    details: dict = field(default_factory=dict)

    def to_dict(self, vocab: Vocabulary | None = None) -> dict:
        out = {"tokens": list(self.tokens), "origin": self.origin.value, "index": self.index,
               "rd_logprob": self.rd_logprob, "task_score": self.task_score,
               "novelty": self.novelty, "passed_filter": self.passed_filter,
               "trimmed": self.trimmed}
        if vocab is not None:
            out["text"] = " ".join(vocab.decode(self.tokens))
        if self.details:
            out["details"] = dict(self.details)
        return out


@dataclass
class SamplerBuild:
    sampler: ReflectiveSampler
    learned: ContextEnsemble  # before pruning
    trace: WeightTrace


@dataclass
class DecodeResult:
    source: tuple[int, ...]
    candidates: list[Candidate]  # ranked; for infill only filter survivors
    rejected: list[Candidate] = field(default_factory=list)
    builds: dict[Direction, SamplerBuild] = field(default_factory=dict)
    calibrations: dict[Direction, Calibration] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "ok" if self.candidates else "no_candidates"

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]


# -- contextualization and reflection -----------------------------------------


def generate_contexts(lm: LanguageModel, s_src: Sequence[int], cfg: PipelineConfig,
                      rng: np.random.Generator | None = None) -> list[tuple[int, ...]]:
    """Sample ``n_c`` contexts adjacent to ``s_src``.

    A forward model continues the text (right contexts), a backward model
    precedes it (left contexts).
    """
    s_src = check_token_seq(s_src, lm.vocab_size, "s_src")
    if not s_src:
        raise ValueError("s_src must be non-empty")
    if rng is None:
        rng = make_rng(cfg.seed, "contexts", lm.lm_direction.value)
    params = NucleusParams(p=cfg.p_c, max_len=cfg.len_c)
    return [sample_sequence(lm, s_src, params, rng) for _ in range(cfg.n_c)]


def _separator_ids(cfg: PipelineConfig, vocab: Vocabulary) -> tuple[int, ...]:
    return tuple(vocab.lookup_id(t) for t in cfg.separator)


def _build(s_src, direction: Direction, lms: LMPair, cfg: PipelineConfig,
           rng: np.random.Generator | None) -> SamplerBuild:
    direction = Direction(direction)
    decoder = lms[direction]
    context_lm = lms[direction.opposite]
    if rng is None:
        rng = make_rng(cfg.seed, "contexts", direction.value)
    contexts = generate_contexts(context_lm, s_src, cfg, rng)
    sep = _separator_ids(cfg, lms.vocab)
    learned, trace = learn_weights(contexts, s_src, decoder, cfg.weight_config,
                                   separator=sep, return_trace=True)
    pruned = prune_weights(learned, cfg.k_c)
    return SamplerBuild(ReflectiveSampler(pruned, decoder, sep), learned, trace)


def build_reflective_sampler(s_src: Sequence[int], direction: Direction | str, lms: LMPair,
                             cfg: PipelineConfig,
                             rng: np.random.Generator | None = None) -> ReflectiveSampler:
    """Contexts from the opposite LM, learned and pruned weights, bound to ``direction``'s LM.

    ``direction`` is the decoding direction: BACKWARD builds the right-to-left
    sampler over right contexts, FORWARD the left-to-right one over left
    contexts.
    """
    return _build(s_src, Direction(direction), lms, cfg, rng).sampler


# -- post-processing and selection ----------------------------------------------


class Trimmed(NamedTuple):
    tokens: tuple[int, ...]
    found_boundary: bool


def postprocess(raw: Sequence[int], mode: str, vocab: Vocabulary,
                anchor: Side | str = Side.LEFT) -> Trimmed:
    """Trim a fixed-length generation to sentence boundaries.

    ``anchor`` is the side the generation grew from (the conditioning side).
    ``"sentence"`` keeps the one complete sentence next to the anchor;
    ``"complete"`` keeps every complete sentence and drops only the
    incomplete fragment at the far end.  A
    begin/end marker counts as a boundary and is removed.  Without any
    boundary the input comes back unchanged with ``found_boundary=False``.
    """
    if mode not in TRIM_MODES:
        raise ValueError(f"mode must be one of {TRIM_MODES}, got {mode!r}")
    anchor = Side(anchor)
    toks = list(raw)
    markers = {vocab.bos_id, vocab.eos_id}
    hits = [i for i, t in enumerate(toks) if t in markers]
    if hits:
        toks = toks[:hits[0]] if anchor is Side.LEFT else toks[hits[-1] + 1:]
    toks = [t for t in toks if vocab.lookup_token(t).strip()]
    terminal = [i for i, t in enumerate(toks) if vocab.lookup_token(t) in TERMINAL_PUNCT]
    if anchor is Side.LEFT:
        # a sentence ends after each terminal token
        ends = [i + 1 for i in terminal]
        cut = (ends[0] if mode == "sentence" else ends[-1]) if ends else None
        trimmed = toks[:cut] if cut is not None else None
    else:
        # growing leftwards the text ends with its own terminal; sentences start after the others
        starts = [i + 1 for i in terminal if i + 1 < len(toks)]
        cut = (starts[-1] if mode == "sentence" else starts[0]) if starts else None
        trimmed = toks[cut:] if cut is not None else None
    if hits and (mode == "complete" or trimmed is None):
        return Trimmed(tuple(toks), True)
    if trimmed is None:
        return Trimmed(tuple(raw), False)
    return Trimmed(tuple(trimmed), True)


class Selection(NamedTuple):
    candidate: Candidate
    fallback: bool


def select_with_novelty_threshold(ranked: Sequence[Candidate], threshold: float) -> Selection:
    """Highest-ranked candidate with novelty >= threshold.

    If none qualifies, the most novel candidate (earliest on ties) with
    ``fallback=True``.
    """
    if not ranked:
        raise ValueError("no candidates to select from")
    for cand in ranked:
        if cand.novelty is not None and cand.novelty >= threshold:
            return Selection(cand, False)
    best = max(ranked, key=lambda c: -np.inf if c.novelty is None else c.novelty)
    return Selection(best, True)


def _dedupe(cands: list[Candidate]) -> list[Candidate]:
    seen, out = set(), []
    for c in cands:
        if c.tokens not in seen:
            seen.add(c.tokens)
            out.append(c)
    return out


def _rank_key(c: Candidate):
    return (-c.task_score, -c.rd_logprob, c.index)


def _sample_pool(builds: dict[Direction, SamplerBuild], s_src, lms: LMPair, cfg: PipelineConfig,
                 inner: dict[Direction, tuple], mode: str, max_len: int, rng_key: tuple
                 ) -> tuple[list[Candidate], dict[Direction, Calibration]]:
    pool: list[Candidate] = []
    calibrations = {}
    for direction in (Direction.FORWARD, Direction.BACKWARD):
        sampler = builds[direction].sampler
        cal = calibrate_p(sampler, s_src, (), cfg.entropy_target())
        calibrations[direction] = cal
        if not cal.converged:
            logger.info("entropy calibration for %s: %s (p=%.4f, h=%.3f)", direction.value,
                        cal.flag, cal.p, cal.entropy)
        params = NucleusParams(p=cal.p, max_len=max_len)
        rng = make_rng(cfg.seed, *rng_key, "samples", direction.value)
        raws = rd_sample(sampler, inner[direction], params, cfg.n_samples, rng)
        anchor = Side.LEFT if direction is Direction.FORWARD else Side.RIGHT
        for raw in raws:
            trimmed = postprocess(raw, mode, lms.vocab, anchor)
            pool.append(Candidate(trimmed.tokens, direction, len(pool),
                                  trimmed=trimmed.found_boundary))
    return pool, calibrations


# -- applications ------------------------------------------------------------------


def paraphrase_score(text: Sequence[int], right_contexts, left_contexts, lms: LMPair,
                     length_normalize: bool = False) -> float:
    """Mean log LM->(c | text) over right contexts plus mean log LM<-(c | text) over left."""
    def term(lm, contexts):
        vals = []
        for c in contexts:
            lp = lm.sequence_logprob(c, text)
            vals.append(lp / max(1, len(c)) if length_normalize else lp)
        return sum(vals) / len(vals)
    return term(lms.forward, right_contexts) + term(lms.backward, left_contexts)


def paraphrase(s_src: Sequence[int], lms: LMPair, cfg: PipelineConfig | None = None,
               rng_key: tuple = ()) -> DecodeResult:
    """Sample candidates from both reflective samplers and rank them by contextual fit.

    ``rng_key`` namespaces the random streams (e.g. by input line) below
    ``cfg.seed``.
    """
    cfg = cfg or preset("paraphrase")
    s_src = check_token_seq(s_src, len(lms.vocab), "s_src")
    if not s_src:
        raise ValueError("s_src must be non-empty")
    builds = {d: _build(s_src, d, lms, cfg, make_rng(cfg.seed, *rng_key, "contexts", d.value))
              for d in (Direction.FORWARD, Direction.BACKWARD)}
    pool, calibrations = _sample_pool(builds, s_src, lms, cfg,
                                      {Direction.FORWARD: (), Direction.BACKWARD: ()},
                                      "sentence", cfg.generation_length(len(s_src)), rng_key)
    pool = _dedupe([c for c in pool if c.tokens])

    def contexts_of(direction):
        b = builds[direction]
        return b.learned.contexts if cfg.score_contexts == "all" else b.sampler.ensemble.contexts

    right = contexts_of(Direction.BACKWARD)
    left = contexts_of(Direction.FORWARD)
    bleu_cfg = cfg.bleu_config
    for c in pool:
        c.task_score = paraphrase_score(c.tokens, right, left, lms, cfg.length_normalize)
        c.rd_logprob = rd_sequence_logprob(builds[c.origin].sampler, c.tokens)
        c.novelty = novelty(c.tokens, s_src, bleu_cfg)
    pool.sort(key=_rank_key)
    return DecodeResult(s_src, pool, [], builds, calibrations)


def infill_terms(h: Sequence[int], o1: Sequence[int], o2: Sequence[int], lms: LMPair) -> dict:
    """The four log-probabilities behind the hypothesis score and filter."""
    h, o1, o2 = tuple(h), tuple(o1), tuple(o2)
    return {
        "o1_given_h": lms.backward.sequence_logprob(o1, h + o2),
        "o2_given_h": lms.forward.sequence_logprob(o2, o1 + h),
        "o1_baseline": lms.backward.sequence_logprob(o1, o2),
        "o2_baseline": lms.forward.sequence_logprob(o2, o1),
    }


def passes_infill_filter(terms: dict) -> bool:
    return (terms["o1_given_h"] > terms["o1_baseline"]
            and terms["o2_given_h"] > terms["o2_baseline"])


def abductive_infill(o1: Sequence[int], o2: Sequence[int], lms: LMPair,
                     cfg: PipelineConfig | None = None, rng_key: tuple = ()) -> DecodeResult:
    """Hypotheses between two observations, ranked by how well they explain both.

    Hypotheses that leave either observation less likely than with no
    hypothesis at all are returned in ``rejected`` with
    ``passed_filter=False``.
    """
    cfg = cfg or preset("anlg")
    V = len(lms.vocab)
    o1 = check_token_seq(o1, V, "o1")
    o2 = check_token_seq(o2, V, "o2")
    if not o1 or not o2:
        raise ValueError("both observations must be non-empty")
    s_src = o1 + o2
    builds = {d: _build(s_src, d, lms, cfg, make_rng(cfg.seed, *rng_key, "contexts", d.value))
              for d in (Direction.FORWARD, Direction.BACKWARD)}
    inner = {Direction.FORWARD: o1, Direction.BACKWARD: o2}
    pool, calibrations = _sample_pool(builds, s_src, lms, cfg, inner, cfg.infill_trim,
                                      cfg.generation_length(len(s_src)), rng_key)
    pool = _dedupe(pool)
    bleu_cfg = cfg.bleu_config
    survivors, rejected = [], []
    for c in pool:
        terms = infill_terms(c.tokens, o1, o2, lms)
        c.details = terms
        c.task_score = terms["o1_given_h"] + terms["o2_given_h"]
        c.rd_logprob = rd_sequence_logprob(builds[c.origin].sampler, c.tokens, inner[c.origin])
        c.novelty = novelty(c.tokens, s_src, bleu_cfg) if c.tokens else None
        c.passed_filter = passes_infill_filter(terms)
        (survivors if c.passed_filter else rejected).append(c)
    survivors.sort(key=_rank_key)
    return DecodeResult(s_src, survivors, rejected, builds, calibrations)


def with_overrides(cfg: PipelineConfig, **kwargs) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
