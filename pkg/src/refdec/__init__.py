"""Reflective decoding: unsupervised paraphrasing and infilling with two unidirectional LMs."""

__version__ = "0.1.0"

from .ensemble import (ContextEnsemble, ReflectiveSampler, Side, rd_next_token_dist,
                       rd_sample, rd_sequence_logprob)
from .estimators import AbductiveInfiller, ReflectiveParaphraser
from .lm import (CallableLM, Direction, LanguageModel, NGramLM, load_lm, next_token_logprobs,
                 save_lm, sequence_logprob, train_reference_lm)
from .metrics import BleuConfig, bleu, contextual_cross_entropy, novelty
from .pipelines import (Candidate, DecodeResult, LMPair, PipelineConfig, abductive_infill,
                        build_reflective_sampler, generate_contexts, paraphrase, postprocess,
                        preset, select_with_novelty_threshold)
from .sampling import (EntropyTarget, NucleusParams, calibrate_p, estimate_sequence_entropy,
                       nucleus_filter, sample_sequence)
from .vocab import Tokenizer, Vocabulary
from .weights import WeightLearnConfig, learn_weights, prune_weights

__all__ = [
    "AbductiveInfiller", "BleuConfig", "CallableLM", "Candidate", "ContextEnsemble",
    "DecodeResult", "Direction", "EntropyTarget", "LMPair", "LanguageModel", "NGramLM",
    "NucleusParams", "PipelineConfig", "ReflectiveParaphraser", "ReflectiveSampler", "Side",
    "Tokenizer", "Vocabulary", "WeightLearnConfig", "abductive_infill", "bleu",
    "build_reflective_sampler", "calibrate_p", "contextual_cross_entropy",
    "estimate_sequence_entropy", "generate_contexts", "learn_weights", "load_lm",
    "next_token_logprobs", "novelty", "nucleus_filter", "paraphrase", "postprocess", "preset",
    "prune_weights", "rd_next_token_dist", "rd_sample", "rd_sequence_logprob", "sample_sequence",
    "save_lm", "select_with_novelty_threshold", "sequence_logprob", "train_reference_lm",
]
