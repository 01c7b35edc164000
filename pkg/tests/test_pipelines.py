import math
from collections import Counter

import numpy as np
import pytest

from refdec.ensemble import Side, rd_next_token_dist
from refdec.lm import Direction, NGramLM
from refdec.metrics import bleu, novelty
from refdec.pipelines import (Candidate, LMPair, PipelineConfig, abductive_infill,
                              build_reflective_sampler, generate_contexts, infill_terms,
                              paraphrase, paraphrase_score, passes_infill_filter, postprocess,
                              preset, select_with_novelty_threshold)
from refdec.sampling import make_rng
from refdec.synthetic import templated_corpus, templated_sentences
from refdec.vocab import Tokenizer, Vocabulary, build_vocabulary

from _toys import ngram_pair

SMALL = dict(n_c=12, n_samples=8, weight_max_iters=60)


@pytest.fixture(scope="module")
def templated():
    tok = Tokenizer()
    docs = [tok.tokenize(t) for t in templated_corpus(200, seed=1)]
    return ngram_pair(docs, order=3, k=0.1)


def enc(vocab, text):
    return tuple(vocab.encode(text.split()))


# -- postprocess ---------------------------------------------------------------

@pytest.fixture
def words():
    return Vocabulary("how do they form ? the rest is noise . clouds".split())


def test_postprocess_keeps_first_sentence(words):
    out = postprocess(enc(words, "how do they form ? the rest is noise"), "sentence", words)
    assert words.decode(out.tokens) == "how do they form ?".split()
    assert out.found_boundary


def test_postprocess_single_sentence_identity(words):
    raw = enc(words, "how do they form ?")
    assert postprocess(raw, "sentence", words).tokens == raw


def test_postprocess_no_boundary_flagged(words):
    raw = enc(words, "the rest is noise")
    out = postprocess(raw, "sentence", words)
    assert out.tokens == raw and not out.found_boundary


def test_postprocess_right_anchor_keeps_last_sentence(words):
    raw = enc(words, "the rest is noise . how do they form ?")
    out = postprocess(raw, "sentence", words, Side.RIGHT)
    assert words.decode(out.tokens) == "how do they form ?".split()


def test_postprocess_right_anchor_complete_drops_leading_fragment(words):
    raw = enc(words, "the rest is noise . clouds form . how do they form ?")
    out = postprocess(raw, "complete", words, Side.RIGHT)
    assert words.decode(out.tokens) == "clouds form . how do they form ?".split()
    raw = enc(words, "the rest is noise ?")
    assert postprocess(raw, "sentence", words, Side.RIGHT) == (raw, False)


def test_postprocess_markers_are_boundaries(words):
    raw = enc(words, "how do they form") + (words.eos_id,) + enc(words, "the rest")
    out = postprocess(raw, "sentence", words)
    assert words.decode(out.tokens) == "how do they form".split() and out.found_boundary
    raw = (words.bos_id,) + enc(words, "clouds form")
    out = postprocess(raw, "complete", words, Side.RIGHT)
    assert words.decode(out.tokens) == ["clouds", "form"]


def test_postprocess_complete_drops_trailing_fragment(words):
    raw = enc(words, "clouds form . they form ? the rest")
    out = postprocess(raw, "complete", words)
    assert words.decode(out.tokens) == "clouds form . they form ?".split()


def test_postprocess_bad_mode(words):
    with pytest.raises(ValueError):
        postprocess((), "paraphrase", words)


# -- selection -----------------------------------------------------------------

def cands(*novelties):
    return [Candidate((i + 3,), Direction.FORWARD, i, novelty=n) for i, n in enumerate(novelties)]


def test_threshold_zero_is_top():
    assert select_with_novelty_threshold(cands(10, 40, 50), 0).candidate.index == 0


def test_threshold_picks_first_qualifying():
    sel = select_with_novelty_threshold(cands(10, 40, 50), 30)
    assert sel.candidate.index == 1 and not sel.fallback


def test_threshold_fallback_is_most_novel():
    sel = select_with_novelty_threshold(cands(10, 40, 50), 60)
    assert sel.candidate.index == 2 and sel.fallback


def test_threshold_empty_rejected():
    with pytest.raises(ValueError):
        select_with_novelty_threshold([], 0)


def test_threshold_monotone_without_fallback():
    rng = np.random.default_rng(0)
    for _ in range(50):
        ranked = cands(*rng.uniform(0, 100, size=6))
        t1, t2 = sorted(rng.uniform(0, 100, size=2))
        a = select_with_novelty_threshold(ranked, t1)
        b = select_with_novelty_threshold(ranked, t2)
        if not a.fallback and not b.fallback:
            assert a.candidate.novelty <= b.candidate.novelty


# -- config --------------------------------------------------------------------

def test_presets():
    p = preset("paraphrase")
    assert p.generation_length(7) == 12
    a = preset("anlg")
    assert a.generation_length(7) == 20
    assert a.parameter_table() == {"len_h": 20, "len_c": 50, "n_s_hat": 20, "n_c": 50,
                                   "h_sample": 6.0, "p_c": 0.9, "k_c": 6}


@pytest.mark.parametrize("bad", [dict(task="x"), dict(n_c=0), dict(p_c=0.0), dict(p_c=1.2),
                                 dict(novelty_threshold=101), dict(score_contexts="some"),
                                 dict(h_sample=-1.0), dict(infill_trim="paraphrase")])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        PipelineConfig(**bad)


def test_config_round_trip():
    cfg = preset("paraphrase", separator=["."], seed=3)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})


def test_lm_pair_checks():
    docs = [["a", "b"]]
    fwd = NGramLM(2, 0.1, "forward").fit(docs)
    with pytest.raises(ValueError):
        LMPair(fwd, fwd)
    other = NGramLM(2, 0.1, "backward").fit([["c"]])
    with pytest.raises(ValueError):
        LMPair(fwd, other)


# -- contexts and samplers -----------------------------------------------------

def test_generate_contexts_reproducible_and_sized(templated):
    v = templated.vocab
    s = enc(v, "the red dog runs to the park .")
    cfg = preset("paraphrase", n_c=10, len_c=7)
    a = generate_contexts(templated.forward, s, cfg, make_rng(4))
    assert a == generate_contexts(templated.forward, s, cfg, make_rng(4))
    assert len(a) == 10 and all(1 <= len(c) <= 7 for c in a)


def test_lower_p_c_gives_fewer_distinct_contexts(templated):
    v = templated.vocab
    s = enc(v, "the red dog runs to the park .")
    distinct = {0.7: [], 1.0: []}
    for seed in range(20):
        for p in distinct:
            cfg = preset("paraphrase", n_c=20, len_c=8, p_c=p)
            distinct[p].append(len(set(generate_contexts(templated.forward, s, cfg, make_rng(seed)))))
    assert np.mean(distinct[0.7]) < np.mean(distinct[1.0])


def test_single_context_sampler_is_one_expert(templated):
    v = templated.vocab
    s = enc(v, "my sister walks home .")
    cfg = preset("paraphrase", n_c=1, len_c=6)
    sampler = build_reflective_sampler(s, "backward", templated, cfg, make_rng(2))
    (ctx,) = sampler.ensemble.contexts
    assert sampler.ensemble.weights == (1.0,)
    text = enc(v, "home .")
    np.testing.assert_allclose(rd_next_token_dist(sampler, text),
                               templated.backward.next_token_logprobs(text + ctx), atol=1e-12)


def test_default_sampler_has_k_c_contexts(templated):
    v = templated.vocab
    s = enc(v, "the old man jogs across the field .")
    sampler = build_reflective_sampler(s, "forward", templated, preset("paraphrase"))
    assert len(sampler.ensemble) == 6
    assert sampler.ensemble.side is Side.LEFT
    w = np.asarray(sampler.ensemble.weights)
    assert (w >= 0).all() and abs(w.sum() - 1) <= 1e-8


# -- paraphrase ------------------------------------------------------------------

def test_source_outscores_random_tokens(templated):
    v = templated.vocab
    s = enc(v, "the small cat hurries into town .")
    result = paraphrase(s, templated, preset("paraphrase", **SMALL))
    right = result.builds[Direction.BACKWARD].sampler.ensemble.contexts
    left = result.builds[Direction.FORWARD].sampler.ensemble.contexts
    own = paraphrase_score(s, right, left, templated)
    rng = np.random.default_rng(0)
    words = [i for i in range(len(v)) if i not in v.special_ids]
    for _ in range(5):
        noise = tuple(int(t) for t in rng.choice(words, size=len(s)))
        assert own > paraphrase_score(noise, right, left, templated)
    assert math.isfinite(own)


def test_paraphrase_candidates_well_formed(templated):
    v = templated.vocab
    s = enc(v, "the red dog sprints to the river .")
    cfg = preset("paraphrase", **SMALL)
    result = paraphrase(s, templated, cfg)
    assert result.status == "ok"
    toks = [c.tokens for c in result]
    assert len(toks) == len(set(toks)) and all(toks)
    keys = [(-c.task_score, -c.rd_logprob, c.index) for c in result]
    assert keys == sorted(keys)
    for c in result:
        assert c.novelty == 100.0 - bleu(c.tokens, [s])
    again = paraphrase(s, templated, cfg)
    assert [c.tokens for c in again] == toks


def test_paraphrase_on_templates_is_novel_and_related(templated):
    """At the default settings the selected paraphrase usually keeps some content words."""
    v = templated.vocab
    function_words = {"the", "a", ".", "to", "into", "my", "<s>", "</s>", "<unk>"}
    content = {t for t in v.tokens if t not in function_words}
    related = 0
    sentences = templated_sentences(10, seed=7)
    for i, sent in enumerate(sentences):
        s = tuple(v.encode(Tokenizer().tokenize(sent)))
        result = paraphrase(s, templated, preset("paraphrase"), rng_key=(i,))
        sel = select_with_novelty_threshold(result.candidates, 1.0)
        assert not sel.fallback and sel.candidate.novelty > 0
        related += bool(set(v.decode(sel.candidate.tokens)) & set(v.decode(s)) & content)
    assert related >= 8


def test_paraphrase_rejects_empty_source(templated):
    with pytest.raises(ValueError):
        paraphrase((), templated)


def test_score_over_all_contexts_option(templated):
    v = templated.vocab
    s = enc(v, "my sister runs home .")
    a = paraphrase(s, templated, preset("paraphrase", **SMALL))
    b = paraphrase(s, templated, preset("paraphrase", score_contexts="all", **SMALL))
    assert {c.tokens for c in a} == {c.tokens for c in b}
    assert [c.task_score for c in a] != [c.task_score for c in b]


# -- infill --------------------------------------------------------------------

BRIDGE = [d.split() for d in ["x . y . z", "u . v . w"]]


def oracle_prob(docs, vocab, order, k, history, token, backward=False):
    """Interpolated add-k n-gram probability straight from raw counts."""
    V = len(vocab)
    counts = Counter()
    ctx_counts = Counter()
    for d in docs:
        ids = vocab.encode(d)
        if backward:
            seq, pad = ids[::-1] + [vocab.bos_id], vocab.eos_id
        else:
            seq, pad = ids + [vocab.eos_id], vocab.bos_id
        padded = [pad] * (order - 1) + seq
        for i, t in enumerate(seq):
            for m in range(order):
                h = tuple(padded[i + order - 1 - m:i + order - 1])
                counts[(h, t)] += 1
                ctx_counts[h] += 1
    p = (counts[((), token)] + k) / (ctx_counts[()] + k * V)
    for m in range(1, order):
        h = tuple(history[len(history) - m:])
        p = (counts[(h, token)] + k * V * p) / (ctx_counts[h] + k * V)
    return p


def oracle_logprob(docs, vocab, order, k, seq, cond, backward=False):
    if backward:
        # read right to left: reversed (seq + cond) history is what precedes each token
        reading_cond = list(cond[::-1])
        total = 0.0
        for t in seq[::-1]:
            hist = ([vocab.eos_id] * order + reading_cond)[-(order - 1):] if order > 1 else []
            total += math.log(oracle_prob(docs, vocab, order, k, hist, t, backward=True))
            reading_cond.append(t)
        return total
    ctx = list(cond)
    total = 0.0
    for t in seq:
        hist = ([vocab.bos_id] * order + ctx)[-(order - 1):] if order > 1 else []
        total += math.log(oracle_prob(docs, vocab, order, k, hist, t))
        ctx.append(t)
    return total


def test_bridge_hypothesis_passes_filter_by_count_oracle():
    lms = ngram_pair(BRIDGE, order=3, k=0.1)
    v = lms.vocab
    o1, h, o2 = enc(v, "x"), enc(v, "y"), enc(v, "z")
    terms = infill_terms(h, o1, o2, lms)
    expected = {
        "o1_given_h": oracle_logprob(BRIDGE, v, 3, 0.1, o1, h + o2, backward=True),
        "o2_given_h": oracle_logprob(BRIDGE, v, 3, 0.1, o2, o1 + h),
        "o1_baseline": oracle_logprob(BRIDGE, v, 3, 0.1, o1, o2, backward=True),
        "o2_baseline": oracle_logprob(BRIDGE, v, 3, 0.1, o2, o1),
    }
    for key, val in expected.items():
        assert terms[key] == pytest.approx(val, abs=1e-12), key
    assert expected["o1_given_h"] > expected["o1_baseline"]
    assert expected["o2_given_h"] > expected["o2_baseline"]
    assert passes_infill_filter(terms)


def test_empty_hypothesis_rejected():
    lms = ngram_pair(BRIDGE, order=3, k=0.1)
    v = lms.vocab
    terms = infill_terms((), enc(v, "x"), enc(v, "z"), lms)
    assert terms["o1_given_h"] == terms["o1_baseline"]
    assert terms["o2_given_h"] == terms["o2_baseline"]
    assert not passes_infill_filter(terms)


def test_infill_pipeline_on_bridge_corpus():
    lms = ngram_pair(BRIDGE, order=3, k=0.1)
    v = lms.vocab
    o1, o2 = enc(v, "x"), enc(v, "z")
    result = abductive_infill(o1, o2, lms, preset("anlg", n_c=10, n_samples=10))
    assert result.candidates
    everything = result.candidates + result.rejected
    assert len({c.tokens for c in everything}) == len(everything)
    for c in result.candidates:
        assert c.passed_filter and passes_infill_filter(infill_terms(c.tokens, o1, o2, lms))
        assert c.task_score == c.details["o1_given_h"] + c.details["o2_given_h"]
    for c in result.rejected:
        assert not c.passed_filter
        if not c.tokens:
            assert c.novelty is None


def test_infill_trim_modes():
    lms = ngram_pair(BRIDGE, order=3, k=0.1)
    v = lms.vocab
    terminal = {v.lookup_id(".")}
    o1, o2 = enc(v, "x"), enc(v, "z")
    single = abductive_infill(o1, o2, lms, preset("anlg", n_c=10, n_samples=10))
    for c in single.candidates + single.rejected:
        # at most one sentence: no terminal token before the last position
        assert not terminal & set(c.tokens[:-1])
    multi = abductive_infill(o1, o2, lms, preset("anlg", n_c=10, n_samples=10,
                                                 infill_trim="complete"))
    assert any(terminal & set(c.tokens[:-1]) for c in multi.candidates + multi.rejected)


def test_infill_same_observations_runs(templated):
    v = templated.vocab
    o = enc(v, "the red dog runs home .")
    result = abductive_infill(o, o, templated, preset("anlg", **SMALL))
    assert len(result.candidates) + len(result.rejected) > 0


def test_infill_rejects_empty_observation(templated):
    with pytest.raises(ValueError):
        abductive_infill((), (4,), templated)
