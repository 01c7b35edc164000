import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refdec.ensemble import (ContextEnsemble, DirectionMismatchError, ReflectiveSampler, Side,
                             rd_next_token_dist, rd_sample, rd_sequence_logprob)
from refdec.lm import CallableLM
from refdec.sampling import NucleusParams, make_rng
from refdec.vocab import Vocabulary

from _toys import poe_logprobs, random_toy_lm


def table_lm(vocab, direction, table):
    """LM whose distribution is looked up by the first token of the conditioning."""
    def fn(text):
        return np.log(np.asarray(table[text[0] if text else None], dtype=float))
    return CallableLM(vocab, direction, fn)


def test_two_experts_by_hand():
    # |V| = 3 words after the 3 markers; markers get negligible mass
    v = Vocabulary("xyz")
    eps = 1e-300
    x, y = v.lookup_id("x"), v.lookup_id("y")
    dists = {x: [eps, eps, eps, 0.5, 0.3, 0.2], y: [eps, eps, eps, 0.2, 0.3, 0.5]}
    lm = table_lm(v, "backward", dists)
    sampler = ReflectiveSampler(ContextEnsemble(((x,), (y,)), (0.5, 0.5), Side.RIGHT), lm)
    p = np.exp(rd_next_token_dist(sampler, ()))
    g = np.sqrt(np.array([0.1, 0.09, 0.1]))
    np.testing.assert_allclose(p[3:], g / g.sum(), atol=1e-12)


def test_single_context_reduces_to_lm():
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "backward", seed=4)
    sampler = ReflectiveSampler(ContextEnsemble.uniform([(4, 5)], Side.RIGHT), lm)
    np.testing.assert_allclose(np.exp(rd_next_token_dist(sampler, (3,))),
                               np.exp(lm.next_token_logprobs((3, 4, 5))), atol=1e-12)


def test_fixed_inner_context_sits_between():
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "forward", seed=4, window=None)
    sampler = ReflectiveSampler(ContextEnsemble.uniform([(3,)], Side.LEFT), lm)
    np.testing.assert_allclose(rd_next_token_dist(sampler, (5,), (4,)),
                               lm.next_token_logprobs((3, 4, 5)), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 4), direction=st.sampled_from(["forward", "backward"]))
def test_matches_independent_poe_and_permutation_invariant(seed, n, direction):
    v = Vocabulary("abc")
    rng = np.random.default_rng(seed)
    lm = random_toy_lm(v, direction, seed=seed, window=None)
    contexts = [tuple(int(t) for t in rng.integers(3, 6, size=rng.integers(1, 3))) for _ in range(n)]
    w = rng.dirichlet(np.ones(n))
    side = Side.generated_by(lm.lm_direction.opposite)
    text = tuple(int(t) for t in rng.integers(3, 6, size=2))
    got = rd_next_token_dist(ReflectiveSampler(ContextEnsemble(tuple(contexts), tuple(w), side), lm),
                             text)
    np.testing.assert_allclose(got, poe_logprobs(lm, contexts, w, text), atol=1e-10)
    perm = rng.permutation(n)
    shuffled = ReflectiveSampler(ContextEnsemble(tuple(contexts[i] for i in perm),
                                                 tuple(w[perm]), side), lm)
    np.testing.assert_allclose(rd_next_token_dist(shuffled, text), got, atol=1e-12)
    assert abs(np.exp(got).sum() - 1) < 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_dominant_weight_recovers_expert(seed):
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "backward", seed=seed, window=None)
    contexts = ((3,), (4, 5))
    sampler = ReflectiveSampler(ContextEnsemble(contexts, (1.0, 0.0), Side.RIGHT), lm)
    np.testing.assert_allclose(rd_next_token_dist(sampler, (5,)),
                               lm.next_token_logprobs((5, 3)), atol=1e-10)


def test_sequence_logprob_is_chain_rule():
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "backward", seed=1, window=None)
    contexts = [(3,), (4,)]
    w = (0.3, 0.7)
    sampler = ReflectiveSampler(ContextEnsemble(tuple(contexts), w, Side.RIGHT), lm)
    s = (5, 3, 4)
    # backward: score right to left
    expected = (poe_logprobs(lm, contexts, w, ())[4] + poe_logprobs(lm, contexts, w, (4,))[3]
                + poe_logprobs(lm, contexts, w, (3, 4))[5])
    assert rd_sequence_logprob(sampler, s) == pytest.approx(expected, abs=1e-10)


def test_direction_mismatch_rejected():
    v = Vocabulary("ab")
    lm = random_toy_lm(v, "forward", seed=0)
    with pytest.raises(DirectionMismatchError):
        ReflectiveSampler(ContextEnsemble.uniform([(3,)], Side.RIGHT), lm)


@pytest.mark.parametrize("weights", [(0.5, 0.6), (-0.1, 1.1), (1.0,)])
def test_ensemble_validates_weights(weights):
    with pytest.raises(ValueError):
        ContextEnsemble(((3,), (4,)), weights, Side.RIGHT)


def test_empty_ensemble_rejected():
    with pytest.raises(ValueError):
        ContextEnsemble((), (), Side.RIGHT)


def test_restrict_hook_zeroes_disallowed_tokens():
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "forward", seed=3)
    sampler = ReflectiveSampler(ContextEnsemble.uniform([(3,)], Side.LEFT), lm,
                                restrict=lambda text: [4, 5])
    p = np.exp(rd_next_token_dist(sampler, ()))
    assert p[[4, 5]].sum() == pytest.approx(1.0)


def test_rd_sample_reproducible():
    v = Vocabulary("abc")
    lm = random_toy_lm(v, "backward", seed=8, scale=0.5)
    sampler = ReflectiveSampler(ContextEnsemble.uniform([(3,), (4,)], Side.RIGHT), lm)
    params = NucleusParams(0.9, 4)
    a = rd_sample(sampler, (), params, 5, make_rng(1))
    b = rd_sample(sampler, (), params, 5, make_rng(1))
    assert a == b and len(a) == 5
    assert all(len(x) <= 4 for x in a)


def test_to_dict_decodes_contexts():
    v = Vocabulary("ab")
    e = ContextEnsemble(((3, 4),), (1.0,), Side.LEFT)
    d = e.to_dict(v)
    assert d["side"] == "left" and d["weights"] == [1.0]
    assert math.isclose(sum(d["weights"]), 1.0)
