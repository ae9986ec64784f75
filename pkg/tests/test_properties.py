"""Property-based checks over randomly generated staggered designs."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from stagedid import (
    aggregated_att,
    derive_relative_time,
    did_regression,
    did_weights,
    did_weights_bruteforce,
    implied_estimand,
    stacked_weights,
    two_stage_did,
)
from stagedid.gmm import build_moment_system, sandwich_vcov, solve_gmm

from conftest import random_design

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(min_value=0, max_value=2**32 - 1)


@given(a=st.integers(-50, 50), t=st.integers(-50, 50))
def test_relative_time_pure(a, t):
    r = derive_relative_time(np.array([float(a)]), np.array([t]))[0]
    assert r == t - a + 1
    assert (r == 1) == (t == a)


@SETTINGS
@given(seed=seeds, weighted=st.booleans())
def test_weights_sum_to_one_and_match_oracle(seed, weighted):
    p, _ = random_design(np.random.default_rng(seed), weighted=weighted)
    w = did_weights(p)
    assert abs(w.weight.sum() - 1) < 1e-10
    assert np.abs(w.weight - did_weights_bruteforce(p).weight).max() < 1e-8


@SETTINGS
@given(seed=seeds, balanced=st.booleans())
def test_decomposition_identity(seed, balanced):
    p, _ = random_design(np.random.default_rng(seed), balanced=balanced)
    grid = aggregated_att(p)[1]
    assert abs(did_regression(p).point - implied_estimand(did_weights(p), grid)) < 1e-8


@SETTINGS
@given(seed=seeds, balanced=st.booleans())
def test_gmm_equals_sequential(seed, balanced):
    p, _ = random_design(np.random.default_rng(seed), balanced=balanced)
    s = build_moment_system(p)
    r = sandwich_vcov(s, solve_gmm(s))
    assert abs(r.beta[0] - two_stage_did(p, se="naive").point) < 1e-8
    assert r.beta_se[0] >= 0


@SETTINGS
@given(seed=seeds)
def test_noiseless_two_stage_recovers_share_weighted_mean(seed):
    rng = np.random.default_rng(seed)
    p, beta = random_design(rng, noise=0.0)
    treated = [(float(a), int(t)) for a, t in zip(p.adoption[p.treated], p.time[p.treated])]
    truth = np.mean([beta[(int(a), t)] for a, t in treated])
    assert abs(two_stage_did(p).point - truth) < 1e-9
    assert abs(aggregated_att(p)[0].point - truth) < 1e-9


@given(
    sizes=st.lists(st.integers(1, 50), min_size=1, max_size=6),
    control=st.integers(1, 80),
    pre=st.integers(0, 5),
    post=st.integers(1, 8),
)
def test_stacked_weights_simplex(sizes, control, pre, post):
    sw = stacked_weights(sizes, control, pre, post)
    assert abs(sw.weight.sum() - 1) < 1e-10
    assert np.all(sw.weight >= 0)
    assert sw.weight.shape == (len(sizes), post)
