from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rejective import (StratumPlan, draw_poisson, draw_srswor, draw_stratified, inclusion_product, make_design,
                       pps_probabilities)
from rejective.designs import DrawnSample, Pairwise, prepare_poisson, prepare_srswor, prepare_stratified, srs_joint
from rejective.errors import ConfigurationError, DesignError


def brute_delta_form(pw: Pairwise, idx, a, b):
    n = len(idx)
    out = np.zeros((a.shape[1], b.shape[1]))
    for i in range(n):
        for j in range(n):
            d = pw(idx[i], idx[j]) - pw.pi[idx[i]] * pw.pi[idx[j]]
            out += d * np.outer(a[i], b[j])
    return out


def test_srs_census_and_pairwise():
    s = draw_srswor(np.random.default_rng(0), 5, 5)
    assert np.array_equal(s.indices, np.arange(5)) and np.all(s.pi == 1.0)
    s = draw_srswor(np.random.default_rng(0), 5, 2)
    assert s.pairwise(0, 3) == pytest.approx(0.1)
    # co-inclusion frequency over all 10 subsets
    hits = sum(1 for c in combinations(range(5), 2) if {0, 3} <= set(c))
    assert hits / 10 == pytest.approx(0.1)
    assert s.pairwise(2, 2) == s.first_order[2] == pytest.approx(0.4)


@pytest.mark.parametrize("n", [0, 6])
def test_srs_size_out_of_range(n):
    with pytest.raises(DesignError):
        draw_srswor(np.random.default_rng(0), 5, n)


def test_srs_inclusion_frequency():
    rng = np.random.default_rng(1)
    prep = prepare_srswor(10, 3)
    counts = np.zeros(10)
    for _ in range(100_000):
        counts[prep.draw(rng).indices] += 1
    assert np.all(np.abs(counts / 100_000 - 0.3) < 0.01)


def test_srs_subsets_equally_likely():
    rng = np.random.default_rng(2)
    prep = prepare_srswor(5, 2)
    freq = {}
    for _ in range(50_000):
        key = tuple(prep.draw(rng).indices)
        freq[key] = freq.get(key, 0) + 1
    assert len(freq) == 10
    assert max(abs(v / 50_000 - 0.1) for v in freq.values()) < 0.01


def test_poisson_extremes_and_mean_size():
    rng = np.random.default_rng(3)
    assert draw_poisson(rng, np.ones(7)).n == 7
    assert draw_poisson(rng, np.zeros(7)).n == 0
    prep = prepare_poisson(np.full(20, 0.5))
    sizes = [prep.draw(rng).n for _ in range(100_000)]
    assert abs(np.mean(sizes) - 10) < 0.1


def test_poisson_negative_and_clamp():
    with pytest.raises(DesignError):
        draw_poisson(np.random.default_rng(0), [0.5, -0.1])
    s = draw_poisson(np.random.default_rng(0), [1.7, 0.2])
    assert s.clamped == 1 and s.first_order[0] == 1.0


def test_poisson_pairwise_factorizes():
    pi = np.array([0.2, 0.5, 0.9, 0.4])
    pw = prepare_poisson(pi).pairwise
    d = pw.delta_matrix(np.arange(4))
    assert np.all(d[~np.eye(4, dtype=bool)] == 0.0)


def test_stratified_probabilities_and_enumeration():
    plan = StratumPlan(np.array([0] * 4 + [1] * 6), np.array([2, 3]))
    prep = prepare_stratified(plan)
    assert np.allclose(prep.first_order, 0.5)
    assert prep.pairwise(0, 5) == pytest.approx(0.25)
    # cross-stratum joint probability by enumerating the 6 * 20 joint subsets
    joint = sum(1 for a in combinations(range(4), 2) for b in combinations(range(4, 10), 3) if 0 in a and 5 in b)
    assert joint / (6 * 20) == pytest.approx(0.25)
    assert prep.pairwise(0, 1) == pytest.approx(srs_joint(4, 2))


def test_stratified_census_and_errors():
    s = draw_stratified(np.random.default_rng(0), StratumPlan(np.array([0, 0, 0, 1, 1, 1]), np.array([3, 3])))
    assert s.n == 6
    with pytest.raises(DesignError):
        prepare_stratified(StratumPlan(np.array([0, 0]), np.array([1, 1])))
    with pytest.raises(DesignError):
        prepare_stratified(StratumPlan(np.array([0, 0, 1]), np.array([3, 1])))


def test_single_stratum_matches_srs_law():
    rng = np.random.default_rng(4)
    prep = prepare_stratified(StratumPlan(np.zeros(6, dtype=int), np.array([2])))
    srs = prepare_srswor(6, 2)
    assert np.allclose(prep.first_order, srs.first_order)
    assert np.allclose(prep.pairwise.matrix(np.arange(6)), srs.pairwise.matrix(np.arange(6)))
    counts = np.zeros(6)
    for _ in range(30_000):
        counts[prep.draw(rng).indices] += 1
    assert np.all(np.abs(counts / 30_000 - 1 / 3) < 0.015)


def test_from_labels_accepts_config_keys():
    plan = StratumPlan.from_labels(np.array([1.0, 2.0, 1.0, 2.0]), {"1": 1, "2": 2})
    assert list(plan.take) == [1, 2] and list(plan.sizes) == [2, 2]
    with pytest.raises(DesignError):
        StratumPlan.from_labels(np.array([1.0, 3.0]), {"1": 1})


def test_pps_probabilities():
    pi = pps_probabilities([1.0, 3.0, 4.0], 2.0)
    assert np.allclose(pi, [0.25, 0.75, 1.0]) and pi.sum() == pytest.approx(2.0)
    with pytest.raises(DesignError):
        pps_probabilities([1.0, -1.0], 1.0)


def test_inclusion_product():
    pw = Pairwise(np.array([0.5] * 4))
    a = DrawnSample(np.array([1, 3]), np.full(4, 0.5), pw, "poisson")
    b = DrawnSample(np.array([1]), np.array([0.2, 0.4]), Pairwise(np.array([0.2, 0.4])), "poisson")
    assert inclusion_product([a, b], 3) == pytest.approx(0.2)
    census = DrawnSample(np.arange(4), np.ones(4), Pairwise(np.ones(4)), "srswor")
    assert inclusion_product([census, a], 3) == pytest.approx(0.5)
    c = DrawnSample(np.array([0]), np.array([0.5]), Pairwise(np.array([0.5])), "poisson")
    assert inclusion_product([a, b, c], 3) == pytest.approx(0.1)
    with pytest.raises(KeyError):
        inclusion_product([a], 0)


def test_make_design():
    assert make_design({"design": "srswor", "n": 5}).n == 5
    assert make_design({"design": "poisson", "expected_n": 3, "size_col": "z"}).size_col == "z"
    assert make_design({"design": "stratified", "take": {"1": 2}, "stratum_col": "x"}).take == {1: 2}
    with pytest.raises(ConfigurationError):
        make_design({"design": "systematic"})


@given(m=st.integers(2, 40), data=st.data())
def test_srs_identities(m, data):
    n = data.draw(st.integers(1, m))
    prep = prepare_srswor(m, n)
    mat = prep.pairwise.matrix(np.arange(m))
    assert np.allclose(mat, mat.T)
    assert np.allclose(mat.sum(axis=1), n * prep.first_order)
    assert prep.first_order.sum() == pytest.approx(n)


@given(sizes=st.lists(st.integers(1, 6), min_size=1, max_size=4), data=st.data())
def test_stratified_fixed_size(sizes, data):
    take = [data.draw(st.integers(0, s)) for s in sizes]
    plan = StratumPlan(np.repeat(np.arange(len(sizes)), sizes), np.array(take))
    prep = prepare_stratified(plan)
    assert prep.first_order.sum() == pytest.approx(sum(take))
    assert prep.draw(np.random.default_rng(0)).n == sum(take)


@given(kind=st.sampled_from(["srs", "poisson", "strat"]), seed=st.integers(0, 2**31))
def test_delta_form_matches_brute_force(kind, seed):
    rng = np.random.default_rng(seed)
    m = 9
    if kind == "srs":
        pw = prepare_srswor(m, 4).pairwise
    elif kind == "poisson":
        pw = prepare_poisson(rng.uniform(0.1, 1.0, m)).pairwise
    else:
        pw = prepare_stratified(StratumPlan(np.array([0, 0, 0, 1, 1, 1, 1, 2, 2]), np.array([2, 3, 1]))).pairwise
    idx = np.sort(rng.choice(m, 6, replace=False))
    a = rng.normal(size=(6, 2))
    b = rng.normal(size=(6, 3))
    assert np.allclose(pw.delta_form(idx, a, b), brute_delta_form(pw, idx, a, b), atol=1e-12)
