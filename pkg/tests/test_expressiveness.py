from fractions import Fraction

import numpy as np
import pytest

from crawl.expressive import (
    FeatureDistribution,
    StateSpaceTooLarge,
    cycle_pair,
    distinguish,
    enumerate_feature_distribution,
    exact_feature_distribution,
    nb_indistinguishability_check,
    sampled_feature_distribution,
    three_path_pair,
    tv_distance,
    walklet_subgraph_oracle,
)
from crawl.graph import make_csl, make_cycle, make_path, make_three_paths

STRATEGIES = ["uniform", "nb"]


def exact_tv(g1, g2, strategy, s, ell):
    return tv_distance(
        exact_feature_distribution(g1, strategy, s, ell),
        exact_feature_distribution(g2, strategy, s, ell),
    )


def test_single_edge_has_one_matrix():
    for strategy in STRATEGIES:
        p = exact_feature_distribution(make_path(2), strategy, 2, 5)
        assert p.support_size == 1
        assert next(iter(p.probs.values())) == 1


@pytest.mark.parametrize(
    "g,strategy,s,ell",
    [
        (make_cycle(6), "uniform", 2, 3),
        (make_cycle(6), "nb", 4, 5),
        (make_three_paths(3, False), "uniform", 3, 5),
        (make_three_paths(2, True), "nb", 1, 6),
        (make_csl(11, 3), "uniform", 4, 3),
        (make_path(4), "nb", 2, 6),
    ],
)
def test_dp_equals_enumeration(g, strategy, s, ell):
    dp = exact_feature_distribution(g, strategy, s, ell)
    full = enumerate_feature_distribution(g, strategy, s, ell)
    assert dp.probs == full.probs
    assert dp.total() == 1 and full.total() == 1
    assert all(isinstance(p, Fraction) for p in dp.probs.values())


def test_c6_enumeration_counts_every_walk():
    full = enumerate_feature_distribution(make_cycle(6), "uniform", 2, 3)
    assert full.extra["walks"] == 6 * 2**3


def test_tv_trivial_cases():
    p = FeatureDistribution({"a": Fraction(1, 2), "b": Fraction(1, 2)}, 2, 3, "uniform")
    q = FeatureDistribution({"c": Fraction(1)}, 2, 3, "uniform")
    assert tv_distance(p, p) == 0
    assert tv_distance(p, q) == 1
    r = FeatureDistribution({"a": Fraction(1)}, 2, 3, "uniform")
    assert tv_distance(p, r) == Fraction(1, 2)


def test_tv_parameter_mismatch():
    p = exact_feature_distribution(make_cycle(5), "nb", 2, 3)
    q = exact_feature_distribution(make_cycle(5), "nb", 2, 4)
    with pytest.raises(ValueError):
        tv_distance(p, q)


@pytest.mark.parametrize("m", [3, 4, 5])
@pytest.mark.parametrize("strategy", STRATEGIES)
def test_cycle_pairs_indistinguishable_while_window_is_a_path(m, strategy):
    # a window of s + 1 consecutive walk nodes is a path as long as s + 1 < m
    g, h = cycle_pair(m)
    for s in range(1, m - 1):
        for ell in (4, 10):
            assert exact_tv(g, h, strategy, s, ell) == 0


@pytest.mark.parametrize("m", [3, 4, 5])
@pytest.mark.parametrize("strategy", STRATEGIES)
def test_cycle_pairs_separate_once_window_closes_cycle(m, strategy):
    g, h = cycle_pair(m)
    assert exact_tv(g, h, strategy, m - 1, 10) > 0
    assert exact_tv(g, h, strategy, m, 10) > 0


@pytest.mark.xfail(strict=True, reason="window of s + 1 = m nodes sees the short cycle close")
@pytest.mark.parametrize("strategy", STRATEGIES)
def test_cycle_pair_claimed_bound_s_below_m(strategy):
    g, h = cycle_pair(4)
    assert exact_tv(g, h, strategy, 3, 6) == 0


def test_c8_s4_positive():
    g, h = cycle_pair(4)
    tv = exact_tv(g, h, "nb", 4, 8)
    assert 0 < tv <= 1


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("ell", [2, 6, 10])
def test_three_path_gadgets_nb_indistinguishable(n, ell):
    report = nb_indistinguishability_check(n, ell)
    assert report["tv"] == 0
    assert report["s"] == 2 * n - 3
    assert report["single_matrix"]


def test_three_path_n2_order():
    g, h = three_path_pair(2)
    assert g.n_nodes == h.n_nodes == 5
    assert nb_indistinguishability_check(2, 4)["order"] == [5, 5]


def test_three_path_uniform_report():
    # uniform walks can backtrack, so the distributions are richer; report what happens
    report = nb_indistinguishability_check(3, 8, strategy="uniform")
    assert report["support_sizes"][0] > 1
    assert report["tv"] >= 0


def test_three_path_nb_rows_match_girth_argument():
    # girth is s + 2: within the window every node is new and no chord exists
    g, _ = three_path_pair(3)
    p = exact_feature_distribution(g, "nb", 3, 10)
    (code,) = p.probs
    rows = code.split("|")
    assert all(r == "0" * 5 for r in rows)


def test_sampled_converges_to_exact():
    g = make_cycle(6)
    for strategy, s, ell in [("uniform", 2, 3), ("uniform", 4, 6), ("nb", 2, 6)]:
        exact = exact_feature_distribution(g, strategy, s, ell)
        sampled = sampled_feature_distribution(g, strategy, s, ell, 10**6, seed=3)
        assert abs(sum(sampled.probs.values()) - 1) < 1e-12
        assert tv_distance(exact, sampled) < 0.02


def test_state_budget_raises():
    with pytest.raises(StateSpaceTooLarge, match="sampled"):
        exact_feature_distribution(make_csl(11, 2), "uniform", 6, 10, max_states=1000)


def test_distinguish_report_fields():
    g, h = cycle_pair(4)
    rep = distinguish(g, h, "nb", 4, 8)
    assert set(rep) >= {"graphs", "strategy", "s", "ell", "tv", "support_sizes", "mode"}
    assert rep["mode"] == "exact" and rep["tv"] > 0
    rep = distinguish(g, h, "nb", 2, 8, mode="sampled", n_samples=2000)
    assert rep["mode"] == "sampled" and rep["tv"] == 0.0
    with pytest.raises(ValueError):
        distinguish(g, h, "nb", 2, 8, mode="magic")


def test_subgraph_oracle_examples():
    g = make_cycle(6)
    w = np.array([0, 1, 2, 3])
    assert walklet_subgraph_oracle(g, w, g, w)
    assert walklet_subgraph_oracle(g, w, g, (w + 2) % 6)
    # inconsistent repetition pattern
    assert not walklet_subgraph_oracle(g, [0, 1, 0], g, [0, 1, 2])
    # same pattern but a chord in one graph only
    tri = make_cycle(3)
    assert not walklet_subgraph_oracle(tri, [0, 1, 2], g, [0, 1, 2])
