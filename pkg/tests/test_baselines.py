from fractions import Fraction

import numpy as np
import pytest

from nasheq.baselines import (
    BUDGET_EXCEEDED,
    FOUND,
    NOT_FOUND,
    compositions,
    fictitious_play,
    k_uniform_search,
    regret_matching_cfr,
    regret_matching_strategy,
)
from nasheq.games import Game, MixedProfile, epsilon_of, random_game


def matching_pennies() -> Game:
    a = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return Game([a, -a])


def dominant_game() -> Game:
    # strategy 0 strictly dominates for both players
    a = np.array([[1.0, 1.0], [0.0, 0.0]])
    b = np.array([[1.0, 0.0], [1.0, 0.0]])
    return Game([a, b])


class TestCompositions:
    def test_lexicographic_order(self):
        got = list(compositions(2, 2))
        assert got == [(0, 2), (1, 1), (2, 0)]

    def test_sum_and_count(self):
        got = list(compositions(4, 3))
        assert all(sum(c) == 4 for c in got)
        assert len(got) == 15  # C(4+2, 2)


class TestKUniform:
    def test_pure_equilibrium_found_at_k1(self):
        res = k_uniform_search(dominant_game(), epsilon_accept=0.0, k_max=3)
        assert res.status == FOUND
        assert res.k == 1
        assert res.epsilon == 0.0
        assert np.allclose(res.profile.distributions[0], [1.0, 0.0])

    def test_matching_pennies_found_at_k2(self):
        res = k_uniform_search(matching_pennies(), epsilon_accept=0.0, k_max=4)
        assert res.status == FOUND
        assert res.k == 2
        for d in res.profile.distributions:
            assert np.allclose(d, [0.5, 0.5])

    def test_seeded_three_player(self):
        g = random_game(3, 2, seed=21)
        res = k_uniform_search(g, epsilon_accept=0.05, k_max=20)
        assert res.status == FOUND
        # re-verify the returned epsilon independently
        rep = epsilon_of(g, res.profile)
        assert rep.epsilon == pytest.approx(res.epsilon, abs=1e-12)
        assert rep.epsilon <= 0.05

    def test_exact_game_with_denominator_3(self):
        # row mixes (1/3, 2/3) to make column indifferent and vice versa:
        # a zero-sum game with unique equilibrium at denominators 3
        one = Fraction(1)
        a = np.array(
            [[2 * one, -one], [-2 * one, one]], dtype=object
        )
        # column indifference: 2p - 2(1-p) = -p + (1-p) -> p = 1/2 ... craft
        # instead via known construction: payoffs [[0,2],[3,1]] for row,
        # [[3,1],[0,2]] for column has mixed equilibrium (1/4..), use search
        ra = np.array([[0 * one, 2 * one], [3 * one, one]], dtype=object)
        ca = np.array([[3 * one, one], [0 * one, 2 * one]], dtype=object)
        g = Game([ra, ca])
        res = k_uniform_search(g, epsilon_accept=0, k_max=8)
        assert res.status == FOUND
        assert epsilon_of(g, res.profile).epsilon == 0
        # all probabilities are exact multiples of 1/k
        for d in res.profile.distributions:
            for p in d:
                assert p.denominator in (1, res.k) or res.k % p.denominator == 0

    def test_not_found_at_small_kmax(self):
        res = k_uniform_search(matching_pennies(), epsilon_accept=0.0, k_max=1)
        assert res.status == NOT_FOUND

    def test_budget_guard(self):
        g = random_game(3, 3, seed=2)
        res = k_uniform_search(g, epsilon_accept=0.0, k_max=30, enumeration_budget=50)
        assert res.status == BUDGET_EXCEEDED
        assert res.profiles_checked == 50


class TestFictitiousPlay:
    def test_dominant_game_converges(self):
        trace = fictitious_play(dominant_game(), iterations=10_000)
        assert trace.final_epsilon <= 1e-3

    def test_matching_pennies_converges(self):
        trace = fictitious_play(matching_pennies(), iterations=10_000)
        assert trace.final_epsilon <= 0.05

    def test_average_recurrence_exact(self):
        # incremental averages equal the from-scratch average of the br hits
        g = random_game(3, 3, seed=5)
        T = 500
        trace = fictitious_play(g, iterations=T, record_best_responses=True)
        fresh = [np.zeros(m) for m in g.strategy_counts]
        for brs in trace.best_responses:
            for i, br in enumerate(brs):
                fresh[i][br] += 1.0
        for i in range(g.num_players):
            assert np.allclose(
                trace.final_profile.distributions[i], fresh[i] / T, atol=1e-12
            )

    def test_epsilon_trace_thinned(self):
        g = random_game(3, 2, seed=6)
        trace = fictitious_play(g, iterations=100, trace_every=25)
        assert [t for t, _ in trace.epsilons] == [25, 50, 75, 100]
        assert trace.epsilons[-1][1] == pytest.approx(trace.final_epsilon, abs=1e-10)

    def test_epsilon_incremental_matches_scratch(self):
        g = random_game(3, 3, seed=7)
        trace = fictitious_play(g, iterations=200)
        scratch = epsilon_of(g, trace.final_profile).epsilon
        assert trace.final_epsilon == pytest.approx(scratch, abs=1e-10)


class TestRegretMatching:
    def test_strategy_always_valid(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            v = rng.uniform(-5, 5, size=int(rng.integers(2, 6)))
            s = regret_matching_strategy(v)
            assert s.min() >= 0.0
            assert s.sum() == pytest.approx(1.0, abs=1e-12)

    def test_dominant_game_converges(self):
        trace = regret_matching_cfr(dominant_game(), iterations=10_000)
        assert trace.final_epsilon <= 1e-3

    def test_all_zero_game_stays_uniform(self):
        g = Game([np.zeros((2, 2, 2))] * 3)
        trace = regret_matching_cfr(g, iterations=50)
        assert trace.final_epsilon == 0.0
        for d in trace.final_profile.distributions:
            assert np.allclose(d, 0.5)

    def test_average_is_valid_distribution(self):
        g = random_game(4, 3, seed=9)
        trace = regret_matching_cfr(g, iterations=300)
        for d in trace.final_profile.distributions:
            assert d.min() >= 0.0
            assert d.sum() == pytest.approx(1.0, abs=1e-9)

    def test_small_random_mean_epsilon_sane(self):
        # tiny pilot of the benchmark reproduction at reduced scale
        eps = []
        for seed in range(20):
            g = random_game(3, 3, seed=1000 + seed)
            eps.append(regret_matching_cfr(g, iterations=2000).final_epsilon)
        assert 0.0 <= float(np.mean(eps)) <= 0.08
