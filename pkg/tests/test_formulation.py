import itertools
from fractions import Fraction

import numpy as np
import pytest

from nasheq.formulation import (
    FormulationError,
    build,
    check_candidate,
    count_product_terms,
    dump_program,
    embed_profile,
    extract_profile,
)
from nasheq.games import Game, MixedProfile, epsilon_of, normalize_payoffs, random_game


def normalized_random(n, m, seed):
    return normalize_payoffs(random_game(n, m, seed)).game


def exact_matching_pennies() -> Game:
    # normalized to [0,1]: payoffs {0,1}
    one, zero = Fraction(1), Fraction(0)
    a = np.array([[one, zero], [zero, one]], dtype=object)
    b = np.array([[zero, one], [one, zero]], dtype=object)
    return Game([a, b])


class TestCountProductTerms:
    def test_two_player_is_2m(self):
        for m in range(1, 6):
            assert count_product_terms(2, m) == 2 * m

    def test_three_two(self):
        assert count_product_terms(3, 2) == 18  # 2*3 + 4*3

    def test_five_three(self):
        assert count_product_terms(5, 3) == 780  # 15 + 90 + 270 + 405

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            count_product_terms(40, 10)

    def test_rejects_bad_args(self):
        with pytest.raises(FormulationError):
            count_product_terms(1, 2)
        with pytest.raises(FormulationError):
            count_product_terms(3, 0)


class TestBuildStructure:
    def test_two_by_two_roster(self):
        prog = build(normalized_random(2, 2, seed=0))
        # 4 prob + 2 best + 4 pure-utility + 4 regret + 4 binary
        assert prog.num_variables == 18
        assert len(prog.bilinear) == 0
        assert len(prog.product) == 0

    def test_three_player_probability_family(self):
        prog = build(normalized_random(3, 2, seed=1))
        fam = len(prog.prob_mass) + len(prog.product)
        assert fam == count_product_terms(3, 2) == 18

    def test_four_player_bilinear_count(self):
        prog = build(normalized_random(4, 2, seed=2))
        # pairs 4*C(4,2)=24 plus triples 8*C(4,3)=32
        assert len(prog.bilinear) == 56
        assert len(prog.bilinear) == len(prog.product)

    def test_counts_match_formula_grid(self):
        for n in range(2, 6):
            for m in range(1, 5):
                prog = build(normalized_random(n, m, seed=10 * n + m))
                fam = len(prog.prob_mass) + len(prog.product)
                assert fam == count_product_terms(n, m)

    def test_rejects_unnormalized(self):
        g = Game([np.array([[2.0, 0.0], [0.0, 0.0]])] * 2)
        with pytest.raises(FormulationError):
            build(g)
        g2 = Game([np.array([[-0.5, 0.0], [0.0, 1.0]])] * 2)
        with pytest.raises(FormulationError):
            build(g2)

    def test_product_usage(self):
        # Chains peel the lowest-indexed player, so a product over players K
        # with |K| < n-1 feeds a longer chain only when some player sits below
        # min(K). Products with min(K) == 0 and |K| < n-1 exist purely to
        # satisfy the published roster; everything else must be consumed by a
        # utility row or a longer chain.
        for n in (3, 4, 5):
            prog = build(normalized_random(n, 2, seed=n))
            used = set()
            for row in prog.linear:
                used.update(j for j, _ in row.terms)
            for bc in prog.bilinear:
                used.update((bc.left, bc.right))
            for key, j in prog.product.items():
                players = [p for p, _ in key]
                orphan_ok = len(key) < n - 1 and min(players) == 0
                if not orphan_ok:
                    assert j in used, f"product {key} appears nowhere (n={n})"

    def test_bilinear_ids_distinct_and_boxed(self):
        prog = build(normalized_random(4, 2, seed=4))
        for bc in prog.bilinear:
            assert len({bc.product, bc.left, bc.right}) == 3
            for j in (bc.left, bc.right):
                v = prog.variables[j]
                assert v.lower == 0 and v.upper == 1

    def test_product_keys_sorted_distinct_players(self):
        prog = build(normalized_random(5, 2, seed=5))
        for key in prog.product:
            players = [p for p, _ in key]
            assert players == sorted(players)
            assert len(set(players)) == len(players)
            assert 2 <= len(key) <= 4


def canonical_rows(prog, player_map):
    rows = []
    for row in prog.linear:
        terms = frozenset(
            (_rename_label(prog.variables[j], player_map), c) for j, c in row.terms
        )
        rows.append((terms, row.sense, row.rhs))
    rows.sort(key=repr)
    return rows


def _rename_label(v, pmap):
    if v.kind == "product":
        return ("product", tuple(sorted((pmap[p], s) for p, s in v.key)))
    if v.kind == "best_utility":
        return (v.kind, pmap[v.player])
    return (v.kind, pmap[v.player], v.pure)


class TestPlayerRelabeling:
    def test_three_player_full_isomorphism(self):
        g = normalized_random(3, 2, seed=6)
        perm = (2, 0, 1)  # original player i becomes perm[i]
        inv = np.argsort(perm)
        permuted = Game([np.transpose(g.payoffs[w], inv) for w in inv])
        p1 = build(g)
        p2 = build(permuted)
        assert canonical_rows(p1, dict(enumerate(perm))) == canonical_rows(
            p2, {i: i for i in range(3)}
        )
        # bilinear rows: pairs are unordered products of two masses
        def bil(prog, pmap):
            out = []
            for bc in prog.bilinear:
                out.append(
                    (
                        _rename_label(prog.variables[bc.product], pmap),
                        frozenset(
                            (
                                _rename_label(prog.variables[bc.left], pmap),
                                _rename_label(prog.variables[bc.right], pmap),
                            )
                        ),
                    )
                )
            out.sort(key=repr)
            return out

        assert bil(p1, dict(enumerate(perm))) == bil(p2, {i: i for i in range(3)})

    def test_four_player_linear_isomorphism(self):
        # at n >= 4 the canonical peeling order ties chains to player indices,
        # so only variables and linear rows are order-free
        g = normalized_random(4, 2, seed=7)
        perm = (3, 1, 0, 2)
        inv = np.argsort(perm)
        permuted = Game([np.transpose(g.payoffs[w], inv) for w in inv])
        p1 = build(g)
        p2 = build(permuted)
        assert canonical_rows(p1, dict(enumerate(perm))) == canonical_rows(
            p2, {i: i for i in range(4)}
        )
        assert len(p1.bilinear) == len(p2.bilinear)


class TestCheckCandidate:
    def test_pure_equilibrium_embeds_to_zero(self):
        # dominant-strategy game: each player's strategy 0 dominates
        a = np.zeros((2, 2, 2))
        tensors = []
        for w in range(3):
            t = np.zeros((2, 2, 2))
            idx = [slice(None)] * 3
            idx[w] = 0
            t[tuple(idx)] = 1.0
            tensors.append(t)
        g = Game(tensors)
        prog = build(g)
        prof = MixedProfile.pure(g, [0, 0, 0])
        x = embed_profile(prog, g, prof)
        rep = check_candidate(prog, x)
        assert rep.max_violation() == 0

    def test_perturbed_mass_shows_simplex_residual(self):
        # start from a feasible (equilibrium) assignment, then bump one mass
        tensors = []
        for w in range(3):
            t = np.zeros((2, 2, 2))
            idx = [slice(None)] * 3
            idx[w] = 0
            t[tuple(idx)] = 1.0
            tensors.append(t)
        g = Game(tensors)
        prog = build(g)
        x = embed_profile(prog, g, MixedProfile.pure(g, [0, 0, 0]))
        assert check_candidate(prog, x).max_violation() == 0
        x[prog.prob_mass[0, 1]] += 0.1
        rep = check_candidate(prog, x)
        assert rep.max_linear == pytest.approx(0.1, abs=1e-12)

    def test_length_mismatch(self):
        prog = build(normalized_random(2, 2, seed=9))
        with pytest.raises(FormulationError):
            check_candidate(prog, [0.0] * (prog.num_variables - 1))

    def test_integrality_gap_reported(self):
        prog = build(normalized_random(2, 2, seed=10))
        g = normalized_random(2, 2, seed=10)
        x = embed_profile(prog, g, MixedProfile.uniform(g))
        x[prog.support_binary[0, 0]] = 0.4
        rep = check_candidate(prog, x)
        assert rep.max_integrality == pytest.approx(0.4)


class TestEmbedding:
    def test_exact_equilibrium_embeds_exactly(self):
        g = exact_matching_pennies()
        prog = build(g)
        half = Fraction(1, 2)
        prof = MixedProfile([np.array([half, half], dtype=object)] * 2)
        assert epsilon_of(g, prof).epsilon == 0
        x = embed_profile(prog, g, prof)
        rep = check_candidate(prog, x)
        assert rep.max_linear == 0
        assert rep.max_bilinear == 0
        assert rep.max_bound == 0
        assert rep.max_integrality == 0

    def test_exact_three_player_embedding(self):
        # all-ones payoffs for player 0, identity-style for others; uniform is
        # an equilibrium of any game where every player is indifferent
        one = Fraction(1)
        t = np.empty((2, 2, 2), dtype=object)
        for idx in itertools.product(range(2), repeat=3):
            t[idx] = one
        g = Game([t, t, t])
        prog = build(g)
        half = Fraction(1, 2)
        prof = MixedProfile([np.array([half, half], dtype=object)] * 3)
        x = embed_profile(prog, g, prof)
        rep = check_candidate(prog, x)
        assert rep.max_violation() == 0

    def test_non_equilibrium_embedding_violates(self):
        g = exact_matching_pennies()
        prog = build(g)
        prof = MixedProfile(
            [
                np.array([Fraction(1), Fraction(0)], dtype=object),
                np.array([Fraction(1, 2), Fraction(1, 2)], dtype=object),
            ]
        )
        assert epsilon_of(g, prof).epsilon > 0
        x = embed_profile(prog, g, prof)
        rep = check_candidate(prog, x)
        assert rep.max_violation() > 0

    def test_extract_inverts_embed(self):
        g = normalized_random(3, 3, seed=11)
        prog = build(g)
        rng = np.random.default_rng(0)
        dists = []
        for m in g.strategy_counts:
            v = rng.random(m)
            dists.append(v / v.sum())
        prof = MixedProfile(dists)
        x = embed_profile(prog, g, prof)
        back = extract_profile(prog, x)
        for d1, d2 in zip(prof.distributions, back.distributions):
            assert np.allclose(d1, d2, atol=1e-15)


class TestDump:
    def test_dump_shape_and_determinism(self):
        g = normalized_random(3, 2, seed=12)
        prog = build(g)
        text = dump_program(prog)
        lines = text.strip().split("\n")
        assert lines[0] == f"variables {prog.num_variables}"
        assert sum(1 for ln in lines if ln.startswith("var ")) == prog.num_variables
        assert sum(1 for ln in lines if ln.startswith("row ")) == len(prog.linear)
        assert sum(1 for ln in lines if ln.startswith("prod ")) == len(prog.bilinear)
        assert text == dump_program(build(g))

    def test_dump_golden_tiny(self):
        # 2 players, 1 strategy each, both payoffs 1 (normalized bounds ok)
        g = Game([np.array([[1.0]]), np.array([[0.0]])])
        prog = build(g)
        expected = (
            "variables 10\n"
            "var 0 prob_mass(p0,s0) in [0,1] continuous\n"
            "var 1 prob_mass(p1,s0) in [0,1] continuous\n"
            "var 2 best_utility(p0) in [0,1] continuous\n"
            "var 3 best_utility(p1) in [0,1] continuous\n"
            "var 4 pure_utility(p0,s0) in [0,1] continuous\n"
            "var 5 pure_utility(p1,s0) in [0,1] continuous\n"
            "var 6 regret(p0,s0) in [0,1] continuous\n"
            "var 7 regret(p1,s0) in [0,1] continuous\n"
            "var 8 support_binary(p0,s0) in [0,1] binary\n"
            "var 9 support_binary(p1,s0) in [0,1] binary\n"
            "linear 10\n"
            "row 0: 1*x0 == 1\n"
            "row 1: 1*x1 == 1\n"
            "row 2: 1*x1 + -1*x4 == 0\n"
            "row 3: 0*x0 + -1*x5 == 0\n"
            "row 4: 1*x2 + -1*x4 + -1*x6 == 0\n"
            "row 5: 1*x3 + -1*x5 + -1*x7 == 0\n"
            "row 6: 1*x0 + 1*x8 <= 1\n"
            "row 7: 1*x1 + 1*x9 <= 1\n"
            "row 8: 1*x6 + -0*x8 <= 0\n"
            "row 9: 1*x7 + -0*x9 <= 0\n"
            "bilinear 0\n"
        )
        assert dump_program(prog) == expected
