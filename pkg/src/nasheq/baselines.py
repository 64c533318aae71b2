"""Reference algorithms: exhaustive grid search and two self-play learners.

The grid search enumerates every joint profile whose probabilities are integer
multiples of 1/k for k = 1, 2, ..., returning the first profile under the
acceptance threshold; on exact-arithmetic games the certification is exact,
which is what makes it usable as a ground-truth oracle for tiny games. The two
learners (fictitious play and regret matching, the strategic-form reduction of
counterfactual regret minimization) report the epsilon of their running
average profile; neither is guaranteed to converge beyond two-player zero-sum
games, which is exactly the gap the complete solver fills.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .games import Game, MixedProfile, epsilon_of

FOUND = "found"
NOT_FOUND = "not-found"
BUDGET_EXCEEDED = "budget-exceeded"


@dataclass(frozen=True)
class KUniformResult:
    """Outcome of the grid search.

    status 'found' carries the first qualifying profile together with its k
    and certified epsilon; 'not-found' means the k-grid was exhausted (the
    search is incomplete at any finite k_max); 'budget-exceeded' means the
    profile-enumeration cap fired first.
    """

    status: str
    k: int | None
    profile: MixedProfile | None
    epsilon: float | None
    profiles_checked: int


def compositions(total: int, parts: int):
    """Nonnegative integer vectors of given length summing to `total`, in
    ascending lexicographic order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def k_uniform_search(
    game: Game,
    epsilon_accept,
    k_max: int,
    enumeration_budget: int = 5_000_000,
) -> KUniformResult:
    """Search profiles with probabilities in {0, 1/k, ..., 1} for rising k.

    Enumeration is lexicographic over per-player composition vectors with
    player 0 outermost; the first profile whose certified epsilon is at or
    under `epsilon_accept` wins. Exact games (Fraction payoffs) are searched
    in exact arithmetic, so epsilon_accept=0 means a true equilibrium on the
    grid.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    exact = game.exact
    checked = 0
    for k in range(1, k_max + 1):
        per_player = [list(compositions(k, m)) for m in game.strategy_counts]
        for combo in itertools.product(*per_player):
            checked += 1
            if checked > enumeration_budget:
                return KUniformResult(BUDGET_EXCEEDED, None, None, None, checked - 1)
            if exact:
                dists = [
                    np.array([Fraction(c, k) for c in counts], dtype=object)
                    for counts in combo
                ]
            else:
                dists = [np.asarray(counts, dtype=float) / k for counts in combo]
            profile = MixedProfile(dists)
            report = epsilon_of(game, profile)
            if report.epsilon <= epsilon_accept:
                return KUniformResult(FOUND, k, profile, report.epsilon, checked)
    return KUniformResult(NOT_FOUND, None, None, None, checked)


@dataclass(frozen=True)
class LearningTrace:
    """Record of one self-play run.

    epsilons holds (iteration, epsilon-of-average) pairs on the requested
    thinning schedule; final_profile/final_epsilon always describe the
    average profile after the last iteration.
    """

    iterations: int
    epsilons: tuple[tuple[int, float], ...]
    final_profile: MixedProfile
    final_epsilon: float
    best_responses: tuple[tuple[int, ...], ...] | None = None


def _flat_views(game: Game) -> tuple[list[np.ndarray], list[list[int]]]:
    """Per player: the payoff tensor as an (m_i, prod others) matrix whose
    columns follow the other players in index order, plus that order."""
    mats = []
    others_of = []
    for i in range(game.num_players):
        others = [q for q in range(game.num_players) if q != i]
        mats.append(
            np.ascontiguousarray(
                np.moveaxis(game.payoffs[i], i, 0).reshape(game.strategy_counts[i], -1)
            )
        )
        others_of.append(others)
    return mats, others_of


def _joint_weights(dists: list[np.ndarray], others: list[int]) -> np.ndarray:
    w = dists[others[0]]
    for q in others[1:]:
        w = np.outer(w, dists[q]).ravel()
    return w


def fictitious_play(
    game: Game,
    iterations: int,
    trace_every: int = 0,
    record_best_responses: bool = False,
) -> LearningTrace:
    """Simultaneous-update fictitious play.

    Every player simultaneously best-responds (lowest index on ties) to the
    other players' current average profile, starting from uniform averages;
    the averages then move by (br - avg)/t. The reported profile is the
    average, whose epsilon the trace records.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = game.num_players
    mats, others_of = _flat_views(game)
    avg = [np.full(m, 1.0 / m) for m in game.strategy_counts]
    eps_trace = []
    br_log = [] if record_best_responses else None
    for t in range(1, iterations + 1):
        brs = [
            int(np.argmax(mats[i] @ _joint_weights(avg, others_of[i]))) for i in range(n)
        ]
        shrink = 1.0 - 1.0 / t
        for i, br in enumerate(brs):
            avg[i] *= shrink
            avg[i][br] += 1.0 / t
        if br_log is not None:
            br_log.append(tuple(brs))
        if trace_every and t % trace_every == 0:
            eps_trace.append((t, epsilon_of(game, MixedProfile(avg)).epsilon))
    profile = MixedProfile(avg)
    return LearningTrace(
        iterations=iterations,
        epsilons=tuple(eps_trace),
        final_profile=profile,
        final_epsilon=epsilon_of(game, profile).epsilon,
        best_responses=tuple(br_log) if br_log is not None else None,
    )


def regret_matching_strategy(cumulative: np.ndarray) -> np.ndarray:
    """Current strategy: proportional to positive cumulative regrets, uniform
    when none are positive. Always a valid distribution."""
    pos = np.maximum(cumulative, 0.0)
    total = pos.sum()
    if total <= 0.0:
        return np.full(len(cumulative), 1.0 / len(cumulative))
    return pos / total


def regret_matching_cfr(
    game: Game,
    iterations: int,
    trace_every: int = 0,
) -> LearningTrace:
    """Per-player regret matching on instantaneous regrets.

    With a single simultaneous move, counterfactual values coincide with
    ordinary expected values, so this is the strategic-form specialization of
    counterfactual regret minimization. Regrets accumulate against opponents'
    current strategies; the reported profile is the plain iterate average.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n = game.num_players
    mats, others_of = _flat_views(game)
    cum = [np.zeros(m) for m in game.strategy_counts]
    avg_sum = [np.zeros(m) for m in game.strategy_counts]
    eps_trace = []
    for t in range(1, iterations + 1):
        current = [regret_matching_strategy(cum[i]) for i in range(n)]
        for i in range(n):
            avg_sum[i] += current[i]
        for i in range(n):
            vals = mats[i] @ _joint_weights(current, others_of[i])
            cum[i] += vals - float(current[i] @ vals)
        if trace_every and t % trace_every == 0:
            avg = [s / t for s in avg_sum]
            eps_trace.append((t, epsilon_of(game, MixedProfile(avg)).epsilon))
    profile = MixedProfile([s / iterations for s in avg_sum])
    return LearningTrace(
        iterations=iterations,
        epsilons=tuple(eps_trace),
        final_profile=profile,
        final_epsilon=epsilon_of(game, profile).epsilon,
    )
