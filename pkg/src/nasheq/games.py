"""Strategic-form games: representation, utilities, regret, normalization.

A game holds one payoff tensor per player, indexed by one pure strategy per
player. All values are immutable after construction; the operations here are
pure functions, safe to share across workers.

Payoff tensors are float64 by default. Tensors of dtype=object (e.g. holding
`fractions.Fraction`) are accepted too and flow through every operation
exactly, which is what the exact-arithmetic tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GameError(ValueError):
    """Structured input error for game construction and game operations."""


class DimensionError(GameError):
    """Shapes of a profile/index do not match the game."""


def _is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object


@dataclass(frozen=True)
class Game:
    """An n-player strategic-form game.

    Attributes:
        num_players: number of players n (>= 2).
        strategy_counts: tuple of n positive ints, one pure-strategy count per
            player.
        payoffs: tuple of n read-only arrays; payoffs[w] has shape
            strategy_counts and payoffs[w][s1, ..., sn] is player w's utility
            at that pure profile.
    """

    num_players: int
    strategy_counts: tuple[int, ...]
    payoffs: tuple[np.ndarray, ...]

    def __init__(self, payoffs: Sequence[np.ndarray] | np.ndarray):
        tensors = [np.asarray(t) for t in payoffs]
        n = len(tensors)
        if n < 2:
            raise GameError(f"a game needs at least 2 players, got {n}")
        shape = tensors[0].shape
        if len(shape) != n:
            raise GameError(
                f"payoff tensors must have one axis per player: "
                f"got shape {shape} for {n} players"
            )
        if any(m < 1 for m in shape):
            raise GameError(f"every player needs at least one strategy, got {shape}")
        for w, t in enumerate(tensors):
            if t.shape != shape:
                raise GameError(
                    f"payoff tensor for player {w} has shape {t.shape}, expected {shape}"
                )
            if not _is_exact(t):
                t = t.astype(float)
                if not np.all(np.isfinite(t)):
                    raise GameError(f"payoff tensor for player {w} contains NaN/inf")
                tensors[w] = t
        for t in tensors:
            t.setflags(write=False)
        object.__setattr__(self, "num_players", n)
        object.__setattr__(self, "strategy_counts", tuple(shape))
        object.__setattr__(self, "payoffs", tuple(tensors))

    @property
    def num_pure_profiles(self) -> int:
        out = 1
        for m in self.strategy_counts:
            out *= m
        return out

    @property
    def exact(self) -> bool:
        """True when payoffs carry exact (object-dtype) values."""
        return _is_exact(self.payoffs[0])

    def payoff_range(self, player: int) -> tuple:
        """(min, max) payoff entries for one player."""
        self._check_player(player)
        t = self.payoffs[player]
        flat = t.ravel()
        if _is_exact(t):
            return min(flat), max(flat)
        return float(flat.min()), float(flat.max())

    def _check_player(self, player: int) -> None:
        if not 0 <= player < self.num_players:
            raise DimensionError(
                f"player index {player} out of range for {self.num_players} players"
            )


@dataclass(frozen=True)
class MixedProfile:
    """One probability distribution per player over that player's strategies.

    Each distribution must be nonnegative and sum to 1 within `tol`
    (default 1e-9; solver output is renormalized before construction).
    """

    distributions: tuple[np.ndarray, ...]
    tol: float = field(default=1e-9, compare=False)

    def __init__(self, distributions: Sequence, tol: float = 1e-9):
        dists = []
        for i, d in enumerate(distributions):
            d = np.asarray(d)
            if not _is_exact(d):
                d = d.astype(float)
            if d.ndim != 1:
                raise DimensionError(f"distribution {i} must be a vector")
            if any(x < 0 for x in d):
                raise GameError(f"distribution {i} has a negative entry")
            total = sum(d) if _is_exact(d) else float(d.sum())
            if abs(total - 1) > tol:
                raise GameError(f"distribution {i} sums to {total}, not 1 (tol {tol})")
            d.setflags(write=False)
            dists.append(d)
        object.__setattr__(self, "distributions", tuple(dists))
        object.__setattr__(self, "tol", tol)

    @classmethod
    def uniform(cls, game: Game) -> "MixedProfile":
        return cls([np.full(m, 1.0 / m) for m in game.strategy_counts])

    @classmethod
    def pure(cls, game: Game, pures: Sequence[int]) -> "MixedProfile":
        dists = []
        for m, s in zip(game.strategy_counts, pures):
            d = np.zeros(m)
            d[s] = 1.0
            dists.append(d)
        return cls(dists)

    def matches(self, game: Game) -> bool:
        return tuple(len(d) for d in self.distributions) == game.strategy_counts


@dataclass(frozen=True)
class RegretReport:
    """Certified deviation-gain report for a profile.

    epsilon is the largest gain any player can realize by a unilateral pure
    deviation (clamped at 0); best_responses holds each player's maximizing
    pure strategy (lowest index on ties).
    """

    epsilon: float
    per_player_regret: tuple
    best_responses: tuple[int, ...]


def _require_match(game: Game, profile: MixedProfile) -> None:
    if not profile.matches(game):
        raise DimensionError(
            f"profile shape {tuple(len(d) for d in profile.distributions)} "
            f"does not match game {game.strategy_counts}"
        )


def contract_others(tensor: np.ndarray, dists: Sequence[np.ndarray], player: int) -> np.ndarray:
    """Contract a payoff tensor against every distribution except `player`'s.

    Unvalidated float fast path shared by the learning loops; returns the
    length-m_player vector of per-pure-strategy expected utilities.
    """
    t = tensor
    for q in range(len(dists) - 1, -1, -1):
        if q == player:
            continue
        t = np.tensordot(t, dists[q], axes=(q, 0))
    return t


def deviation_values(game: Game, profile: MixedProfile, player: int) -> np.ndarray:
    """Expected utility of each of `player`'s pure strategies against the
    other players' mixtures. Length-m_player vector."""
    _require_match(game, profile)
    game._check_player(player)
    if game.exact or any(_is_exact(d) for d in profile.distributions):
        return _deviation_values_exact(game, profile, player)
    return contract_others(game.payoffs[player], profile.distributions, player)


def _deviation_values_exact(game: Game, profile: MixedProfile, player: int) -> np.ndarray:
    n = game.num_players
    m = game.strategy_counts[player]
    tensor = game.payoffs[player]
    out = np.empty(m, dtype=object)
    for s in range(m):
        acc = 0
        for idx in np.ndindex(*game.strategy_counts):
            if idx[player] != s:
                continue
            w = 1
            for q in range(n):
                if q == player:
                    continue
                w = w * profile.distributions[q][idx[q]]
                if w == 0:
                    break
            if w != 0:
                acc = acc + w * tensor[idx]
        out[s] = acc
    return out


def expected_utility(game: Game, profile: MixedProfile, player: int) -> float:
    """u_player(profile): product-weighted sum over all pure profiles."""
    vals = deviation_values(game, profile, player)
    d = profile.distributions[player]
    if _is_exact(vals) or _is_exact(d):
        return sum(p * v for p, v in zip(d, vals))
    return float(np.dot(d, vals))


def pure_deviation_value(game: Game, profile: MixedProfile, player: int, pure: int) -> float:
    """Expected utility to `player` of the pure strategy `pure` while everyone
    else follows `profile`."""
    if not 0 <= pure < game.strategy_counts[player]:
        raise DimensionError(
            f"pure strategy {pure} out of range for player {player}"
        )
    vals = deviation_values(game, profile, player)
    return vals[pure] if _is_exact(vals) else float(vals[pure])


def epsilon_of(game: Game, profile: MixedProfile) -> RegretReport:
    """Largest unilateral pure-deviation gain, per player and overall.

    The inner maximization runs over pure strategies only (a best response is
    always attained at one); per-player regret is clamped at 0 from below.
    """
    _require_match(game, profile)
    regrets = []
    brs = []
    for i in range(game.num_players):
        vals = deviation_values(game, profile, i)
        d = profile.distributions[i]
        if _is_exact(vals) or _is_exact(d):
            current = sum(p * v for p, v in zip(d, vals))
            best_val = max(vals)
            best_idx = min(s for s in range(len(vals)) if vals[s] == best_val)
            gain = best_val - current
            regrets.append(gain if gain > 0 else gain * 0)
        else:
            current = float(np.dot(d, vals))
            best_idx = int(np.argmax(vals))
            regrets.append(max(float(vals[best_idx]) - current, 0.0))
        brs.append(int(best_idx))
    eps = max(regrets)
    return RegretReport(epsilon=eps, per_player_regret=tuple(regrets), best_responses=tuple(brs))


@dataclass(frozen=True)
class NormalizedGame:
    """Result of payoff normalization to [0, 1].

    new = (old + offset) / scale with one global offset/scale pair, so
    epsilon_original = epsilon_normalized * scale. A constant game is flagged
    degenerate (scale 0, all payoffs 0): every profile is an equilibrium.
    """

    game: Game
    offset: float
    scale: float
    degenerate: bool


def normalize_payoffs(game: Game) -> NormalizedGame:
    """Shift/scale all payoffs into [0, 1] with global min 0 and max 1."""
    lo = min(game.payoff_range(i)[0] for i in range(game.num_players))
    hi = max(game.payoff_range(i)[1] for i in range(game.num_players))
    scale = hi - lo
    if scale == 0:
        zero = [np.zeros(game.strategy_counts) for _ in range(game.num_players)]
        return NormalizedGame(Game(zero), offset=0.0, scale=0.0, degenerate=True)
    if game.exact:
        tensors = [(t + (-lo)) / scale for t in game.payoffs]
        return NormalizedGame(Game(tensors), offset=-lo, scale=scale, degenerate=False)
    tensors = [(t - lo) / scale for t in game.payoffs]
    return NormalizedGame(Game(tensors), offset=float(-lo), scale=float(scale), degenerate=False)


def max_utility_gap(game: Game, player: int) -> float:
    """Largest possible utility difference for one player: global max payoff
    entry minus global min entry of that player's tensor. Upper-bounds any
    regret the player can incur."""
    lo, hi = game.payoff_range(player)
    return hi - lo


def random_game(n: int, m: int, seed: int) -> Game:
    """Game with i.i.d. uniform [0,1) payoffs from a deterministic generator.

    The generator is PCG64 keyed through numpy's SeedSequence, so identical
    (n, m, seed) yields bit-identical games on every platform. Payoffs are
    drawn as one (n, m, ..., m) block in C order.
    """
    if n < 2:
        raise GameError("random_game needs n >= 2")
    if m < 1:
        raise GameError("random_game needs m >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    block = rng.random((n,) + (m,) * n)
    return Game([block[w] for w in range(n)])


def renormalize_distribution(raw: np.ndarray) -> np.ndarray | None:
    """Clamp negatives to 0 and rescale to sum 1; None if everything is 0."""
    v = np.maximum(np.asarray(raw, dtype=float), 0.0)
    total = v.sum()
    if total <= 0.0:
        return None
    return v / total
