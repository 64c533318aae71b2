"""Feasibility-program construction for n-player equilibrium search.

For two players the program is a linear mixed-integer feasibility system; for
n >= 3 every joint probability of 2..n-1 distinct players' strategies becomes
its own variable, defined through a chain of bilinear equalities (each new
product peels off the lowest-indexed player). Feasible assignments correspond
exactly to the game's equilibria.

The builder keeps constraint coefficients in whatever numeric type the game
payoffs carry, so exact (Fraction) games produce exactly checkable programs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .games import Game, MixedProfile, deviation_values, max_utility_gap

PROB_MASS = "prob_mass"
BEST_UTILITY = "best_utility"
PURE_UTILITY = "pure_utility"
REGRET = "regret"
SUPPORT_BINARY = "support_binary"
PRODUCT = "product"


class FormulationError(ValueError):
    """Raised for games the builder cannot accept."""


@dataclass(frozen=True)
class VarDescriptor:
    """One program variable: role, box bounds, integrality.

    Scalar roles carry (player, pure); `product` variables instead carry
    `key`, a tuple of (player, pure) pairs sorted by player, holding the
    joint probability of those 2..n-1 strategies.
    """

    kind: str
    player: int | None = None
    pure: int | None = None
    key: tuple[tuple[int, int], ...] | None = None
    lower: float = 0
    upper: float = 1
    binary: bool = False

    def label(self) -> str:
        if self.kind == PRODUCT:
            inside = ",".join(f"{p}:{s}" for p, s in self.key)
            return f"product({inside})"
        if self.kind == BEST_UTILITY:
            return f"{self.kind}(p{self.player})"
        return f"{self.kind}(p{self.player},s{self.pure})"


@dataclass(frozen=True)
class LinearConstraint:
    """sum(coef * var) sense rhs, with sense one of '=', '<=', '>='."""

    terms: tuple[tuple[int, object], ...]
    sense: str
    rhs: object

    def residual(self, x) -> float:
        lhs = sum(c * x[j] for j, c in self.terms)
        gap = lhs - self.rhs
        if self.sense == "=":
            return abs(gap)
        if self.sense == "<=":
            return max(gap, 0 * gap)
        return max(-gap, 0 * gap)


@dataclass(frozen=True)
class BilinearConstraint:
    """product = left * right (three distinct variable ids)."""

    product: int
    left: int
    right: int

    def residual(self, x):
        return abs(x[self.product] - x[self.left] * x[self.right])


@dataclass
class FeasibilityProgram:
    """All variables and constraints of the equilibrium system for one game.

    Pure feasibility: there is no objective. Immutable once built; index maps
    are provided for solvers and tests.
    """

    num_players: int
    strategy_counts: tuple[int, ...]
    variables: list[VarDescriptor]
    linear: list[LinearConstraint]
    bilinear: list[BilinearConstraint]
    prob_mass: dict[tuple[int, int], int] = field(default_factory=dict)
    best_utility: dict[int, int] = field(default_factory=dict)
    pure_utility: dict[tuple[int, int], int] = field(default_factory=dict)
    regret: dict[tuple[int, int], int] = field(default_factory=dict)
    support_binary: dict[tuple[int, int], int] = field(default_factory=dict)
    product: dict[tuple[tuple[int, int], ...], int] = field(default_factory=dict)
    max_gap: tuple = ()

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    def binary_ids(self) -> list[int]:
        return [j for j, v in enumerate(self.variables) if v.binary]

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([float(v.lower) for v in self.variables])
        hi = np.array([float(v.upper) for v in self.variables])
        return lo, hi


def count_product_terms(n: int, m: int) -> int:
    """Total joint-probability terms sum_{k=1..n-1} m^k * C(n,k).

    Counts the k=1 terms (the per-strategy probability masses) together with
    every reified product of 2..n-1 players' strategies.
    """
    if n < 2:
        raise FormulationError("count_product_terms needs n >= 2")
    if m < 1:
        raise FormulationError("count_product_terms needs m >= 1")
    total = 0
    for k in range(1, n):
        total += (m**k) * _comb(n, k)
    if total > 2**63 - 1:
        raise OverflowError(f"product-term count {total} exceeds 2**63 - 1")
    return total


def _comb(n: int, k: int) -> int:
    out = 1
    for i in range(k):
        out = out * (n - i) // (i + 1)
    return out


def build(game: Game) -> FeasibilityProgram:
    """Construct the feasibility program for a payoff-normalized game.

    Callers must normalize first: the system imposes nonnegative utilities,
    so payoffs outside [0, 1] are rejected.
    """
    n = game.num_players
    counts = game.strategy_counts
    lo = min(game.payoff_range(i)[0] for i in range(n))
    hi = max(game.payoff_range(i)[1] for i in range(n))
    if lo < 0 or hi > 1:
        raise FormulationError(
            f"build requires payoffs normalized to [0, 1]; saw range [{lo}, {hi}]"
        )

    prog = FeasibilityProgram(
        num_players=n,
        strategy_counts=counts,
        variables=[],
        linear=[],
        bilinear=[],
        max_gap=tuple(max_utility_gap(game, i) for i in range(n)),
    )

    def add_var(desc: VarDescriptor) -> int:
        prog.variables.append(desc)
        return len(prog.variables) - 1

    for i in range(n):
        for s in range(counts[i]):
            prog.prob_mass[i, s] = add_var(VarDescriptor(PROB_MASS, player=i, pure=s))
    for i in range(n):
        prog.best_utility[i] = add_var(VarDescriptor(BEST_UTILITY, player=i))
    for i in range(n):
        for s in range(counts[i]):
            prog.pure_utility[i, s] = add_var(VarDescriptor(PURE_UTILITY, player=i, pure=s))
    for i in range(n):
        for s in range(counts[i]):
            prog.regret[i, s] = add_var(VarDescriptor(REGRET, player=i, pure=s))
    for i in range(n):
        for s in range(counts[i]):
            prog.support_binary[i, s] = add_var(
                VarDescriptor(SUPPORT_BINARY, player=i, pure=s, binary=True)
            )

    # joint-probability variables for every 2..n-1 subset of players, and the
    # bilinear chain defining them (peel the lowest-indexed player)
    for k in range(2, n):
        for subset in itertools.combinations(range(n), k):
            for pures in itertools.product(*(range(counts[q]) for q in subset)):
                key = tuple(zip(subset, pures))
                w = add_var(VarDescriptor(PRODUCT, key=key))
                prog.product[key] = w
                head_player, head_pure = key[0]
                rest = key[1:]
                left = prog.prob_mass[head_player, head_pure]
                right = prog.prob_mass[rest[0]] if len(rest) == 1 else prog.product[rest]
                prog.bilinear.append(BilinearConstraint(product=w, left=left, right=right))

    one = 1
    for i in range(n):
        terms = tuple((prog.prob_mass[i, s], one) for s in range(counts[i]))
        prog.linear.append(LinearConstraint(terms=terms, sense="=", rhs=one))

    # pure-strategy expected utilities: linear once products are reified
    for i in range(n):
        others = tuple(q for q in range(n) if q != i)
        for s in range(counts[i]):
            terms = []
            for pures in itertools.product(*(range(counts[q]) for q in others)):
                key = tuple(zip(others, pures))
                var = prog.prob_mass[key[0]] if n == 2 else prog.product[key]
                full = [0] * n
                full[i] = s
                for q, ps in key:
                    full[q] = ps
                coef = game.payoffs[i][tuple(full)]
                terms.append((var, coef))
            terms.append((prog.pure_utility[i, s], -one))
            prog.linear.append(LinearConstraint(terms=tuple(terms), sense="=", rhs=0 * one))

    for i in range(n):
        for s in range(counts[i]):
            prog.linear.append(
                LinearConstraint(
                    terms=(
                        (prog.best_utility[i], one),
                        (prog.pure_utility[i, s], -one),
                        (prog.regret[i, s], -one),
                    ),
                    sense="=",
                    rhs=0 * one,
                )
            )

    for i in range(n):
        for s in range(counts[i]):
            prog.linear.append(
                LinearConstraint(
                    terms=((prog.prob_mass[i, s], one), (prog.support_binary[i, s], one)),
                    sense="<=",
                    rhs=one,
                )
            )

    for i in range(n):
        for s in range(counts[i]):
            prog.linear.append(
                LinearConstraint(
                    terms=((prog.regret[i, s], one), (prog.support_binary[i, s], -prog.max_gap[i])),
                    sense="<=",
                    rhs=0 * one,
                )
            )

    return prog


@dataclass(frozen=True)
class ViolationReport:
    """Worst violation per constraint family for one assignment."""

    max_linear: float
    max_bilinear: float
    max_bound: float
    max_integrality: float

    def max_violation(self) -> float:
        return max(self.max_linear, self.max_bilinear, self.max_bound, self.max_integrality)

    def ok(self, tol: float) -> bool:
        return self.max_violation() <= tol


def check_candidate(program: FeasibilityProgram, assignment) -> ViolationReport:
    """Audit an assignment against every constraint family.

    Works in the assignment's own arithmetic: float vectors give float
    residuals, Fraction vectors give exact ones.
    """
    x = list(assignment)
    if len(x) != program.num_variables:
        raise FormulationError(
            f"assignment length {len(x)} != variable count {program.num_variables}"
        )
    zero = 0 * (x[0] if x else 0)
    max_lin = zero
    for row in program.linear:
        max_lin = max(max_lin, row.residual(x))
    max_bil = zero
    for bc in program.bilinear:
        max_bil = max(max_bil, bc.residual(x))
    max_bound = zero
    max_int = zero
    for j, v in enumerate(program.variables):
        max_bound = max(max_bound, v.lower - x[j], x[j] - v.upper, zero)
        if v.binary:
            max_int = max(max_int, min(abs(x[j]), abs(x[j] - 1)))
    return ViolationReport(
        max_linear=max_lin, max_bilinear=max_bil, max_bound=max_bound, max_integrality=max_int
    )


def embed_profile(program: FeasibilityProgram, game: Game, profile: MixedProfile) -> list:
    """Induce a full assignment from a profile of the building game.

    Probabilities come from the profile, products are true products,
    pure utilities are deviation values, the best utility is their max,
    regrets are the differences, and a support binary is 1 exactly where a
    positive regret forces the strategy out of support. For an equilibrium
    profile the result satisfies every constraint (exactly so in exact
    arithmetic); for non-equilibria the support rows become unsatisfiable.
    """
    n = game.num_players
    x: list = [None] * program.num_variables
    dev = [deviation_values(game, profile, i) for i in range(n)]
    for (i, s), j in program.prob_mass.items():
        x[j] = profile.distributions[i][s]
    for i, j in program.best_utility.items():
        x[j] = max(dev[i])
    for (i, s), j in program.pure_utility.items():
        x[j] = dev[i][s]
    for (i, s), j in program.regret.items():
        x[j] = max(dev[i]) - dev[i][s]
    for (i, s), j in program.support_binary.items():
        r = max(dev[i]) - dev[i][s]
        x[j] = 1 if r > 0 else 0
    for key, j in program.product.items():
        w = 1
        for q, s in key:
            w = w * profile.distributions[q][s]
        x[j] = w
    return x


def extract_profile(program: FeasibilityProgram, assignment) -> MixedProfile:
    """Read the probability-mass block of an assignment back into a profile."""
    dists = []
    for i in range(program.num_players):
        dists.append([assignment[program.prob_mass[i, s]] for s in range(program.strategy_counts[i])])
    return MixedProfile([np.asarray(d) for d in dists])


def dump_program(program: FeasibilityProgram) -> str:
    """Plain-text dump, one variable/constraint per line, for debugging and
    golden tests. Deterministic for a given build."""
    out = [f"variables {program.num_variables}"]
    for j, v in enumerate(program.variables):
        kind = "binary" if v.binary else "continuous"
        out.append(f"var {j} {v.label()} in [{_fmt(v.lower)},{_fmt(v.upper)}] {kind}")
    out.append(f"linear {len(program.linear)}")
    for idx, row in enumerate(program.linear):
        body = " + ".join(f"{_fmt(c)}*x{j}" for j, c in row.terms)
        sense = {"=": "==", "<=": "<=", ">=": ">="}[row.sense]
        out.append(f"row {idx}: {body} {sense} {_fmt(row.rhs)}")
    out.append(f"bilinear {len(program.bilinear)}")
    for idx, bc in enumerate(program.bilinear):
        out.append(f"prod {idx}: x{bc.product} == x{bc.left} * x{bc.right}")
    return "\n".join(out) + "\n"


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)
