"""Complete equilibrium search: branch on support binaries and split
probability boxes, re-tightening McCormick envelopes at every node.

Each node solves a box-tightened LP relaxation (all bilinear equalities
replaced by their envelopes, binaries relaxed unless fixed) with a small
regret-sum objective that steers the LP point toward low-regret vertices. The
extracted profile of every node is certified independently by the exact
regret computation; the search ends the moment a certified profile meets the
acceptance threshold. Candidates whose bilinear residuals pass the
feasibility tolerance but whose certification fails are re-branched with a
halved local tolerance, so boxes keep shrinking until the envelopes pin the
true products.

Everything is deterministic for a fixed game and configuration: node order is
best-first on (fixed binaries, parent residual) with creation-order tie
breaks, and ties inside branching rules resolve to the lowest variable id.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .formulation import FeasibilityProgram, build
from .games import (
    Game,
    MixedProfile,
    RegretReport,
    contract_others,
    epsilon_of,
    normalize_payoffs,
    renormalize_distribution,
)
from .lp import (
    INFEASIBLE,
    OPTIMAL,
    LinearProgram,
    LpBasis,
    mccormick_rows,
    solve_lp,
)

SOLVED = "solved"
TIMEOUT = "timeout"
NODE_LIMIT = "node-limit"
NUMERIC_FAILURE = "numeric-failure"
INFEASIBLE_STATUS = "infeasible"  # impossible for real games; kept for audit

_INT_TOL = 1e-6
_PROP_MARGIN = 1e-14


@dataclass
class SolverConfig:
    """Search knobs.

    feasibility_tolerance bounds bilinear residuals before a node may claim a
    candidate; epsilon_accept is the independent certification threshold (in
    normalized payoff units) and is deliberately a separate, usually looser
    knob. branch_seed is reserved for randomized branching rules; the default
    rules are deterministic and ignore it.
    """

    feasibility_tolerance: float = 1e-4
    epsilon_accept: float = 1e-3
    time_limit: float = 900.0
    node_limit: int | None = None
    branch_seed: int = 0
    normalize: bool = True
    root_heuristic_iterations: int = 20_000

    def __post_init__(self):
        if self.feasibility_tolerance <= 0 or self.epsilon_accept <= 0:
            raise ValueError("tolerances must be positive")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")
        if self.root_heuristic_iterations < 0:
            raise ValueError("root_heuristic_iterations must be >= 0")


@dataclass
class SolverStats:
    nodes: int = 0
    lp_solves: int = 0
    max_depth: int = 0
    wall_time: float = 0.0


@dataclass
class BnbResult:
    """Search outcome.

    On 'solved', profile carries the certified mixture, certified_epsilon its
    exact regret bound in original payoff units, and epsilon_normalized the
    same in [0,1]-scaled units. Timeout / node-limit results attach the best
    incumbent seen, when any profile was extracted at all.
    """

    status: str
    profile: MixedProfile | None
    certified_epsilon: float | None
    epsilon_normalized: float | None
    stats: SolverStats
    diagnostics: dict = field(default_factory=dict)


@dataclass
class Node:
    """One search region: variable boxes plus branching bookkeeping."""

    node_id: int
    parent_id: int | None
    depth: int
    lower: np.ndarray
    upper: np.ndarray
    fixed_binaries: dict[int, int]
    basis: LpBasis | None = None
    local_tolerance: float = 0.0
    parent_residual: float = float("inf")


def live_bilinear_indices(program: FeasibilityProgram) -> list[int]:
    """Bilinear constraints whose product variable feeds a utility row or a
    longer chain. Products over subsets that include player 0 but are shorter
    than n-1 hang off the roster unused (the chain always peels the lowest
    player), so their envelopes constrain nothing else: any LP point extends
    to them exactly. The relaxation skips them; audits and embeddings keep
    the full roster."""
    n = program.num_players
    live = []
    for idx, bc in enumerate(program.bilinear):
        key = program.variables[bc.product].key
        if len(key) == n - 1 or key[0][0] > 0:
            live.append(idx)
    return live


def node_relaxation(
    program: FeasibilityProgram, node: Node, objective: str = "regret"
) -> LinearProgram:
    """LP over the node's boxes: linear rows verbatim, four envelope rows per
    relaxation-relevant bilinear equality, binaries continuous inside their
    (possibly fixed) boxes. objective 'regret' adds the regret-sum steering
    term; 'zero' gives the pure feasibility LP."""
    rows = list(program.linear)
    lo, hi = node.lower, node.upper
    for idx in live_bilinear_indices(program):
        bc = program.bilinear[idx]
        rows.extend(
            mccormick_rows(
                bc.product,
                bc.left,
                bc.right,
                (lo[bc.left], hi[bc.left]),
                (lo[bc.right], hi[bc.right]),
            )
        )
    c = np.zeros(program.num_variables)
    if objective == "regret":
        for j in program.regret.values():
            c[j] = 1.0
    return LinearProgram(lower=lo, upper=hi, rows=rows, objective=c)


def propagate(program: FeasibilityProgram, lower: np.ndarray, upper: np.ndarray) -> bool:
    """Tighten boxes in place; False when some box empties.

    Passes: support links (big-M rows as interval rules), per-player simplex
    sums, and forward interval products along the bilinear chain. All
    tightenings carry a tiny outward margin so no feasible point is cut.
    """
    n = program.num_players
    for _ in range(8):
        changed = False

        for (i, s), b in program.support_binary.items():
            p = program.prob_mass[i, s]
            r = program.regret[i, s]
            gap = float(program.max_gap[i])
            new_hi_r = gap * upper[b] + _PROP_MARGIN
            if new_hi_r < upper[r]:
                upper[r] = max(new_hi_r, lower[r])
                changed = True
            new_hi_p = 1.0 - lower[b] + _PROP_MARGIN
            if new_hi_p < upper[p]:
                upper[p] = max(new_hi_p, lower[p])
                changed = True
            new_hi_b = 1.0 - lower[p] + _PROP_MARGIN
            if new_hi_b < upper[b]:
                upper[b] = max(new_hi_b, lower[b])
                changed = True

        for i in range(n):
            ids = [program.prob_mass[i, s] for s in range(program.strategy_counts[i])]
            sum_lo = sum(lower[j] for j in ids)
            sum_hi = sum(upper[j] for j in ids)
            if sum_lo > 1.0 + 1e-9 or sum_hi < 1.0 - 1e-9:
                return False
            for j in ids:
                floor = 1.0 - (sum_hi - upper[j]) - _PROP_MARGIN
                if floor > lower[j]:
                    lower[j] = min(floor, upper[j])
                    changed = True
                ceil = 1.0 - (sum_lo - lower[j]) + _PROP_MARGIN
                if ceil < upper[j]:
                    upper[j] = max(ceil, lower[j])
                    changed = True

        for bc in program.bilinear:
            w, x, y = bc.product, bc.left, bc.right
            floor = lower[x] * lower[y] - _PROP_MARGIN
            ceil = upper[x] * upper[y] + _PROP_MARGIN
            if floor > lower[w]:
                lower[w] = floor
                changed = True
            if ceil < upper[w]:
                upper[w] = ceil
                changed = True
            # reverse direction: factors inherit bounds from the product
            # (nonnegative intervals, so x >= lw/uy and x <= uw/ly)
            for a, b2 in ((x, y), (y, x)):
                if upper[b2] > 1e-12:
                    floor_a = lower[w] / upper[b2] - _PROP_MARGIN
                    if floor_a > lower[a]:
                        lower[a] = min(floor_a, upper[a])
                        changed = True
                if lower[b2] > 1e-12:
                    ceil_a = upper[w] / lower[b2] + _PROP_MARGIN
                    if ceil_a < upper[a]:
                        upper[a] = max(ceil_a, lower[a])
                        changed = True

        if np.any(lower > upper + 1e-9):
            return False
        np.minimum(lower, upper, out=lower)
        if not changed:
            break
    # snap sliver boxes to exact points: keeps degenerate envelope rows
    # exactly collinear instead of nearly so
    sliver = (upper - lower) < 1e-12
    if np.any(sliver):
        mid = 0.5 * (lower[sliver] + upper[sliver])
        lower[sliver] = mid
        upper[sliver] = mid
    return True


BRANCH_BINARY = "binary"
BRANCH_SPATIAL = "spatial"
CANDIDATE = "candidate"


def select_branch(
    values: np.ndarray,
    program: FeasibilityProgram,
    node: Node,
    feasibility_tolerance: float,
):
    """Branching decision at an LP-optimal point.

    Fractional binaries first (most fractional, lowest id on ties); otherwise
    the bilinear constraint with the worst residual picks its wider-boxed
    factor, split at the LP value clamped away from the box edges by 10% of
    the width; when nothing exceeds the tolerance the node is a candidate.
    """
    frac_id = -1
    frac_score = -1.0
    for b in program.binary_ids():
        if node.upper[b] - node.lower[b] < _INT_TOL:
            continue
        v = values[b]
        if _INT_TOL < v < 1.0 - _INT_TOL:
            score = 0.5 - abs(v - 0.5)
            if score > frac_score + 1e-15:
                frac_score = score
                frac_id = b
    if frac_id >= 0:
        return (BRANCH_BINARY, frac_id)

    worst = -1.0
    worst_idx = -1
    for idx in live_bilinear_indices(program):
        bc = program.bilinear[idx]
        res = abs(values[bc.product] - values[bc.left] * values[bc.right])
        if res > worst + 1e-15:
            worst = res
            worst_idx = idx
    if worst_idx >= 0 and worst > feasibility_tolerance:
        bc = program.bilinear[worst_idx]
        wx = node.upper[bc.left] - node.lower[bc.left]
        wy = node.upper[bc.right] - node.lower[bc.right]
        var = bc.left if wx >= wy else bc.right
        l, u = node.lower[var], node.upper[var]
        width = u - l
        split = min(max(values[var], l + 0.1 * width), u - 0.1 * width)
        return (BRANCH_SPATIAL, var, float(split), worst_idx)
    return (CANDIDATE, worst)


def _pairwise_matrix(
    game: Game, dists: list[np.ndarray], i: int, j: int
) -> np.ndarray:
    """u_i as an (m_i, m_j) matrix with every player but i and j integrated
    out against `dists`."""
    t = game.payoffs[i]
    for q in range(game.num_players - 1, -1, -1):
        if q == i or q == j:
            continue
        t = np.tensordot(t, dists[q], axes=(q, 0))
    return t if i < j else t.T


def best_response_descent(
    game: Game, start: list[int], max_steps: int = 32
) -> list[int] | None:
    """Iterate simultaneous pure best responses from a pure profile.

    A fixed point is exactly a pure equilibrium; returns None when the
    dynamics cycle or the step budget runs out.
    """
    pures = list(start)
    seen = {tuple(pures)}
    for _ in range(max_steps):
        dists = []
        for m, s in zip(game.strategy_counts, pures):
            d = np.zeros(m)
            d[s] = 1.0
            dists.append(d)
        brs = [
            int(np.argmax(contract_others(game.payoffs[i], dists, i)))
            for i in range(game.num_players)
        ]
        if brs == pures:
            return pures
        pures = brs
        key = tuple(pures)
        if key in seen:
            return None
        seen.add(key)
    return None


def polish_profile(
    game: Game,
    dists: list[np.ndarray],
    rounds: int = 10,
    support_floor: float = 1e-8,
    supports: list[np.ndarray] | None = None,
) -> list[np.ndarray] | None:
    """Damped Newton refinement of the support-restricted indifference system.

    Supports default to the strategies holding more than `support_floor`
    mass; unknowns are the on-support masses and one utility level per
    player, equations force every on-support strategy to meet its player's
    level plus the simplex sums. Steps are damped to keep masses
    nonnegative. Returns None when the system is unusable (empty support,
    singular Jacobian); the caller then certifies the unpolished point.
    """
    n = game.num_players
    if supports is None:
        supports = [np.flatnonzero(d > support_floor) for d in dists]
    if any(len(s) == 0 for s in supports):
        return None
    offsets = []
    pos = 0
    for s in supports:
        offsets.append(pos)
        pos += len(s)
    total_p = pos
    dim = total_p + n

    work = [d.copy() for d in dists]
    for i, supp in enumerate(supports):
        mask = np.zeros_like(work[i])
        mask[supp] = work[i][supp]
        tot = mask.sum()
        if tot <= 0:
            return None
        work[i] = mask / tot

    for _ in range(rounds):
        F = np.zeros(dim)
        J = np.zeros((dim, dim))
        levels = []
        for i, supp in enumerate(supports):
            vals = contract_others(game.payoffs[i], work, i)
            level = float(work[i] @ vals)
            levels.append(level)
            for a, s in enumerate(supp):
                row = offsets[i] + a
                F[row] = float(vals[s]) - level
                J[row, total_p + i] = -1.0
                for j in range(n):
                    if j == i:
                        continue
                    pm = _pairwise_matrix(game, work, i, j)
                    for b, t2 in enumerate(supports[j]):
                        J[row, offsets[j] + b] = pm[s, t2]
        for i, supp in enumerate(supports):
            row = total_p + i
            F[row] = float(work[i][supp].sum()) - 1.0
            J[row, offsets[i] : offsets[i] + len(supp)] = 1.0
        if float(np.max(np.abs(F))) < 1e-13:
            break
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(step)):
            return None
        # damp so no mass crosses zero
        alpha = 1.0
        for i, supp in enumerate(supports):
            seg = step[offsets[i] : offsets[i] + len(supp)]
            cur = work[i][supp]
            neg = seg < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(cur[neg] / -seg[neg])) * 0.9)
        alpha = max(min(alpha, 1.0), 0.0)
        if alpha < 1e-12:
            break
        for i, supp in enumerate(supports):
            work[i][supp] = work[i][supp] + alpha * step[offsets[i] : offsets[i] + len(supp)]
    out = []
    for d in work:
        fixed = renormalize_distribution(d)
        if fixed is None:
            return None
        out.append(fixed)
    return out


def certify_profile(
    norm_game: Game,
    dists: list[np.ndarray],
    epsilon_accept: float,
    polish: bool = True,
) -> tuple[bool, RegretReport, MixedProfile]:
    """Certify a candidate point by exact regret, with optional refinement.

    When the raw point misses the threshold, nearby candidates are tried and
    kept only if they certify strictly better: the modal pure profile pushed
    to a best-response fixed point (an exact pure equilibrium when one is
    reached), then Newton polishes of the indifference system over a few
    absolute and modal-relative support cutoffs. Acceptance always rests on
    the exact regret computation.
    """
    profile = MixedProfile(dists)
    report = epsilon_of(norm_game, profile)
    if polish and report.epsilon > epsilon_accept:
        rounded = [int(np.argmax(d)) for d in dists]
        fixed = best_response_descent(norm_game, rounded)
        if fixed is not None:
            alt_profile = MixedProfile.pure(norm_game, fixed)
            alt_report = epsilon_of(norm_game, alt_profile)
            if alt_report.epsilon < report.epsilon:
                profile, report = alt_profile, alt_report
    if polish and report.epsilon > epsilon_accept:
        patterns = []
        seen = set()
        for floor in (1e-8, 0.01, 0.05):
            supp = [np.flatnonzero(d > floor) for d in dists]
            key = tuple(tuple(s.tolist()) for s in supp)
            if key not in seen and all(len(s) for s in supp):
                seen.add(key)
                patterns.append(supp)
        for tau in (0.5, 0.25):
            supp = [np.flatnonzero(d >= tau * d.max()) for d in dists]
            key = tuple(tuple(s.tolist()) for s in supp)
            if key not in seen and all(len(s) for s in supp):
                seen.add(key)
                patterns.append(supp)
        for supp in patterns:
            polished = polish_profile(norm_game, dists, supports=supp)
            if polished is None:
                continue
            alt_profile = MixedProfile(polished)
            alt_report = epsilon_of(norm_game, alt_profile)
            if alt_report.epsilon < report.epsilon:
                profile, report = alt_profile, alt_report
            if report.epsilon <= epsilon_accept:
                break
    return report.epsilon <= epsilon_accept, report, profile


def certify_candidate(
    norm_game: Game,
    program: FeasibilityProgram,
    values: np.ndarray,
    epsilon_accept: float,
    polish: bool = True,
) -> tuple[bool, RegretReport | None, MixedProfile | None]:
    """Renormalize the probability block of an assignment and certify it."""
    dists = []
    for i in range(program.num_players):
        raw = np.array(
            [values[program.prob_mass[i, s]] for s in range(program.strategy_counts[i])]
        )
        d = renormalize_distribution(raw)
        if d is None:
            return False, None, None
        dists.append(d)
    return certify_profile(norm_game, dists, epsilon_accept, polish=polish)


def solve(game: Game, config: SolverConfig | None = None) -> BnbResult:
    """Run the complete search on one game.

    The game is payoff-normalized first (single global offset/scale), the
    feasibility program built once, and the node pool processed best-first
    on (fixed binaries, parent residual). Deterministic for fixed inputs,
    including node counts; only wall-clock cutoffs can vary.
    """
    config = config or SolverConfig()
    start = time.monotonic()
    stats = SolverStats()

    if config.normalize:
        norm = normalize_payoffs(game)
        if norm.degenerate:
            profile = MixedProfile.uniform(game)
            stats.wall_time = time.monotonic() - start
            return BnbResult(
                status=SOLVED,
                profile=profile,
                certified_epsilon=0.0,
                epsilon_normalized=0.0,
                stats=stats,
                diagnostics={"degenerate": True},
            )
        work_game, scale = norm.game, norm.scale
    else:
        work_game, scale = game, 1.0

    incumbent: MixedProfile | None = None
    incumbent_report: RegretReport | None = None
    incumbent_raw: np.ndarray | None = None

    # deterministic root heuristic: one self-play burst, certified through
    # the same exact-regret path as any node candidate
    if config.root_heuristic_iterations > 0:
        from .baselines import fictitious_play

        trace = fictitious_play(work_game, config.root_heuristic_iterations)
        accepted, report, profile = certify_profile(
            work_game,
            [d.copy() for d in trace.final_profile.distributions],
            config.epsilon_accept,
        )
        if profile is not None:
            incumbent, incumbent_report = profile, report
        if accepted:
            stats.wall_time = time.monotonic() - start
            return BnbResult(
                status=SOLVED,
                profile=profile,
                certified_epsilon=report.epsilon * scale,
                epsilon_normalized=report.epsilon,
                stats=stats,
                diagnostics={"root_heuristic": "fictitious-play"},
            )

    program = build(work_game)
    root_lower, root_upper = program.bounds_arrays()
    counter = itertools.count()
    root = Node(
        node_id=next(counter),
        parent_id=None,
        depth=0,
        lower=root_lower,
        upper=root_upper,
        fixed_binaries={},
        local_tolerance=config.feasibility_tolerance,
    )
    queue: list = []
    if propagate(program, root.lower, root.upper):
        heapq.heappush(queue, (0, root.parent_residual, root.node_id, root))

    def finish(status, diagnostics=None):
        stats.wall_time = time.monotonic() - start
        eps_norm = incumbent_report.epsilon if incumbent_report else None
        return BnbResult(
            status=status,
            profile=incumbent,
            certified_epsilon=None if eps_norm is None else eps_norm * scale,
            epsilon_normalized=eps_norm,
            stats=stats,
            diagnostics=diagnostics or {},
        )

    while queue:
        if time.monotonic() - start > config.time_limit:
            return finish(TIMEOUT)
        if config.node_limit is not None and stats.nodes >= config.node_limit:
            return finish(NODE_LIMIT)

        _, _, _, node = heapq.heappop(queue)
        lp = node_relaxation(program, node)
        sol = solve_lp(lp, warm=node.basis)
        stats.lp_solves += 1
        if sol.status not in (OPTIMAL, INFEASIBLE):
            sol = solve_lp(lp, pivot_tol=1e-12)
            stats.lp_solves += 1
            if sol.status not in (OPTIMAL, INFEASIBLE):
                return finish(
                    NUMERIC_FAILURE,
                    {"lp_status": sol.status, "node": node.node_id, "depth": node.depth},
                )
        if sol.status == INFEASIBLE:
            continue

        stats.nodes += 1
        stats.max_depth = max(stats.max_depth, node.depth)

        accepted, report, profile = certify_candidate(
            work_game, program, sol.values, config.epsilon_accept
        )
        if profile is not None and (
            incumbent_report is None or report.epsilon < incumbent_report.epsilon
        ):
            incumbent, incumbent_report = profile, report
            incumbent_raw = np.array(
                [
                    sol.values[program.prob_mass[i, s]]
                    for i in range(program.num_players)
                    for s in range(program.strategy_counts[i])
                ]
            )
        if accepted:
            incumbent, incumbent_report = profile, report
            return finish(SOLVED, {"raw_probabilities": incumbent_raw})

        decision = select_branch(sol.values, program, node, node.local_tolerance)
        children: list[Node] = []
        if decision[0] == BRANCH_BINARY:
            b = decision[1]
            for value in (0, 1):
                lo = node.lower.copy()
                hi = node.upper.copy()
                lo[b] = hi[b] = float(value)
                children.append(
                    Node(
                        node_id=next(counter),
                        parent_id=node.node_id,
                        depth=node.depth + 1,
                        lower=lo,
                        upper=hi,
                        fixed_binaries={**node.fixed_binaries, b: value},
                        basis=sol.basis,
                        local_tolerance=node.local_tolerance,
                        parent_residual=0.0,
                    )
                )
        else:
            if decision[0] == CANDIDATE:
                # residuals pass but certification failed: force spatial
                # refinement at half the local tolerance
                worst_idx = _worst_bilinear(sol.values, program)
                if worst_idx < 0:
                    continue  # no bilinear structure left to refine
                bc = program.bilinear[worst_idx]
                wx = node.upper[bc.left] - node.lower[bc.left]
                wy = node.upper[bc.right] - node.lower[bc.right]
                var = bc.left if wx >= wy else bc.right
                if node.upper[var] - node.lower[var] <= 1e-12:
                    continue  # box numerically a point; nothing to split
                l, u = node.lower[var], node.upper[var]
                width = u - l
                split = float(
                    min(max(sol.values[var], l + 0.1 * width), u - 0.1 * width)
                )
                tol_child = node.local_tolerance / 2.0
            else:
                _, var, split, worst_idx = decision
                tol_child = node.local_tolerance
            bc = program.bilinear[worst_idx]
            residual = abs(
                sol.values[bc.product] - sol.values[bc.left] * sol.values[bc.right]
            )
            for lo_v, hi_v in ((node.lower[var], split), (split, node.upper[var])):
                lo = node.lower.copy()
                hi = node.upper.copy()
                lo[var], hi[var] = lo_v, hi_v
                children.append(
                    Node(
                        node_id=next(counter),
                        parent_id=node.node_id,
                        depth=node.depth + 1,
                        lower=lo,
                        upper=hi,
                        fixed_binaries=dict(node.fixed_binaries),
                        basis=sol.basis,
                        local_tolerance=tol_child,
                        parent_residual=float(residual),
                    )
                )

        for child in children:
            if propagate(program, child.lower, child.upper):
                heapq.heappush(
                    queue,
                    (
                        -len(child.fixed_binaries),
                        child.parent_residual,
                        child.node_id,
                        child,
                    ),
                )

    return finish(INFEASIBLE_STATUS)


def _worst_bilinear(values: np.ndarray, program: FeasibilityProgram) -> int:
    worst = -1.0
    worst_idx = -1
    for idx in live_bilinear_indices(program):
        bc = program.bilinear[idx]
        res = abs(values[bc.product] - values[bc.left] * values[bc.right])
        if res > worst + 1e-15:
            worst = res
            worst_idx = idx
    return worst_idx
