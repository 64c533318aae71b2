"""Self-contained bounded-variable LP solver on a dense tableau.

Node relaxations are small (hundreds of rows) and dense, so the tableau is
kept explicitly. Every variable carries finite box bounds; inequality rows get
box-bounded slacks and each row carries a [0,0]-pinned artificial variable
that doubles as the running basis inverse. Since a row's slack and artificial
share the same constraint column, the tableau is stored compactly as
[structural block | row block] with a per-variable column map, which keeps
rank-1 pivot updates and pricing cheap.

Solving is primal two-phase from a slack crash basis; re-solves after bound
or coefficient changes reuse the previous basis and repair primal feasibility
with a budgeted bounded dual simplex, falling back to a cold solve when the
dual stalls. Pricing is textbook steepest edge on the explicit tableau,
switching to Bland's rule after a degeneracy streak to guarantee termination.

Tolerances: primal feasibility 1e-9, pivot threshold 1e-10 (tightenable per
solve). The looser 1e-4 feasibility tolerance of the surrounding search
applies to bilinear residuals and certification, never inside this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formulation import LinearConstraint

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-10
DJ_TOL = 1e-9
DEGENERACY_STREAK = 50


@dataclass
class LinearProgram:
    """Bounded-variable LP in computational form.

    rows hold structural-variable constraints (senses '=', '<=', '>=');
    lower/upper must be finite for every variable. objective is minimized
    unless sense is 'max'.
    """

    lower: np.ndarray
    upper: np.ndarray
    rows: list[LinearConstraint]
    objective: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.objective = np.asarray(self.objective, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.shape != self.objective.shape:
            raise ValueError("lower/upper/objective must have equal length")
        if np.any(self.lower > self.upper + 1e-15):
            raise ValueError("lower bound exceeds upper bound")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("all variable bounds must be finite")
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @property
    def num_vars(self) -> int:
        return len(self.lower)


@dataclass
class LpBasis:
    """Opaque restart data: basic variable per row plus nonbasic bound sides."""

    basis: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpSolution:
    status: str
    values: np.ndarray | None
    objective: float | None
    basis: LpBasis | None = None
    certificate: np.ndarray | None = None
    iterations: int = 0


def mccormick_rows(
    w: int, x: int, y: int, x_box: tuple[float, float], y_box: tuple[float, float]
) -> list[LinearConstraint]:
    """Four-inequality convex envelope of w = x*y over a box.

    Valid for every point with x in x_box and y in y_box; collapses to the
    exact equality when either box is degenerate.
    """
    lx, ux = x_box
    ly, uy = y_box
    if not (np.isfinite(lx) and np.isfinite(ux) and np.isfinite(ly) and np.isfinite(uy)):
        raise ValueError("mccormick_rows needs finite boxes")
    return [
        LinearConstraint(terms=((w, 1.0), (x, -ly), (y, -lx)), sense=">=", rhs=-lx * ly),
        LinearConstraint(terms=((w, 1.0), (x, -uy), (y, -ux)), sense=">=", rhs=-ux * uy),
        LinearConstraint(terms=((w, 1.0), (x, -ly), (y, -ux)), sense="<=", rhs=-ux * ly),
        LinearConstraint(terms=((w, 1.0), (x, -uy), (y, -lx)), sense="<=", rhs=-lx * uy),
    ]


def evaluate_rows(rows: list[LinearConstraint], x) -> float:
    """Worst violation of the given rows at x."""
    worst = 0.0
    for row in rows:
        worst = max(worst, float(row.residual(x)))
    return worst


class _Tableau:
    """Dense working state shared by the primal and dual loops.

    Variables are indexed 0..N-1 over [structural, slacks, artificials];
    `colmap` sends each variable to its compact tableau column (a slack and
    the artificial of the same row share one column, as their constraint
    columns coincide).
    """

    def __init__(self, lp: LinearProgram, pivot_tol: float):
        self.lp = lp
        self.pivot_tol = pivot_tol
        n = lp.num_vars
        m = len(lp.rows)
        self.n_struct = n
        self.m = m

        dense = np.zeros((m, n))
        rhs = np.zeros(m)
        is_ineq = np.zeros(m, dtype=bool)
        for r, row in enumerate(lp.rows):
            sign = -1.0 if row.sense == ">=" else 1.0
            for j, c in row.terms:
                dense[r, j] += sign * float(c)
            rhs[r] = sign * float(row.rhs)
            is_ineq[r] = row.sense != "="

        self.slack_rows = np.flatnonzero(is_ineq)
        n_slack = len(self.slack_rows)
        self.slack_of_row = {int(r): n + k for k, r in enumerate(self.slack_rows)}
        self.art_offset = n + n_slack
        N = n + n_slack + m
        self.N = N
        self.Nc = n + m

        colmap = np.empty(N, dtype=int)
        colmap[:n] = np.arange(n)
        colmap[n : n + n_slack] = n + self.slack_rows
        colmap[self.art_offset :] = n + np.arange(m)
        self.colmap = colmap

        Ac = np.zeros((m, self.Nc))
        Ac[:, :n] = dense
        Ac[np.arange(m), n + np.arange(m)] = 1.0
        self.Ac = Ac
        self.b = rhs

        lo = np.empty(N)
        hi = np.empty(N)
        lo[:n] = lp.lower
        hi[:n] = lp.upper
        # slack box from interval arithmetic: s = rhs - a.x over the variable box
        self.infeasible_by_box = False
        for k, r in enumerate(self.slack_rows):
            a = dense[r]
            row_min = np.sum(np.where(a > 0, a * lp.lower, a * lp.upper))
            s_hi = rhs[r] - row_min
            if s_hi < -FEAS_TOL:
                self.infeasible_by_box = True
            lo[n + k] = 0.0
            hi[n + k] = max(s_hi, 0.0)
        lo[self.art_offset :] = 0.0
        hi[self.art_offset :] = 0.0
        self.lo = lo
        self.hi = hi

        c = lp.objective.astype(float)
        if lp.sense == "max":
            c = -c
        self.c = np.zeros(N)
        self.c[:n] = c

        self.T = None
        self.basis = None
        self.in_basis = None
        self.at_upper = None
        self.x = None
        self.iterations = 0
        self.max_iterations = 50 * (m + N)
        self._scratch = np.empty((m, self.Nc))

    # ----- starts -------------------------------------------------------

    def cold_start(self) -> None:
        """Slack crash: structurals at lower bound, slacks absorb what they
        can, artificials pick up the leftovers and define phase 1."""
        n, m, N = self.n_struct, self.m, self.N
        self.T = self.Ac.copy()
        self.basis = np.empty(m, dtype=int)
        self.in_basis = np.zeros(N, dtype=bool)
        self.at_upper = np.zeros(N, dtype=bool)
        x = np.empty(N)
        x[:n] = self.lo[:n]
        x[n:] = 0.0

        self.phase1_cost = np.zeros(N)
        res = self.b - self.Ac[:, :n] @ x[:n]
        for r in range(m):
            art = self.art_offset + r
            slack = self.slack_of_row.get(r)
            leftover = res[r]
            if slack is not None:
                s_val = min(max(res[r], self.lo[slack]), self.hi[slack])
                leftover = res[r] - s_val
                if abs(leftover) <= FEAS_TOL:
                    self.basis[r] = slack
                    self.in_basis[slack] = True
                    x[slack] = res[r]
                    continue
                x[slack] = s_val
                self.at_upper[slack] = s_val == self.hi[slack] and self.hi[slack] > 0
            self.basis[r] = art
            self.in_basis[art] = True
            x[art] = leftover
            if leftover > FEAS_TOL:
                self.lo[art], self.hi[art] = 0.0, leftover
                self.phase1_cost[art] = 1.0
            elif leftover < -FEAS_TOL:
                self.lo[art], self.hi[art] = leftover, 0.0
                self.phase1_cost[art] = -1.0
        self.x = x

    def warm_start(self, start: LpBasis) -> bool:
        """Rebuild the tableau from a prior basis; False if unusable."""
        m, N = self.m, self.N
        basis = np.asarray(start.basis, dtype=int)
        if basis.shape != (m,) or len(start.at_upper) != N:
            return False
        if np.any(basis < 0) or np.any(basis >= N):
            return False
        B = self.Ac[:, self.colmap[basis]]
        try:
            T = np.linalg.solve(B, self.Ac)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(T)):
            return False
        self.T = T
        self.basis = basis.copy()
        self.in_basis = np.zeros(N, dtype=bool)
        self.in_basis[basis] = True
        self.at_upper = np.asarray(start.at_upper, dtype=bool).copy()

        # choose dual-feasible bound sides for nonbasics, then recompute x_B
        z = self.reduced_costs(self.c)
        free = ~self.in_basis & (self.lo < self.hi)
        self.at_upper[free & (z < -DJ_TOL)] = True
        self.at_upper[free & (z > DJ_TOL)] = False
        x = np.where(self.at_upper, self.hi, self.lo)
        x[self.in_basis] = 0.0
        self.x = x
        self.refresh_basic_values()
        return True

    # ----- shared pieces -------------------------------------------------

    def binv(self) -> np.ndarray:
        return self.T[:, self.n_struct :]

    def _row_activity(self, x: np.ndarray) -> np.ndarray:
        """A @ x over all variables (structural, slack, artificial)."""
        n = self.n_struct
        out = self.Ac[:, :n] @ x[:n]
        out[self.slack_rows] += x[n : self.art_offset]
        out += x[self.art_offset :]
        return out

    def refresh_basic_values(self, fresh: bool = False) -> None:
        """Recompute basic values from the nonbasic point.

        With fresh=True the basis matrix is refactorized, clearing any drift
        the rank-1 tableau updates accumulated."""
        xv = self.x.copy()
        xv[self.basis] = 0.0
        temp = self.b - self._row_activity(xv)
        if fresh:
            B = self.Ac[:, self.colmap[self.basis]]
            try:
                self.x[self.basis] = np.linalg.solve(B, temp)
                return
            except np.linalg.LinAlgError:
                pass
        self.x[self.basis] = self.binv() @ temp

    def reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        zc = cost[self.basis] @ self.T
        return cost - zc[self.colmap]

    def objective_value(self, cost: np.ndarray) -> float:
        return float(cost @ self.x)

    def _pivot(self, r: int, j: int) -> None:
        jc = self.colmap[j]
        col = self.T[:, jc].copy()
        piv = col[r]
        row = self.T[r] / piv
        col[r] = 0.0
        np.multiply(col[:, None], row[None, :], out=self._scratch)
        np.subtract(self.T, self._scratch, out=self.T)
        self.T[r] = row
        leave = self.basis[r]
        self.in_basis[leave] = False
        self.in_basis[j] = True
        self.basis[r] = j

    # ----- primal simplex -------------------------------------------------

    def primal(self, cost: np.ndarray) -> str:
        """Minimize cost from the current primal-feasible point."""
        degenerate_run = 0
        while True:
            if self.iterations >= self.max_iterations:
                return ITERATION_LIMIT
            z = self.reduced_costs(cost)
            open_var = ~self.in_basis & (self.lo < self.hi)
            down = open_var & ~self.at_upper & (z < -DJ_TOL)
            up = open_var & self.at_upper & (z > DJ_TOL)
            cand = np.flatnonzero(down | up)
            if len(cand) == 0:
                return OPTIMAL
            if degenerate_run >= DEGENERACY_STREAK:
                j = int(cand[0])
            else:
                sub = self.T[:, self.colmap[cand]]
                norms = np.einsum("ij,ij->j", sub, sub)
                score = z[cand] * z[cand] / (1.0 + norms)
                j = int(cand[np.argmax(score)])
            d = -1.0 if self.at_upper[j] else 1.0

            col = self.T[:, self.colmap[j]]
            delta = -d * col  # change of basic values per unit step
            xb = self.x[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                room_up = np.where(
                    delta > self.pivot_tol, (self.hi[self.basis] - xb) / delta, np.inf
                )
                room_dn = np.where(
                    delta < -self.pivot_tol, (self.lo[self.basis] - xb) / delta, np.inf
                )
            ratios = np.minimum(room_up, room_dn)
            ratios = np.maximum(ratios, 0.0)
            t_rows = float(ratios.min()) if len(ratios) else np.inf
            t_flip = self.hi[j] - self.lo[j]
            t = min(t_rows, t_flip)
            if not np.isfinite(t):
                return ITERATION_LIMIT
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if t <= 1e-12 else 0

            if t_flip < t_rows - 1e-15:
                self.x[j] = self.hi[j] if d > 0 else self.lo[j]
                self.at_upper[j] = d > 0
                self.x[self.basis] += delta * t
                continue

            limiting = np.flatnonzero(ratios <= t + 1e-15)
            if degenerate_run >= DEGENERACY_STREAK:
                r = int(limiting[np.argmin(self.basis[limiting])])
            else:
                r = int(limiting[np.argmax(np.abs(col[limiting]))])
            self.x[j] += d * t
            self.x[self.basis] += delta * t
            leave = self.basis[r]
            hit_upper = delta[r] > 0
            self.x[leave] = self.hi[leave] if hit_upper else self.lo[leave]
            self.at_upper[leave] = hit_upper
            self._pivot(r, j)

    # ----- dual simplex ----------------------------------------------------

    def dual(self, cost: np.ndarray, budget: int | None = None) -> str:
        """Restore primal feasibility from a dual-feasible basis.

        The `budget` cap guards against degenerate stalling; callers fall
        back to a cold primal solve when it trips.
        """
        if self.m == 0:
            return OPTIMAL
        limit = self.max_iterations if budget is None else min(self.max_iterations, budget)
        while True:
            if self.iterations >= limit:
                return ITERATION_LIMIT
            xb = self.x[self.basis]
            below = self.lo[self.basis] - xb
            above = xb - self.hi[self.basis]
            viol = np.maximum(below, above)
            r = int(np.argmax(viol))
            if viol[r] <= FEAS_TOL:
                return OPTIMAL
            to_lower = below[r] >= above[r]
            target = self.lo[self.basis[r]] if to_lower else self.hi[self.basis[r]]

            alpha = self.T[r][self.colmap]
            open_var = ~self.in_basis & (self.lo < self.hi)
            if to_lower:
                eligible = open_var & (
                    (~self.at_upper & (alpha < -self.pivot_tol))
                    | (self.at_upper & (alpha > self.pivot_tol))
                )
            else:
                eligible = open_var & (
                    (~self.at_upper & (alpha > self.pivot_tol))
                    | (self.at_upper & (alpha < -self.pivot_tol))
                )
            idx = np.flatnonzero(eligible)
            if len(idx) == 0:
                return INFEASIBLE
            zc = cost[self.basis] @ self.T
            z_idx = cost[idx] - zc[self.colmap[idx]]
            ratios = np.abs(z_idx) / np.abs(alpha[idx])
            best = ratios.min()
            tied = idx[ratios <= best + 1e-12]
            j = int(tied.min())

            self.iterations += 1
            step = (xb[r] - target) / alpha[j]
            self.x[self.basis] -= self.T[:, self.colmap[j]] * step
            self.x[j] += step
            leave = self.basis[r]
            self.x[leave] = target
            self.at_upper[leave] = not to_lower
            self._pivot(r, j)

    # ----- results ----------------------------------------------------------

    def snapshot_basis(self) -> LpBasis:
        return LpBasis(basis=self.basis.copy(), at_upper=self.at_upper.copy())

    def solution_values(self) -> np.ndarray:
        return self.x[: self.n_struct].copy()

    def farkas_certificate(self) -> np.ndarray:
        return self.phase1_cost[self.basis] @ self.binv()


def solve_lp(
    lp: LinearProgram,
    warm: LpBasis | None = None,
    pivot_tol: float = PIVOT_TOL,
) -> LpSolution:
    """Solve a bounded-variable LP.

    With `warm`, the previous basis is refactorized against the (possibly
    re-coefficiented) rows and repaired with the dual simplex; any failure
    falls back to a cold two-phase solve. Optimality means every row and
    bound holds within 1e-9 and the final basis is dual feasible.
    """
    tab = _Tableau(lp, pivot_tol)
    if tab.infeasible_by_box:
        return LpSolution(status=INFEASIBLE, values=None, objective=None)

    if warm is not None and tab.m > 0 and tab.warm_start(warm):
        # short leash: a stalling dual repair is slower than a cold solve
        status = tab.dual(tab.c, budget=200)
        if status == OPTIMAL:
            status = tab.primal(tab.c)
        if status == INFEASIBLE:
            return LpSolution(
                status=INFEASIBLE, values=None, objective=None, iterations=tab.iterations
            )
        if status == OPTIMAL:
            sol = _finish(tab, lp)
            if sol.status == OPTIMAL:
                return sol
        # degenerate stalling or failed validation: redo cold from scratch
        tab = _Tableau(lp, pivot_tol)
    tab.cold_start()
    need_phase1 = bool(np.any(tab.phase1_cost != 0.0))
    if need_phase1:
        status = tab.primal(tab.phase1_cost)
        if status != OPTIMAL:
            return LpSolution(
                status=status, values=None, objective=None, iterations=tab.iterations
            )
        infeas = tab.objective_value(tab.phase1_cost)
        if infeas > 1e-8:
            return LpSolution(
                status=INFEASIBLE,
                values=None,
                objective=None,
                certificate=tab.farkas_certificate(),
                iterations=tab.iterations,
            )
        art = slice(tab.art_offset, tab.N)
        tab.lo[art] = 0.0
        tab.hi[art] = 0.0
        tab.x[art] = np.where(np.abs(tab.x[art]) <= 1e-8, 0.0, tab.x[art])
        tab.refresh_basic_values()
    status = tab.primal(tab.c)
    if status != OPTIMAL:
        return LpSolution(status=status, values=None, objective=None, iterations=tab.iterations)
    return _finish(tab, lp)


def _finish(tab: _Tableau, lp: LinearProgram, allow_repair: bool = True) -> LpSolution:
    tab.refresh_basic_values(fresh=True)
    worst = float(np.max(np.abs(tab._row_activity(tab.x) - tab.b), initial=0.0))
    bound_violation = float(
        max(np.max(tab.lo - tab.x, initial=0.0), np.max(tab.x - tab.hi, initial=0.0))
    )
    if worst <= FEAS_TOL and bound_violation <= FEAS_TOL:
        values = tab.solution_values()
        return LpSolution(
            status=OPTIMAL,
            values=values,
            objective=float(lp.objective @ values),
            basis=tab.snapshot_basis(),
            iterations=tab.iterations,
        )
    if allow_repair:
        # rank-1 updates drifted; refactorize from the final basis and let a
        # fresh dual/primal pass repair the true basic solution
        fresh = _Tableau(lp, tab.pivot_tol)
        if fresh.warm_start(tab.snapshot_basis()):
            status = fresh.dual(fresh.c, budget=2000)
            if status == OPTIMAL:
                status = fresh.primal(fresh.c)
            if status == OPTIMAL:
                return _finish(fresh, lp, allow_repair=False)
    return LpSolution(
        status=ITERATION_LIMIT, values=None, objective=None, iterations=tab.iterations
    )
