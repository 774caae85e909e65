"""Dense bounded-variable primal simplex.

Rows ``row_lb <= a·x <= row_ub`` get one slack column each (``a·x - s = 0``
with ``s`` carrying the row bounds), so the working system is
``[A, -I]·(x, s) = 0`` with every column boxed (possibly at infinity).
Phase 1 drives the summed bound violations of the basic variables to zero
with the usual composite piecewise-linear costs; phase 2 prices the true
objective.  Dantzig pricing by default, switching permanently to Bland's
rule after a run of degenerate pivots so cycling cannot occur.

Everything is dense numpy: the basis inverse is maintained explicitly with
rank-one updates and refreshed periodically.  Intended scale is a few
hundred to ~1000 rows.
"""

from __future__ import annotations

import numpy as np

from .model import LpInstance, LpResult, SolveStatus

__all__ = ["solve_lp"]

FEAS_TOL = 1e-9
COST_TOL = 1e-9
PIVOT_TOL = 1e-11
REFRESH_EVERY = 64


def solve_lp(instance, basis=None, max_iters=None):
    """Solve an :class:`LpInstance`.

    Parameters
    ----------
    instance : LpInstance
    basis : list of int, optional
        Warm-start basis (column indices into the ``(x, s)`` ordering).  An
        unusable basis silently falls back to the all-slack basis.
    max_iters : int, optional
        Pivot budget; exceeded budget reports ``ITERATION_LIMIT``.

    Returns
    -------
    LpResult
        With an optimal *basic* solution, row duals, and reduced costs when
        status is OPTIMAL.
    """
    sx = _Simplex(instance, basis=basis, max_iters=max_iters)
    return sx.solve()


class _Simplex:
    def __init__(self, instance, basis=None, max_iters=None):
        self.inst = instance
        n, m = instance.n_vars, instance.n_rows
        self.n = n
        self.m = m
        self.N = n + m
        self.Ahat = np.hstack([instance.A, -np.eye(m)]) if m else np.zeros((0, n))
        self.lo = np.concatenate([instance.lb, instance.row_lb])
        self.hi = np.concatenate([instance.ub, instance.row_ub])
        self.cost = np.concatenate([instance.c, np.zeros(m)])
        self.max_iters = (
            int(max_iters) if max_iters is not None else max(1000, 40 * (n + m))
        )
        self.iterations = 0
        self.bland = False
        self._degenerate_run = 0
        self._bland_trigger = max(40, 2 * m)
        self.values = np.zeros(self.N)
        self._init_basis(basis)

    # -- setup ---------------------------------------------------------

    def _init_basis(self, basis):
        m, n, N = self.m, self.n, self.N
        use_slack = True
        if basis is not None and len(basis) == m:
            cols = list(dict.fromkeys(int(j) for j in basis))
            if len(cols) == m and all(0 <= j < N for j in cols):
                B = self.Ahat[:, cols]
                try:
                    Binv = np.linalg.inv(B)
                    if np.all(np.isfinite(Binv)):
                        self.basis = np.array(cols, dtype=int)
                        self.Binv = Binv
                        use_slack = False
                except np.linalg.LinAlgError:
                    pass
        if use_slack:
            self.basis = np.arange(n, N, dtype=int)
            self.Binv = -np.eye(m)
        self.in_basis = np.zeros(N, dtype=bool)
        self.in_basis[self.basis] = True
        for j in range(N):
            if not self.in_basis[j]:
                self.values[j] = self._resting_value(j)
        self._recompute_basics()

    def _resting_value(self, j):
        lo, hi = self.lo[j], self.hi[j]
        if np.isfinite(lo) and np.isfinite(hi):
            return lo if abs(lo) <= abs(hi) else hi
        if np.isfinite(lo):
            return lo
        if np.isfinite(hi):
            return hi
        return 0.0

    def _recompute_basics(self):
        if self.m == 0:
            return
        nonbasic = ~self.in_basis
        rhs = -(self.Ahat[:, nonbasic] @ self.values[nonbasic])
        self.values[self.basis] = self.Binv @ rhs

    def _refresh(self):
        if self.m == 0:
            return
        try:
            self.Binv = np.linalg.inv(self.Ahat[:, self.basis])
        except np.linalg.LinAlgError:
            # fall back to least-squares pseudo-inverse; extremely rare
            self.Binv = np.linalg.pinv(self.Ahat[:, self.basis])
        self._recompute_basics()

    # -- feasibility bookkeeping -----------------------------------------

    def _basic_violations(self):
        vb = self.values[self.basis]
        below = np.maximum(self.lo[self.basis] - vb, 0.0)
        above = np.maximum(vb - self.hi[self.basis], 0.0)
        return below, above

    def _infeasibility(self):
        below, above = self._basic_violations()
        return float(below.sum() + above.sum())

    # -- pricing --------------------------------------------------------

    def _reduced_costs(self, c_basic, c_full):
        if self.m:
            y = c_basic @ self.Binv
            d = c_full - y @ self.Ahat
        else:
            y = np.zeros(0)
            d = c_full.copy()
        return y, d

    def _entering(self, d):
        """Pick the entering column and its direction (+1/-1), or None."""
        nonbasic = ~self.in_basis
        fixed = self.hi - self.lo <= 1e-14
        at_lo = nonbasic & ~fixed & (self.values <= self.lo + 1e-12)
        at_hi = nonbasic & ~fixed & (self.values >= self.hi - 1e-12)
        free = nonbasic & ~np.isfinite(self.lo) & ~np.isfinite(self.hi)
        score = np.zeros(self.N)
        score[at_lo] = np.maximum(-d[at_lo], 0.0)
        score[at_hi] = np.maximum(d[at_hi], 0.0)
        score[free] = np.abs(d[free])
        if self.bland:
            eligible = np.nonzero(score > COST_TOL)[0]
            if eligible.size == 0:
                return None, 0
            e = int(eligible[0])
        else:
            e = int(np.argmax(score))
            if score[e] <= COST_TOL:
                return None, 0
        if free[e]:
            direction = 1 if d[e] < 0 else -1
        elif at_hi[e]:
            direction = -1
        else:
            direction = 1
        return e, direction

    # -- ratio test -------------------------------------------------------

    def _ratio_test(self, e, direction, phase1):
        """Return (step, leaving_row, leaving_bound). leaving_row None means
        a bound flip of the entering column; step may be inf (unbounded)."""
        span = self.hi[e] - self.lo[e]
        flip_step = span if np.isfinite(span) else np.inf
        if self.m == 0:
            return (flip_step, None, 0.0) if np.isfinite(flip_step) else (
                np.inf,
                None,
                0.0,
            )
        w = self.Binv @ self.Ahat[:, e]
        delta = -direction * w  # basic value change per unit of entering
        vb = self.values[self.basis]
        lob = self.lo[self.basis]
        hib = self.hi[self.basis]
        up = delta > PIVOT_TOL
        down = delta < -PIVOT_TOL
        if phase1:
            above = vb > hib + FEAS_TOL
            below = vb < lob - FEAS_TOL
            feas = ~above & ~below
            cond_hi = (above & down) | (feas & up & np.isfinite(hib))
            cond_lo = (below & up) | (feas & down & np.isfinite(lob))
        else:
            cond_hi = up & np.isfinite(hib)
            cond_lo = down & np.isfinite(lob)
        safe = np.where(np.abs(delta) > PIVOT_TOL, delta, 1.0)
        limits = np.where(
            cond_hi, (hib - vb) / safe, np.where(cond_lo, (lob - vb) / safe, np.inf)
        )
        limits = np.maximum(limits, 0.0)  # drift can push a basic past a bound
        bounds_hit = np.where(cond_hi, hib, np.where(cond_lo, lob, 0.0))
        i_min = int(np.argmin(limits))
        row_step = limits[i_min]
        if self.bland and np.isfinite(row_step):
            tied = np.nonzero(limits <= row_step + 1e-12)[0]
            i_min = int(tied[np.argmin(self.basis[tied])])
            row_step = limits[i_min]
        if flip_step < row_step - 1e-12:
            return float(flip_step), None, 0.0
        if not np.isfinite(row_step):
            if np.isfinite(flip_step):
                return float(flip_step), None, 0.0
            return np.inf, None, 0.0
        return float(row_step), i_min, float(bounds_hit[i_min])

    def _apply_step(self, e, direction, step, leaving_row, leaving_bound):
        if self.m:
            w = self.Binv @ self.Ahat[:, e]
            self.values[self.basis] += -direction * w * step
        self.values[e] += direction * step
        if leaving_row is None:
            return  # bound flip, basis unchanged
        leaving_col = self.basis[leaving_row]
        self.values[leaving_col] = leaving_bound
        # pivot: update basis and the explicit inverse
        wr = w[leaving_row]
        if abs(wr) < PIVOT_TOL:
            # numerically bad pivot; rebuild from scratch after swapping
            self.basis[leaving_row] = e
            self.in_basis[leaving_col] = False
            self.in_basis[e] = True
            self._refresh()
            return
        br = self.Binv[leaving_row] / wr
        self.Binv -= np.outer(w, br)
        self.Binv[leaving_row] = br
        self.basis[leaving_row] = e
        self.in_basis[leaving_col] = False
        self.in_basis[e] = True

    # -- phases -----------------------------------------------------------

    def _phase1(self):
        while True:
            infeas = self._infeasibility()
            if infeas <= FEAS_TOL * (1 + self.m):
                return SolveStatus.OPTIMAL
            if self.iterations >= self.max_iters:
                return SolveStatus.ITERATION_LIMIT
            below, above = self._basic_violations()
            c_basic = np.where(above > 0, 1.0, np.where(below > 0, -1.0, 0.0))
            _, d = self._reduced_costs(c_basic, np.zeros(self.N))
            # nonbasic phase-1 costs are zero; d already reflects -y·Ahat
            e, direction = self._entering(d)
            if e is None:
                return SolveStatus.INFEASIBLE
            step, row, bound = self._ratio_test(e, direction, phase1=True)
            if not np.isfinite(step):
                # total infeasibility strictly decreases along this ray; a
                # blocking bound must exist, so this is numerical noise
                return SolveStatus.INFEASIBLE
            self._bookkeep_step(step)
            self._apply_step(e, direction, step, row, bound)
            self.iterations += 1
            if self.iterations % REFRESH_EVERY == 0:
                self._refresh()

    def _phase2(self):
        while True:
            if self.iterations >= self.max_iters:
                return SolveStatus.ITERATION_LIMIT
            _, d = self._reduced_costs(self.cost[self.basis], self.cost)
            e, direction = self._entering(d)
            if e is None:
                return SolveStatus.OPTIMAL
            step, row, bound = self._ratio_test(e, direction, phase1=False)
            if not np.isfinite(step):
                return SolveStatus.UNBOUNDED
            self._bookkeep_step(step)
            self._apply_step(e, direction, step, row, bound)
            self.iterations += 1
            if self.iterations % REFRESH_EVERY == 0:
                self._refresh()
            if self._infeasibility() > 1e-6 * (1 + self.m):
                # numerical drift: restore feasibility before continuing
                self._refresh()
                status = self._phase1()
                if status is not SolveStatus.OPTIMAL:
                    return status

    def _bookkeep_step(self, step):
        if step <= 1e-12:
            self._degenerate_run += 1
            if self._degenerate_run >= self._bland_trigger:
                self.bland = True
        else:
            self._degenerate_run = 0

    # -- driver -----------------------------------------------------------

    def solve(self):
        status = self._phase1()
        if status is SolveStatus.OPTIMAL:
            status = self._phase2()
            if status is SolveStatus.OPTIMAL:
                self._refresh()
                # confirm optimality after the refresh; resume if it broke
                if self._infeasibility() > FEAS_TOL * (1 + self.m):
                    status = self._phase1()
                    if status is SolveStatus.OPTIMAL:
                        status = self._phase2()
                else:
                    _, d = self._reduced_costs(self.cost[self.basis], self.cost)
                    e, _ = self._entering(d)
                    if e is not None:
                        status = self._phase2()
        return self._result(status)

    def _result(self, status):
        inst = self.inst
        if status in (SolveStatus.OPTIMAL, SolveStatus.ITERATION_LIMIT):
            x = self.values[: self.n].copy()
            y, d = self._reduced_costs(self.cost[self.basis], self.cost)
            duals = y.copy() if self.m else np.zeros(0)
            return LpResult(
                status=status,
                x=x,
                objective=float(inst.c @ x + inst.c0),
                duals=duals,
                reduced_costs=d[: self.n].copy(),
                basis=[int(j) for j in self.basis],
                iterations=self.iterations,
            )
        return LpResult(status=status, iterations=self.iterations)
