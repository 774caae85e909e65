"""Convex QP solver: penalized projected gradient plus a KKT polish.

The instances this solves are small ("desk scale") and come mostly from the
feasibility-repair phase: diagonal or dense PSD quadratic, box bounds,
general linear rows, and at most one Euclidean ball row over a subset of the
coordinates.

Strategy
--------
1.  Projected gradient on the merit function ``objective + rho * ||row
    violations||^2`` with backtracking line search and a diagonal
    preconditioner, ramping ``rho`` over a short schedule.  Box bounds are
    projected exactly; the ball row is enforced by radially scaling the
    iterate toward the ball center in the scaled metric.  The radial scaling
    is an approximation (the true projection onto box-and-ball jointly is
    harder), which is acceptable here and corrected by the polish.
2.  An active-set KKT polish: from the near-active set of the projected
    gradient point, repeatedly solve the equality-constrained QP, adding
    violated constraints and dropping ones with negative multipliers.  A ball
    row that is active contributes a multiplier found by bisection on its
    radius residual.  The polish is what reaches tight stationarity.

The merit trace recorded on the result covers the final penalty weight and is
non-increasing; the polish step is allowed to move the objective only within
a small, explicitly checked bound.
"""

import numpy as np

from .model import QpInstance, QpResult, SolveStatus

STATIONARITY_TOL = 1e-8
FEASIBILITY_TOL = 1e-8
PENALTY_SCHEDULE = (1e2, 1e4, 1e6, 1e8)
POLISH_OBJECTIVE_SLACK = 1e-6  # how much the polish may raise the objective
_ACTIVE_ATOL = 1e-7


def solve_qp(
    instance: QpInstance,
    *,
    x0: np.ndarray | None = None,
    max_iters: int = 4000,
) -> QpResult:
    """Minimize a convex QP over box, linear, and optional ball constraints.

    Returns a :class:`QpResult`; status ``OPTIMAL`` means the iterate is
    feasible to ``FEASIBILITY_TOL`` and stationary to ``STATIONARITY_TOL``
    (both scaled), otherwise ``ITERATION_LIMIT`` with the best iterate found.
    """
    n = instance.n_vars
    if n == 0:
        return QpResult(
            status=SolveStatus.OPTIMAL,
            x=np.zeros(0),
            objective=float(instance.c0),
            stationarity=0.0,
        )
    scale = 1.0 + float(np.max(np.abs(instance.c), initial=0.0))

    x = _initial_point(instance, x0)
    trace: list[float] = []
    iterations = 0
    for rho in PENALTY_SCHEDULE:
        last = rho == PENALTY_SCHEDULE[-1]
        x, used = _projected_gradient(
            instance,
            x,
            rho,
            max_iters=max_iters // len(PENALTY_SCHEDULE),
            trace=trace if last else None,
        )
        iterations += used
        if float(np.max(np.abs(x))) > 1e12 * scale:
            return QpResult(
                status=SolveStatus.UNBOUNDED, x=x, iterations=iterations
            )

    polished, stationarity = _polish(instance, x)
    if polished is not None:
        obj_pg = instance.objective(x)
        obj_polish = instance.objective(polished)
        viol_pg = instance.max_violation(x)
        viol_polish = instance.max_violation(polished)
        # Feasibility first: against an infeasible gradient point the polish
        # wins outright; against a feasible one it may only move the
        # objective within the documented slack.
        if viol_polish <= FEASIBILITY_TOL * scale and (
            viol_pg > FEASIBILITY_TOL * scale
            or obj_polish <= obj_pg + POLISH_OBJECTIVE_SLACK * scale
        ):
            x = polished
        else:
            stationarity = np.inf
    else:
        stationarity = np.inf
    if not np.isfinite(stationarity):
        stationarity = _projected_residual(instance, x)

    feasible = instance.max_violation(x) <= FEASIBILITY_TOL * scale
    status = (
        SolveStatus.OPTIMAL
        if feasible and stationarity <= STATIONARITY_TOL * scale
        else SolveStatus.ITERATION_LIMIT
    )
    return QpResult(
        status=status,
        x=x,
        objective=instance.objective(x),
        iterations=iterations,
        stationarity=float(stationarity),
        merit_trace=trace,
    )


def _initial_point(instance, x0):
    if x0 is not None:
        x = np.asarray(x0, dtype=float).copy()
    else:
        x = np.zeros(instance.n_vars)
    x = np.clip(x, instance.lb, instance.ub)
    return _ball_scale(instance, x)


def _clip_feasible(instance, x):
    return _ball_scale(instance, np.clip(x, instance.lb, instance.ub))


def _ball_scale(instance, x):
    """Pull ``x`` radially toward the ball center until it is inside."""
    if instance.ball_index is None or not np.isfinite(instance.ball_radius):
        return x
    idx = instance.ball_index
    d = instance.ball_scale * (x[idx] - instance.ball_center)
    norm = float(np.sqrt(d @ d))
    if norm <= instance.ball_radius or norm == 0.0:
        return x
    x = x.copy()
    shrink = instance.ball_radius / norm
    x[idx] = instance.ball_center + (x[idx] - instance.ball_center) * shrink
    return x


def _row_excess(instance, activity):
    """Signed distance of each row activity beyond its nearest bound."""
    mid = np.clip(activity, instance.row_lb, instance.row_ub)
    return activity - mid


def _projected_gradient(instance, x, rho, *, max_iters, trace):
    A = instance.A
    m = instance.A.shape[0]

    def merit(z):
        value = instance.objective(z)
        if m:
            e = _row_excess(instance, A @ z)
            value += rho * float(e @ e)
        return value

    # Diagonal preconditioner: objective curvature plus penalty curvature.
    if instance.q.ndim == 2:
        hdiag = 2.0 * np.diag(instance.q).copy()
    else:
        hdiag = 2.0 * instance.q.copy()
    if m:
        hdiag = hdiag + 2.0 * rho * np.einsum("ij,ij->j", A, A)
    precond = 1.0 / np.maximum(hdiag, 1e-12)

    f = merit(x)
    if trace is not None:
        trace.append(f)
    t = 1.0
    used = 0
    for _ in range(max_iters):
        used += 1
        grad = instance.c + instance.quad_product(x)
        if m:
            e = _row_excess(instance, A @ x)
            grad = grad + 2.0 * rho * (A.T @ e)
        step_dir = precond * grad
        accepted = False
        for _try in range(40):
            cand = _clip_feasible(instance, x - t * step_dir)
            move = cand - x
            decrease = 1e-4 * float(move @ move) / max(t, 1e-300)
            f_cand = merit(cand)
            if f_cand <= f - decrease:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        step_norm = float(np.max(np.abs(cand - x)))
        x, f = cand, f_cand
        if trace is not None:
            trace.append(f)
        t = min(t * 1.3, 1e6)
        if step_norm <= 1e-12 * (1.0 + float(np.max(np.abs(x)))):
            break
    return x, used


def _projected_residual(instance, x):
    """Box-projected gradient residual with a best-effort ball multiplier.

    Radial scaling must not enter here: scaling a step back onto the ball can
    cancel a genuinely nonzero gradient and fake stationarity.  Instead, when
    the ball is (near) active, fit the single ball multiplier by least
    squares on its gradient ray and measure what remains.
    """
    grad = instance.c + instance.quad_product(x)
    if (
        instance.ball_index is not None
        and np.isfinite(instance.ball_radius)
        and _ball_gap(instance, x) >= -1e-9 * (1.0 + instance.ball_radius)
    ):
        idx = instance.ball_index
        u = 2.0 * instance.ball_scale**2 * (x[idx] - instance.ball_center)
        uu = float(u @ u)
        if uu > 0.0:
            sigma = max(0.0, -float(grad[idx] @ u) / uu)
            grad = grad.copy()
            grad[idx] += sigma * u
    probe = np.clip(x - grad, instance.lb, instance.ub)
    return float(np.max(np.abs(probe - x), initial=0.0))


class _WorkingSet:
    """Rows of the equality system the polish currently pins.

    Each entry is (vector, value, sign_fixed): ``vector . x = value``.  The
    vector is oriented so that a legitimate multiplier is nonnegative unless
    ``sign_fixed`` is False (true equalities, fixed variables).
    """

    def __init__(self):
        self.vectors: list[np.ndarray] = []
        self.values: list[float] = []
        self.free_sign: list[bool] = []
        self.keys: list[tuple] = []

    def add(self, key, vector, value, free_sign):
        if key in self.keys:
            return False
        self.keys.append(key)
        self.vectors.append(vector)
        self.values.append(value)
        self.free_sign.append(free_sign)
        return True

    def drop(self, position):
        for bag in (self.keys, self.vectors, self.values, self.free_sign):
            del bag[position]

    def matrices(self, n):
        if not self.vectors:
            return np.zeros((0, n)), np.zeros(0)
        return np.array(self.vectors), np.array(self.values)


def _polish(instance, x_start):
    """Active-set refinement.  Returns (x, stationarity) or (None, inf)."""
    n = instance.n_vars
    A, row_lb, row_ub = instance.A, instance.row_lb, instance.row_ub
    lb, ub = instance.lb, instance.ub
    scale = 1.0 + float(np.max(np.abs(instance.c), initial=0.0))

    work = _WorkingSet()
    unit = np.eye(n)
    for j in range(n):  # fixed variables stay pinned throughout
        if ub[j] - lb[j] <= 1e-14:
            work.add(("fix", j), unit[j], lb[j], True)
    for i in range(A.shape[0]):
        if row_ub[i] - row_lb[i] <= 1e-14:
            work.add(("eqrow", i), A[i], row_lb[i], True)

    x = x_start
    activity = A @ x if A.shape[0] else np.zeros(0)
    for i in range(A.shape[0]):
        if ("eqrow", i) in work.keys:
            continue
        atol = _ACTIVE_ATOL * (1.0 + abs(row_ub[i]) + abs(row_lb[i])) * scale
        if np.isfinite(row_ub[i]) and activity[i] >= row_ub[i] - atol:
            work.add(("rowub", i), A[i], row_ub[i], False)
        elif np.isfinite(row_lb[i]) and activity[i] <= row_lb[i] + atol:
            work.add(("rowlb", i), -A[i], -row_lb[i], False)
    for j in range(n):
        if ("fix", j) in work.keys:
            continue
        atol = _ACTIVE_ATOL * (1.0 + abs(x[j])) * scale
        if np.isfinite(ub[j]) and x[j] >= ub[j] - atol:
            work.add(("varub", j), unit[j], ub[j], False)
        elif np.isfinite(lb[j]) and x[j] <= lb[j] + atol:
            work.add(("varlb", j), -unit[j], -lb[j], False)

    ball_on = (
        instance.ball_index is not None
        and np.isfinite(instance.ball_radius)
        and _ball_gap(instance, x) >= -1e-7 * scale
    )

    best = None
    max_rounds = 4 * (n + A.shape[0]) + 20
    for _ in range(max_rounds):
        solved = _kkt_with_ball(instance, work, ball_on)
        if solved is None:
            return best if best is not None else (None, np.inf)
        x, multipliers, sigma = solved

        # Most violated constraint not in the working set?
        worst_key, worst_gap = None, FEASIBILITY_TOL * scale
        activity = A @ x if A.shape[0] else np.zeros(0)
        for i in range(A.shape[0]):
            if ("eqrow", i) in work.keys:
                continue
            if ("rowub", i) not in work.keys and activity[i] - row_ub[i] > worst_gap:
                worst_key, worst_gap = ("rowub", i), activity[i] - row_ub[i]
            if ("rowlb", i) not in work.keys and row_lb[i] - activity[i] > worst_gap:
                worst_key, worst_gap = ("rowlb", i), row_lb[i] - activity[i]
        for j in range(n):
            if ("fix", j) in work.keys:
                continue
            if ("varub", j) not in work.keys and x[j] - ub[j] > worst_gap:
                worst_key, worst_gap = ("varub", j), x[j] - ub[j]
            if ("varlb", j) not in work.keys and lb[j] - x[j] > worst_gap:
                worst_key, worst_gap = ("varlb", j), lb[j] - x[j]
        ball_gap = _ball_gap(instance, x)
        if not ball_on and ball_gap > worst_gap:
            worst_key = ("ball",)
            worst_gap = ball_gap
        if worst_key is not None:
            if worst_key == ("ball",):
                ball_on = True
            else:
                kind, i = worst_key
                if kind == "rowub":
                    work.add(worst_key, A[i], row_ub[i], False)
                elif kind == "rowlb":
                    work.add(worst_key, -A[i], -row_lb[i], False)
                elif kind == "varub":
                    work.add(worst_key, unit[i], ub[i], False)
                else:
                    work.add(worst_key, -unit[i], -lb[i], False)
            continue

        # Feasible: remember it, then check multiplier signs.
        stat = _stationarity(instance, work, x, multipliers, sigma)
        if best is None or stat < best[1]:
            best = (x, stat)
        drop_pos, drop_val = None, -1e-9 * scale
        for pos, free in enumerate(work.free_sign):
            if free:
                continue
            if multipliers[pos] < drop_val:
                drop_pos, drop_val = pos, multipliers[pos]
        if drop_pos is None:
            return x, stat
        work.drop(drop_pos)
    return best if best is not None else (None, np.inf)


def _ball_gap(instance, x):
    """Signed ball residual: positive means outside."""
    if instance.ball_index is None or not np.isfinite(instance.ball_radius):
        return -np.inf
    d = instance.ball_scale * (x[instance.ball_index] - instance.ball_center)
    return float(np.sqrt(d @ d) - instance.ball_radius)


def _kkt_with_ball(instance, work, ball_on):
    """Solve the working-set equality QP, searching the ball multiplier."""
    n = instance.n_vars

    if not ball_on or instance.ball_index is None or not np.isfinite(
        instance.ball_radius
    ):
        out = _kkt_solve(instance, work, 0.0)
        if out is None:
            return None
        x, multipliers = out
        return x, multipliers, 0.0

    def residual(sigma):
        out = _kkt_solve(instance, work, sigma)
        if out is None:
            return None
        return _ball_gap(instance, out[0]), out

    probe = residual(0.0)
    if probe is not None:
        gap0, out0 = probe
        if gap0 <= 1e-12:
            x, multipliers = out0
            return x, multipliers, 0.0
    # Either the unconstrained-ball solve sits outside the ball or the KKT
    # system has no stationary point without ball curvature; both mean the
    # ball is binding, so search its multiplier.
    lo, hi = 0.0, 1.0
    out_hi = None
    for _ in range(120):
        probe = residual(hi)
        if probe is None:
            return None
        gap, out_hi = probe
        if gap <= 0.0:
            break
        lo, hi = hi, hi * 4.0
    else:
        return None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        probe = residual(mid)
        if probe is None:
            return None
        gap, out_mid = probe
        if gap > 0.0:
            lo = mid
        else:
            hi, out_hi = mid, out_mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    x, multipliers = out_hi
    return x, multipliers, hi


def _kkt_solve(instance, work, sigma):
    """Equality-constrained QP via the KKT system; lstsq on singularity."""
    n = instance.n_vars
    E, t = work.matrices(n)
    k = E.shape[0]
    if instance.q.ndim == 2:
        H = 2.0 * instance.q.copy()
    else:
        H = np.diag(2.0 * instance.q)
    c_eff = instance.c.copy()
    if sigma > 0.0 and instance.ball_index is not None:
        idx = instance.ball_index
        s2 = instance.ball_scale**2
        H[idx, idx] += 2.0 * sigma * s2
        c_eff[idx] -= 2.0 * sigma * s2 * instance.ball_center
    M = np.zeros((n + k, n + k))
    M[:n, :n] = H
    if k:
        M[:n, n:] = E.T
        M[n:, :n] = E
    rhs = np.concatenate([-c_eff, t])
    try:
        sol = np.linalg.solve(M, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if not np.all(np.isfinite(sol)):
            return None
    # A least-squares pseudo-solution of an inconsistent KKT system is not a
    # stationary point at all; reject it so the caller can react.
    residual = float(np.max(np.abs(M @ sol - rhs), initial=0.0))
    if residual > 1e-7 * (1.0 + float(np.max(np.abs(rhs), initial=0.0))):
        return None
    return sol[:n], sol[n:]


def _stationarity(instance, work, x, multipliers, sigma):
    """Scaled infinity norm of the KKT stationarity residual."""
    n = instance.n_vars
    grad = instance.c + instance.quad_product(x)
    if sigma > 0.0 and instance.ball_index is not None:
        idx = instance.ball_index
        s2 = instance.ball_scale**2
        grad[idx] += 2.0 * sigma * s2 * (x[idx] - instance.ball_center)
    E, _ = work.matrices(n)
    if E.shape[0]:
        grad = grad + E.T @ multipliers
    return float(np.max(np.abs(grad), initial=0.0))
