"""Projected-gradient repair of MILP incumbents against the true constraints.

The MILP stage optimizes over tree surrogates, so its incumbent usually sits
slightly off the true nonlinear feasible set.  This module walks it back:
each iterate linearizes every nonlinear constraint at the current point
(forward-mode AD, finite differences for black boxes) and solves a small QP
for a step ``d``:

* descent mode, when every constraint is feasible to tolerance ``phi``:
  minimize ``grad_f . d`` plus quadratic penalties on the relaxation
  variables, inside a shrinking normalized step ball of squared radius
  ``alpha * exp(-r t / T)``;
* projection mode, when anything is violated beyond ``phi``: the ball is
  dropped and a step penalty ``beta * ||d / range||^2`` is added, which
  approximates the closest feasible projection.

Inequalities that hold strictly enter unrelaxed; ones at or below zero get
a penalized slack ``lambda >= 0``; equalities always carry a two-sided
slack ``mu >= 0``.  The problem's own linear rows and boxes are enforced
exactly in every subproblem, and integer coordinates stay frozen at their
incumbent values.  The loop stops once two consecutive iterates are
feasible and the objective improvement drops below ``epsilon``, or at the
iteration cap; the best feasible iterate seen (the start included) wins.

Evaluation failures (a log just outside its domain, say) are treated as a
violation with a large synthetic value, which forces projection mode and
steers subsequent iterates away from the singular region.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .autodiff import gradient
from .backend import QpInstance, solve_qp
from .exceptions import DomainError
from .problem import SENSE_EQ, StandardFormProblem

__all__ = [
    "PgdParams",
    "PgdState",
    "PgdResult",
    "LinearizedConstraint",
    "variable_ranges",
    "linearize",
    "descent_step",
    "project_step",
    "repair",
    "write_trace_csv",
]

#: Synthetic constraint magnitude reported when evaluation fails outright.
SYNTHETIC_VIOLATION = 1e10

_EVAL_ERRORS = (
    DomainError,
    ValueError,
    ZeroDivisionError,
    OverflowError,
    FloatingPointError,
)


@dataclass(frozen=True)
class PgdParams:
    """Tuning knobs of the repair loop (all applied to 0-1 normalized
    quantities where a range is available).

    gamma    -- infeasibility penalty on the relaxation variables
    beta     -- step penalty in projection mode
    alpha    -- step size: squared normalized step radius at t = 0
    decay    -- exponential decay rate r of the step radius
    max_iters-- iteration cap T
    epsilon  -- absolute objective-improvement tolerance
    phi      -- constraint tightness tolerance
    """

    gamma: float = 1e6
    beta: float = 1e4
    alpha: float = 1e-3
    decay: float = 2.0
    max_iters: int = 100
    epsilon: float = 1e-4
    phi: float = 1e-8

    def __post_init__(self):
        for name in ("gamma", "beta", "alpha", "decay", "epsilon", "phi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class LinearizedConstraint:
    """A first-order model ``gradient . d + value`` of one constraint at
    the current iterate, plus how it enters the step QP.

    ``relaxed`` marks rows that carry a penalized slack (lambda for
    inequalities at or below zero, mu for every equality).  ``synthetic``
    marks failed evaluations; their gradient is zero and they only force
    projection mode.
    """

    name: str
    equality: bool
    value: float
    gradient: np.ndarray
    relaxed: bool
    synthetic: bool = False

    def violation(self):
        if self.equality:
            return abs(self.value)
        return max(0.0, -self.value)


@dataclass
class PgdState:
    """One iterate of the repair loop and everything linearized there."""

    x: np.ndarray
    objective: float
    constraints: list
    t: int = 0
    lambdas: np.ndarray | None = None
    mus: np.ndarray | None = None

    def max_violation(self):
        result = 0.0
        for con in self.constraints:
            result = max(result, con.violation())
        return result

    def feasible(self, tol):
        return all(c.violation() <= tol for c in self.constraints)


@dataclass
class PgdResult:
    """Outcome of ``repair``: the best iterate and the full trace."""

    x: np.ndarray
    objective: float
    feasible: bool
    max_violation: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def variable_ranges(problem):
    """Per-variable spans ``ub - lb``; a variable without a finite span
    borrows the widest one available (max ub minus min lb over the finite
    bounds, 1.0 when there are none)."""
    lo = problem.lower_bounds()
    hi = problem.upper_bounds()
    spans = hi - lo
    usable = np.isfinite(spans) & (spans > 0)
    finite_hi = hi[np.isfinite(hi)]
    finite_lo = lo[np.isfinite(lo)]
    if finite_hi.size and finite_lo.size:
        fallback = float(finite_hi.max() - finite_lo.min())
        if not np.isfinite(fallback) or fallback <= 0:
            fallback = 1.0
    else:
        fallback = 1.0
    return np.where(usable, spans, fallback)


def _box(problem):
    return problem.lower_bounds(), problem.upper_bounds()


def linearize(con, x, phi, n_vars=None, box=None):
    """Evaluate and differentiate one nonlinear constraint at ``x``.

    Returns a LinearizedConstraint; the gradient lives in the full variable
    space.  A failed evaluation yields a synthetic violation (zero
    gradient), a failed gradient only zeroes the gradient.
    """
    n = len(x) if n_vars is None else n_vars
    grad = np.zeros(n)
    synthetic = False
    try:
        value = con(np.asarray(x, dtype=float))
        if not np.isfinite(value):
            raise DomainError(f"constraint {con.name} evaluated non-finite")
    except _EVAL_ERRORS:
        value = (SYNTHETIC_VIOLATION if con.sense == SENSE_EQ
                 else -SYNTHETIC_VIOLATION)
        synthetic = True
    if not synthetic:
        try:
            result = gradient(con.body, x, wrt=con.active_vars, box=box)
            grad[list(con.active_vars)] = result.gradient
        except _EVAL_ERRORS:
            pass  # keep the zero gradient; the row will be dropped
    if con.sense == SENSE_EQ:
        relaxed = True
    else:
        relaxed = value < 0.0
    return LinearizedConstraint(
        name=con.name,
        equality=con.sense == SENSE_EQ,
        value=float(value),
        gradient=grad,
        relaxed=relaxed,
        synthetic=synthetic,
    )


def _evaluate_state(problem, x, t, phi):
    box = _box(problem)
    cons = [
        linearize(con, x, phi, n_vars=problem.n_vars, box=box)
        for con in problem.nonlinear
    ]
    return PgdState(
        x=np.asarray(x, dtype=float),
        objective=problem.objective.value(x),
        constraints=cons,
        t=t,
    )


def _objective_gradient(problem, x):
    if problem.objective.is_linear:
        return problem.objective.linear.copy()
    grad = np.zeros(problem.n_vars)
    result = gradient(
        problem.objective.body, x,
        wrt=problem.objective.active_vars, box=_box(problem),
    )
    grad[list(problem.objective.active_vars)] = result.gradient
    return grad


def _step_qp(problem, state, params, ranges, *, ball, descend=True,
             warn=True, warm_hint=None, qp_iters=2000):
    """Assemble the step QP over (d, lambdas, mus) and solve it.

    Returns (d, lambdas, mus, qp_result, warm_hint).  ``ball=True`` builds
    the descent variant (step ball, no step penalty); ``ball=False`` the
    projection variant.  ``descend=False`` drops the objective-gradient
    term, turning the projection variant into a plain
    closest-feasible-point step (used by the terminal polish).
    ``warn=False`` leaves reporting of iteration-limited solves to the
    caller.  ``warm_hint`` is the hint returned by the previous call of the
    same mode; consecutive subproblems differ only in their linearization
    point, so the previous solution is an excellent start.
    """
    n = problem.n_vars
    lo, hi = _box(problem)
    x = state.x

    usable = [
        c for c in state.constraints
        if np.any(c.gradient) or (c.relaxed and not c.synthetic)
    ]
    lam_of = {}
    mu_of = {}
    for c in usable:
        if c.equality:
            mu_of[c.name] = n + len(lam_of) + len(mu_of)
        elif c.relaxed:
            lam_of[c.name] = n + len(lam_of) + len(mu_of)
    width = n + len(lam_of) + len(mu_of)

    # The QP is posed in normalized coordinates dhat = d / range with every
    # row rescaled to a unit gradient and the objective rescaled to unit
    # order; raw gradients here span several orders of magnitude (steep
    # objectives, stress-type constraints) and an unscaled instance makes
    # the solver's iterate unusable.
    def row_scale(grad_n):
        norm = float(np.linalg.norm(grad_n * ranges))
        return norm if norm > 1e-12 else 1.0

    c_vec = np.zeros(width)
    omega = 1.0
    if descend:
        grad_f = _objective_gradient(problem, x) * ranges
        omega = max(1.0, float(np.linalg.norm(grad_f)))
        c_vec[:n] = grad_f / omega
    q = np.zeros(width)
    if not ball:
        q[:n] = params.beta / omega

    rows, row_lb, row_ub = [], [], []
    for c in usable:
        s = row_scale(c.gradient)
        coeffs = np.zeros(width)
        coeffs[:n] = c.gradient * ranges / s
        if c.equality:
            j = mu_of[c.name]
            q[j] = params.gamma / omega
            up = coeffs.copy()
            up[j] = 1.0 / s
            rows.append(up)
            row_lb.append(-c.value / s)
            row_ub.append(np.inf)
            down = coeffs.copy()
            down[j] = -1.0 / s
            rows.append(down)
            row_lb.append(-np.inf)
            row_ub.append(-c.value / s)
        elif c.relaxed:
            j = lam_of[c.name]
            q[j] = params.gamma / omega
            coeffs[j] = 1.0 / s
            rows.append(coeffs)
            row_lb.append(-c.value / s)
            row_ub.append(np.inf)
        else:
            rows.append(coeffs)
            row_lb.append(-c.value / s)
            row_ub.append(np.inf)
    for i in range(problem.A.shape[0]):
        s = row_scale(problem.A[i])
        coeffs = np.zeros(width)
        coeffs[:n] = problem.A[i] * ranges / s
        rows.append(coeffs)
        row_lb.append((problem.b[i] - problem.A[i] @ x) / s)
        row_ub.append(np.inf)
    for i in range(problem.C.shape[0]):
        s = row_scale(problem.C[i])
        coeffs = np.zeros(width)
        coeffs[:n] = problem.C[i] * ranges / s
        rhs = (problem.d[i] - problem.C[i] @ x) / s
        rows.append(coeffs)
        row_lb.append(rhs)
        row_ub.append(rhs)

    lb = np.concatenate([(lo - x) / ranges, np.zeros(width - n)])
    ub = np.concatenate([(hi - x) / ranges, np.full(width - n, np.inf)])
    for k in problem.integer_indices():
        lb[k] = ub[k] = 0.0

    kwargs = {}
    if ball:
        kwargs = dict(
            ball_index=np.arange(n),
            ball_scale=np.ones(n),
            ball_center=np.zeros(n),
            ball_radius=float(
                np.sqrt(
                    params.alpha
                    * np.exp(-params.decay * state.t / params.max_iters)
                )
            ),
        )
    inst = QpInstance(
        c=c_vec,
        q=q,
        A=np.array(rows).reshape(-1, width),
        row_lb=np.array(row_lb, dtype=float),
        row_ub=np.array(row_ub, dtype=float),
        lb=lb,
        ub=ub,
        **kwargs,
    )
    # Standing still with the slacks absorbing the current violations is
    # feasible whenever the iterate is; it makes a far better start than
    # the solver's own guess.  A hint from the previous step of the same
    # mode is better still and overrides it where the shapes line up.
    warm = np.zeros(width)
    for c in usable:
        if c.equality:
            warm[mu_of[c.name]] = abs(c.value)
        elif c.relaxed:
            warm[lam_of[c.name]] = max(0.0, -c.value)
    if warm_hint is not None:
        warm[:n] = np.clip(warm_hint["d"], lb[:n], ub[:n])
        for name, j in lam_of.items():
            if name in warm_hint["lam"]:
                warm[j] = warm_hint["lam"][name]
        for name, j in mu_of.items():
            if name in warm_hint["mu"]:
                warm[j] = warm_hint["mu"][name]
    result = solve_qp(inst, x0=warm, max_iters=qp_iters)
    if result.x is None:
        warnings.warn(
            f"step QP returned {result.status} with no iterate; standing still"
        )
        return (np.zeros(n), np.zeros(len(lam_of)), np.zeros(len(mu_of)),
                result, None)
    if warn and not result.optimal:
        warnings.warn(
            f"step QP stopped at {result.status}; using its best iterate"
        )
    d = result.x[:n] * ranges
    lams = np.array([result.x[j] for j in lam_of.values()])
    mus = np.array([result.x[j] for j in mu_of.values()])
    hint = {
        "d": result.x[:n].copy(),
        "lam": {name: result.x[j] for name, j in lam_of.items()},
        "mu": {name: result.x[j] for name, j in mu_of.items()},
    }
    return d, lams, mus, result, hint


def descent_step(problem, state, params, ranges=None):
    """One descent-mode step (every constraint feasible to tolerance).

    Returns the new point ``x + d`` with the step confined to the shrinking
    normalized ball.
    """
    if ranges is None:
        ranges = variable_ranges(problem)
    d, lams, mus, _, _ = _step_qp(problem, state, params, ranges, ball=True)
    state.lambdas, state.mus = lams, mus
    return state.x + d


def project_step(problem, state, params, ranges=None):
    """One projection-mode step (some constraint violated beyond phi).

    The ball is dropped and the step penalized, approximating the nearest
    feasible projection.
    """
    if ranges is None:
        ranges = variable_ranges(problem)
    d, lams, mus, _, _ = _step_qp(problem, state, params, ranges, ball=False)
    state.lambdas, state.mus = lams, mus
    return state.x + d


def _linear_violation(problem, x):
    parts = [0.0]
    if problem.A.shape[0]:
        parts.append(float(np.max(problem.b - problem.A @ x, initial=0.0)))
    if problem.C.shape[0]:
        parts.append(float(np.max(np.abs(problem.C @ x - problem.d),
                                  initial=0.0)))
    lo, hi = _box(problem)
    parts.append(float(np.max(lo - x, initial=0.0)))
    parts.append(float(np.max(x - hi, initial=0.0)))
    return max(parts)


def _freeze_integers(problem, x, reference):
    for k in problem.integer_indices():
        x[k] = reference[k]
    return x


def _polish(problem, x, params, ranges, trace):
    """Pull ``x`` onto the constraint surface with pure projection steps.

    A projection step that also descends settles where the penalty on the
    relaxations balances the objective gain — at violation about
    dual/(2·gamma), not at zero.  Muting the objective term removes that
    offset, so each step here contracts the violation by roughly
    beta/(gamma·|grad g|²) and a handful of them reach tightness ``phi``.
    The step penalty keeps the point in place otherwise.
    """
    lo, hi = _box(problem)
    best_x = x
    best_violation = np.inf
    hint = None
    for k in range(10):
        state = _evaluate_state(problem, x, k, params.phi)
        violation = max(state.max_violation(), _linear_violation(problem, x))
        if violation < best_violation:
            best_x, best_violation = x, violation
        if violation <= 0.1 * params.phi:
            break
        d, _, _, _, hint = _step_qp(
            problem, state, params, ranges, ball=False, descend=False,
            warn=False, warm_hint=hint,
        )
        x_next = np.clip(x + d, lo, hi)
        _freeze_integers(problem, x_next, x)
        trace.append(
            {
                "iteration": state.t,
                "mode": "polish",
                "objective": state.objective,
                "max_violation": violation,
                "step_norm": float(np.linalg.norm((x_next - x) / ranges)),
            }
        )
        if not np.any(x_next != x):
            break
        x = x_next
    return best_x


def repair(problem, x0, params=None, trace_path=None):
    """Run the repair loop from ``x0`` and return the best iterate found.

    Integer variables are rounded once and stay frozen.  The loop treats a
    constraint surface as reached at tolerance ``max(phi, epsilon)`` — a
    projection step with a binding row settles at violation about
    dual/(2·gamma) rather than zero, so insisting on ``phi`` there would
    trap the loop in projection mode and never let it descend.  The best
    iterate (preferring strictly ``phi``-feasible ones, then loop-feasible
    ones, by objective; otherwise the least-violating one) is pulled back
    onto the surface by a terminal polish and returned, flagged feasible
    only if it meets ``phi`` against the true constraints, the linear rows,
    and the boxes.  The trace holds one record per step; ``trace_path``
    additionally writes it as CSV.
    """
    params = params or PgdParams()
    if not isinstance(problem, StandardFormProblem):
        raise TypeError("repair expects a StandardFormProblem")
    lo, hi = _box(problem)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    for k in problem.integer_indices():
        x[k] = np.clip(np.round(x[k]), lo[k], hi[k])
    ranges = variable_ranges(problem)
    loop_tol = max(params.phi, params.epsilon)
    linear_tol = 1e-7

    trace = []
    best_strict = None  # (objective, x): feasible at phi
    best_loose = None  # (objective, x): feasible at the loop tolerance
    best_any = None  # (violation, objective, x): least-violating fallback
    prev_feasible = None
    prev_objective = None
    converged = False
    iterations = 0
    limited_qps = 0
    total_qps = 0
    hints = {"descent": None, "project": None}

    for t in range(params.max_iters + 1):
        state = _evaluate_state(problem, x, t, params.phi)
        lin_violation = _linear_violation(problem, x)
        violation = max(state.max_violation(), lin_violation)
        strict = state.feasible(params.phi) and lin_violation <= linear_tol
        loose = state.feasible(loop_tol) and lin_violation <= linear_tol
        if strict and (best_strict is None or state.objective < best_strict[0]):
            best_strict = (state.objective, x.copy())
        if loose and (best_loose is None or state.objective < best_loose[0]):
            best_loose = (state.objective, x.copy())
        if best_any is None or (violation, state.objective) < best_any[:2]:
            best_any = (violation, state.objective, x.copy())

        converged = bool(
            prev_feasible is not None
            and loose
            and prev_feasible
            and abs(state.objective - prev_objective) < params.epsilon
        )
        if converged or t == params.max_iters:
            break

        mode = "descent" if loose else "project"
        d, lams, mus, qp_result, hints[mode] = _step_qp(
            problem, state, params, ranges, ball=loose, warn=False,
            warm_hint=hints[mode],
        )
        state.lambdas, state.mus = lams, mus
        if not qp_result.optimal:
            limited_qps += 1
        total_qps += 1
        x_next = np.clip(state.x + d, lo, hi)
        _freeze_integers(problem, x_next, x)
        trace.append(
            {
                "iteration": t,
                "mode": mode,
                "objective": state.objective,
                "max_violation": violation,
                "step_norm": float(np.linalg.norm((x_next - x) / ranges)),
            }
        )
        prev_feasible, prev_objective = loose, state.objective
        x = x_next
        iterations = t + 1

    # The loop-feasible iterate with the best objective is the prize; the
    # polish pulls its residual violation (the projection fixed point) down
    # to phi.  If that fails, fall back to the best strictly feasible
    # iterate, then to the least-violating one.
    candidate = best_loose or best_any[1:]
    final_x = _polish(problem, candidate[1], params, ranges, trace)
    final = _evaluate_state(problem, final_x, iterations, params.phi)
    final_violation = max(
        final.max_violation(), _linear_violation(problem, final_x)
    )
    if final_violation > params.phi and best_strict is not None:
        final_x = best_strict[1]
        final = _evaluate_state(problem, final_x, iterations, params.phi)
        final_violation = max(
            final.max_violation(), _linear_violation(problem, final_x)
        )
    trace.append(
        {
            "iteration": iterations,
            "mode": "stop",
            "objective": final.objective,
            "max_violation": final_violation,
            "step_norm": 0.0,
        }
    )
    if limited_qps and final_violation > params.phi:
        # Only worth reporting when the repair actually came up short;
        # uncertified step QPs routinely still deliver usable iterates.
        warnings.warn(
            f"{limited_qps} of {total_qps} step QPs stopped at their "
            "iteration limit; their best iterates were used"
        )
    result = PgdResult(
        x=final_x,
        objective=final.objective,
        feasible=bool(final_violation <= params.phi),
        max_violation=final_violation,
        iterations=iterations,
        converged=converged,
        trace=trace,
    )
    if trace_path is not None:
        write_trace_csv(trace, trace_path)
    return result


def write_trace_csv(trace, path):
    """Dump a repair trace as CSV (iteration, mode, objective,
    max_violation, step_norm)."""
    fields = ["iteration", "mode", "objective", "max_violation", "step_norm"]
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: row[k] for k in fields})
