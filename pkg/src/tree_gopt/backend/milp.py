"""Branch-and-bound solver for mixed-integer linear programs.

Works on :class:`~tree_gopt.backend.model.MilpInstance` and uses the
bounded-variable simplex in :mod:`tree_gopt.backend.lp` for the node
relaxations, warm-starting each child from its parent's optimal basis.

Branching runs in two tiers.  "Pick groups" — sets of binaries tied by a
``sum(z) = 1`` row, one per disjunction — are branched first by splitting the
still-available members of the most fractional group into two halves and
fixing the complementary half to zero on each side.  Once every group is
settled, ordinary most-fractional branching on the remaining integer
variables finishes the job.  The search itself is depth-first, diving toward
the child suggested by the relaxation.
"""

import time

import numpy as np

from ..exceptions import SolverError
from .lp import solve_lp
from .model import LpInstance, MilpInstance, MilpResult, SolveStatus

INTEGRALITY_TOL = 1e-6
DEFAULT_ABS_GAP = 1e-6
DEFAULT_MAX_NODES = 200_000


def _fractionality(values):
    """Distance of each entry to its nearest integer."""
    return np.abs(values - np.round(values))


class _Node:
    __slots__ = ("lb", "ub", "basis", "bound")

    def __init__(self, lb, ub, basis, bound):
        self.lb = lb
        self.ub = ub
        self.basis = basis
        self.bound = bound


def solve_milp(
    instance: MilpInstance,
    *,
    abs_gap: float = DEFAULT_ABS_GAP,
    max_nodes: int = DEFAULT_MAX_NODES,
    time_limit: float | None = None,
) -> MilpResult:
    """Solve a MILP by depth-first branch and bound.

    Parameters
    ----------
    instance : MilpInstance
        The problem to solve (minimization).
    abs_gap : float
        Absolute optimality gap: subtrees whose relaxation bound comes
        within ``abs_gap`` of the incumbent are pruned.
    max_nodes : int
        Safety cap on the number of node relaxations.
    time_limit : float or None
        Wall-clock budget in seconds; ``None`` means no limit.

    Returns
    -------
    MilpResult
        Status is ``OPTIMAL`` when the tree was exhausted with an incumbent,
        ``INFEASIBLE`` when no integral solution exists, ``UNBOUNDED`` when
        the root relaxation is unbounded, and ``ITERATION_LIMIT`` when the
        node or time budget ran out (the incumbent, if any, is returned).
    """
    integers = sorted(set(int(j) for j in instance.integers))
    groups = [list(g) for g in instance.pick_groups if len(g) > 1]
    deadline = None if time_limit is None else time.monotonic() + float(time_limit)

    root = _Node(instance.lb.copy(), instance.ub.copy(), None, -np.inf)
    stack = [root]
    incumbent = None
    incumbent_obj = np.inf
    nodes = 0
    limit_hit = False
    relax = instance.relax()  # bounds are swapped in per node below

    while stack:
        if nodes >= max_nodes or (deadline is not None and time.monotonic() > deadline):
            limit_hit = True
            break
        node = stack.pop()
        if node.bound >= incumbent_obj - abs_gap:
            continue
        if np.any(node.lb > node.ub + 1e-12):  # conflicting branch fixings
            continue
        relax.lb = node.lb
        relax.ub = node.ub
        result = solve_lp(relax, basis=node.basis)
        nodes += 1
        if result.status == SolveStatus.ITERATION_LIMIT and node.basis is not None:
            result = solve_lp(relax)  # retry cold; warm bases can start badly
            nodes += 1
        if result.status == SolveStatus.UNBOUNDED:
            if nodes == 1:
                return MilpResult(status=SolveStatus.UNBOUNDED, nodes=nodes)
            raise SolverError("node relaxation unbounded below a bounded root")
        if result.status == SolveStatus.ITERATION_LIMIT:
            raise SolverError("node relaxation hit the simplex iteration limit")
        if result.status == SolveStatus.INFEASIBLE:
            continue
        if result.objective >= incumbent_obj - abs_gap:
            continue
        x = result.x

        branched = _branch_on_group(instance, groups, node, result, stack)
        if branched:
            continue
        if _branch_on_integer(integers, node, result, stack):
            continue

        # Integral: round off residual fuzz and record the incumbent.
        x = x.copy()
        if integers:
            x[integers] = np.round(x[integers])
            x[integers] = np.clip(x[integers], node.lb[integers], node.ub[integers])
        obj = float(instance.c @ x + instance.c0)
        if obj < incumbent_obj:
            incumbent = x
            incumbent_obj = obj

    if incumbent is not None:
        if limit_hit:
            open_bounds = [n.bound for n in stack]
            bound = min(open_bounds) if open_bounds else incumbent_obj
            bound = min(bound, incumbent_obj)
            return MilpResult(
                status=SolveStatus.ITERATION_LIMIT,
                x=incumbent,
                objective=incumbent_obj,
                bound=float(bound),
                nodes=nodes,
                gap=float(incumbent_obj - bound),
            )
        return MilpResult(
            status=SolveStatus.OPTIMAL,
            x=incumbent,
            objective=incumbent_obj,
            bound=incumbent_obj,
            nodes=nodes,
            gap=0.0,
        )
    if limit_hit:
        open_bounds = [n.bound for n in stack if np.isfinite(n.bound)]
        bound = min(open_bounds) if open_bounds else -np.inf
        return MilpResult(
            status=SolveStatus.ITERATION_LIMIT, bound=float(bound), nodes=nodes
        )
    return MilpResult(status=SolveStatus.INFEASIBLE, nodes=nodes)


def _branch_on_group(instance, groups, node, result, stack):
    """Split the most fractional pick group, if any; push two children."""
    x = result.x
    best = None
    best_frac = INTEGRALITY_TOL
    for g in groups:
        frac = _fractionality(x[g]).max()
        if frac > best_frac:
            best_frac = frac
            best = g
    if best is None:
        return False
    open_members = [j for j in best if node.ub[j] > INTEGRALITY_TOL]
    if len(open_members) < 2:  # the choice row already pins the survivor
        return False
    order = sorted(open_members, key=lambda j: (-x[j], j))
    half = (len(order) + 1) // 2
    keep_hi, keep_lo = order[:half], order[half:]
    for keep, drop in ((keep_lo, keep_hi), (keep_hi, keep_lo)):
        lb, ub = node.lb.copy(), node.ub.copy()
        ub[drop] = 0.0  # a member forced on elsewhere just makes this side infeasible
        stack.append(_Node(lb, ub, result.basis, result.objective))
    return True


def _branch_on_integer(integers, node, result, stack):
    """Branch on the integer variable closest to half-integral."""
    if not integers:
        return False
    x = result.x
    frac = _fractionality(x[integers])
    if frac.max() <= INTEGRALITY_TOL:
        return False
    j = integers[int(np.argmax(np.minimum(frac, 1.0 - frac)))]
    value = x[j]
    down_ub = np.floor(value + INTEGRALITY_TOL)
    up_lb = down_ub + 1.0
    children = []
    lb, ub = node.lb.copy(), node.ub.copy()
    ub[j] = down_ub
    children.append(_Node(lb, ub, result.basis, result.objective))
    lb, ub = node.lb.copy(), node.ub.copy()
    lb[j] = up_lb
    children.append(_Node(lb, ub, result.basis, result.objective))
    if value - down_ub <= 0.5:  # dive toward the nearer integer first
        children.reverse()
    stack.extend(children)
    return True
