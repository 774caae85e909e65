"""Problem representation in standard form.

A problem is  min f(x)  subject to

    g_i(x) >= 0          (nonlinear inequalities)
    h_j(x)  = 0          (nonlinear equalities)
    A x >= b,  C x = d   (linear rows)
    lb <= x <= ub        (boxes, some variables integral)

``standardize`` is the single entry point that turns a JSON-schema dict (or
an existing problem) into this form: every constraint body is inspected, the
syntactically affine ones become linear rows regardless of how they were
declared, and nonlinear inequalities get a separable affine part
``a.x + b >= g(x)`` detected (or taken from the user's declaration).

Nonlinear bodies are either expression trees or opaque callables; a callable
must declare which variables it reads, since nothing can be introspected
from it.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ProblemError, UnboundedVariableError
from .expressions import (
    ExpressionNode,
    affine_decompose,
    evaluate,
    free_variables,
    parse_expression,
    split_affine_part,
    to_string,
)

SENSE_GE = ">=0"
SENSE_EQ = "=0"


@dataclass(frozen=True)
class Variable:
    """One decision variable: a name, a box, and an integrality flag."""

    name: str
    lower: float = -np.inf
    upper: float = np.inf
    integral: bool = False

    def __post_init__(self):
        if np.isfinite(self.lower) and np.isfinite(self.upper):
            if self.lower > self.upper:
                raise ProblemError(
                    f"variable {self.name!r} has lower bound above upper bound"
                )


@dataclass(frozen=True)
class NonlinearConstraint:
    """A constraint ``body >= 0`` or ``body = 0``.

    ``body`` is an ExpressionNode or an opaque callable taking the full
    point.  ``active_vars`` lists the variable indices the body reads; for
    expression bodies it is derived, for callables it must be declared.
    ``separable`` optionally holds ``(a, b)`` describing the split
    ``a.x + b >= g(x)`` of an inequality body (so ``g(x) = a.x + b -
    body(x)``); ``blackbox_id`` names a callable body for serialization.
    """

    body: object
    sense: str
    active_vars: tuple = ()
    separable: tuple | None = None
    blackbox_id: str | None = None
    name: str = ""

    def __post_init__(self):
        if self.sense not in (SENSE_GE, SENSE_EQ):
            raise ProblemError(f"unknown constraint sense {self.sense!r}")
        if isinstance(self.body, ExpressionNode):
            derived = tuple(sorted(free_variables(self.body)))
            if not self.active_vars:
                object.__setattr__(self, "active_vars", derived)
            elif tuple(sorted(self.active_vars)) != derived:
                raise ProblemError(
                    f"declared active variables {self.active_vars} do not "
                    f"match the expression's {derived}"
                )
        elif callable(self.body):
            if not self.active_vars:
                raise ProblemError(
                    "an opaque constraint must declare its active variables"
                )
            object.__setattr__(
                self, "active_vars", tuple(sorted(set(self.active_vars)))
            )
        else:
            raise ProblemError("constraint body must be an expression or callable")

    @property
    def is_expression(self):
        return isinstance(self.body, ExpressionNode)

    def __call__(self, x):
        """Evaluate the body at a point (strict: domain errors raise)."""
        if self.is_expression:
            return evaluate(self.body, x)
        return float(self.body(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Objective:
    """Either linear coefficients or a nonlinear body (plus a constant)."""

    linear: np.ndarray | None = None
    body: object = None
    active_vars: tuple = ()
    constant: float = 0.0

    def __post_init__(self):
        if (self.linear is None) == (self.body is None):
            raise ProblemError("objective needs exactly one of coefficients/body")
        if self.linear is not None:
            object.__setattr__(
                self, "linear", np.asarray(self.linear, dtype=float).copy()
            )
        elif isinstance(self.body, ExpressionNode):
            object.__setattr__(
                self, "active_vars", tuple(sorted(free_variables(self.body)))
            )
        elif callable(self.body):
            if not self.active_vars:
                raise ProblemError(
                    "an opaque objective must declare its active variables"
                )
        else:
            raise ProblemError("objective body must be an expression or callable")

    @property
    def is_linear(self):
        return self.linear is not None

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_linear:
            return float(self.linear @ x + self.constant)
        if isinstance(self.body, ExpressionNode):
            return evaluate(self.body, x) + self.constant
        return float(self.body(x)) + self.constant


class StandardFormProblem:
    """An immutable problem in standard form (see module docstring).

    Parameters
    ----------
    variables : sequence of Variable
    A, b : array-like
        Linear inequalities ``A x >= b`` (possibly empty).
    C, d : array-like
        Linear equalities ``C x = d``.
    nonlinear : sequence of NonlinearConstraint
    objective : Objective
    name : str
    """

    def __init__(self, variables, A=None, b=None, C=None, d=None, nonlinear=(),
                 objective=None, name=""):
        self.variables = tuple(variables)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ProblemError("variable names must be unique")
        n = len(self.variables)
        self.A = np.zeros((0, n)) if A is None else np.asarray(A, float).reshape(-1, n)
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, float)
        self.C = np.zeros((0, n)) if C is None else np.asarray(C, float).reshape(-1, n)
        self.d = np.zeros(self.C.shape[0]) if d is None else np.asarray(d, float)
        if self.b.shape != (self.A.shape[0],) or self.d.shape != (self.C.shape[0],):
            raise ProblemError("linear right-hand sides do not match their matrices")
        self.nonlinear = tuple(nonlinear)
        for con in self.nonlinear:
            for k in con.active_vars:
                if not 0 <= k < n:
                    raise ProblemError(
                        f"constraint references undeclared variable index {k}"
                    )
        if objective is None:
            objective = Objective(linear=np.zeros(n))
        self.objective = objective
        if objective.is_linear and objective.linear.shape != (n,):
            raise ProblemError("objective coefficient length mismatch")
        self.name = name
        self._index = {v.name: i for i, v in enumerate(self.variables)}

    @property
    def n_vars(self):
        return len(self.variables)

    def var_index(self, name):
        return self._index[name]

    def lower_bounds(self):
        return np.array([v.lower for v in self.variables])

    def upper_bounds(self):
        return np.array([v.upper for v in self.variables])

    def integer_indices(self):
        return [i for i, v in enumerate(self.variables) if v.integral]

    def inequalities(self):
        """The nonlinear inequality constraints, in declaration order."""
        return [c for c in self.nonlinear if c.sense == SENSE_GE]

    def equalities(self):
        return [c for c in self.nonlinear if c.sense == SENSE_EQ]


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def standardize(raw, blackboxes=None, *, demote_affine=False):
    """Build a StandardFormProblem from a schema dict or re-standardize one.

    Where a constraint was declared is honored: entries of the ``nonlinear``
    section stay nonlinear constraints even when their bodies happen to be
    affine (treating a constraint as an approximation target is the user's
    choice, and an affine boundary is learned exactly anyway).  Pass
    ``demote_affine=True`` to instead fold syntactically affine bodies into
    the linear rows.  Affine *objectives* always become linear coefficients,
    separable affine parts of inequalities are always detected, and the
    whole operation is idempotent.
    """
    if isinstance(raw, StandardFormProblem):
        return _standardize_problem(raw, demote_affine)
    if isinstance(raw, dict):
        return _standardize_dict(raw, blackboxes or {}, demote_affine)
    raise ProblemError(f"cannot standardize {type(raw).__name__}")


def _standardize_problem(p, demote_affine=False):
    rows_A, rhs_b = [list(row) for row in p.A], list(p.b)
    rows_C, rhs_d = [list(row) for row in p.C], list(p.d)
    keep = []
    for con in p.nonlinear:
        if demote_affine and _demote_affine(
            con, p.n_vars, rows_A, rhs_b, rows_C, rhs_d
        ):
            continue
        keep.append(_with_separability(con))
    objective = _classify_objective(p.objective, p.n_vars)
    return StandardFormProblem(
        p.variables,
        A=np.array(rows_A).reshape(-1, p.n_vars),
        b=rhs_b,
        C=np.array(rows_C).reshape(-1, p.n_vars),
        d=rhs_d,
        nonlinear=keep,
        objective=objective,
        name=p.name,
    )


def _demote_affine(con, n, rows_A, rhs_b, rows_C, rhs_d):
    """Move an affine-bodied constraint into the linear rows.  True if moved."""
    if not con.is_expression:
        return False
    dec = affine_decompose(con.body)
    if dec is None:
        return False
    coeffs, const = dec
    row = np.zeros(n)
    for i, c in coeffs.items():
        row[i] = c
    if con.sense == SENSE_GE:  # row.x + const >= 0
        rows_A.append(list(row))
        rhs_b.append(-const)
    else:
        rows_C.append(list(row))
        rhs_d.append(-const)
    return True


def _with_separability(con):
    """Fill the separable affine part of an inequality when detectable."""
    if con.separable is not None or con.sense != SENSE_GE or not con.is_expression:
        return con
    coeffs, const, remainder = split_affine_part(con.body)
    if remainder is None or (not coeffs and const == 0.0):
        return con
    a = dict(sorted(coeffs.items()))
    return NonlinearConstraint(
        body=con.body,
        sense=con.sense,
        active_vars=con.active_vars,
        separable=(a, const),
        blackbox_id=con.blackbox_id,
        name=con.name,
    )


def _classify_objective(obj, n):
    if obj.is_linear or not isinstance(obj.body, ExpressionNode):
        return obj
    dec = affine_decompose(obj.body)
    if dec is None:
        return obj
    coeffs, const = dec
    linear = np.zeros(n)
    for i, c in coeffs.items():
        linear[i] = c
    return Objective(linear=linear, constant=obj.constant + const)


def _standardize_dict(data, blackboxes, demote_affine=False):
    variables = []
    for spec in data.get("variables", []):
        variables.append(
            Variable(
                name=str(spec["name"]),
                lower=_bound(spec.get("lb")),
                upper=_bound(spec.get("ub"), default=np.inf),
                integral=bool(spec.get("integer", False)),
            )
        )
    if not variables:
        raise ProblemError("problem declares no variables")
    index = {v.name: i for i, v in enumerate(variables)}
    n = len(variables)

    nonlinear = []
    rows_A, rhs_b, rows_C, rhs_d = [], [], [], []
    for spec in data.get("linear", []):
        row = np.zeros(n)
        for name, coeff in spec["coeffs"].items():
            row[index[name]] = float(coeff)
        sense = spec.get("sense", ">=")
        rhs = float(spec.get("rhs", 0.0))
        if sense == ">=":
            rows_A.append(list(row)); rhs_b.append(rhs)
        elif sense == "<=":
            rows_A.append(list(-row)); rhs_b.append(-rhs)
        elif sense in ("=", "=="):
            rows_C.append(list(row)); rhs_d.append(rhs)
        else:
            raise ProblemError(f"unknown linear sense {sense!r}")

    for k, spec in enumerate(data.get("nonlinear", [])):
        sense = spec.get("sense", SENSE_GE)
        if sense in (">=", ">=0"):
            sense = SENSE_GE
        elif sense in ("=", "==", "=0"):
            sense = SENSE_EQ
        separable = None
        if "separable" in spec:
            a = {index[name]: float(c) for name, c in spec["separable"]["coeffs"].items()}
            separable = (dict(sorted(a.items())), float(spec["separable"].get("constant", 0.0)))
        if "expr" in spec:
            body = parse_expression(spec["expr"], index)
            con = NonlinearConstraint(
                body=body, sense=sense, separable=separable,
                name=spec.get("name", f"nl{k}"),
            )
        elif "blackbox" in spec:
            ident = spec["blackbox"]
            if ident not in blackboxes:
                raise ProblemError(f"no callable registered for blackbox {ident!r}")
            active = tuple(index[name] for name in spec["active"])
            con = NonlinearConstraint(
                body=blackboxes[ident], sense=sense, active_vars=active,
                separable=separable, blackbox_id=ident,
                name=spec.get("name", f"nl{k}"),
            )
        else:
            raise ProblemError("nonlinear entry needs 'expr' or 'blackbox'")
        nonlinear.append(con)

    obj_spec = data.get("objective")
    if obj_spec is None:
        objective = Objective(linear=np.zeros(n))
    elif "coeffs" in obj_spec:
        linear = np.zeros(n)
        for name, coeff in obj_spec["coeffs"].items():
            linear[index[name]] = float(coeff)
        objective = Objective(linear=linear, constant=float(obj_spec.get("constant", 0.0)))
    elif "expr" in obj_spec:
        objective = Objective(
            body=parse_expression(obj_spec["expr"], index),
            constant=float(obj_spec.get("constant", 0.0)),
        )
    elif "blackbox" in obj_spec:
        ident = obj_spec["blackbox"]
        if ident not in blackboxes:
            raise ProblemError(f"no callable registered for blackbox {ident!r}")
        objective = Objective(
            body=blackboxes[ident],
            active_vars=tuple(index[name] for name in obj_spec["active"]),
            constant=float(obj_spec.get("constant", 0.0)),
        )
    else:
        raise ProblemError("objective needs 'coeffs', 'expr', or 'blackbox'")
    if obj_spec and obj_spec.get("sense", "min") == "max":
        if objective.is_linear:
            objective = Objective(linear=-objective.linear,
                                  constant=-objective.constant)
        elif isinstance(objective.body, ExpressionNode):
            from .expressions import Neg

            objective = Objective(body=Neg(objective.body),
                                  constant=-objective.constant)
        else:
            raise ProblemError("cannot negate an opaque objective; supply min form")

    problem = StandardFormProblem(
        variables,
        A=np.array(rows_A).reshape(-1, n), b=rhs_b,
        C=np.array(rows_C).reshape(-1, n), d=rhs_d,
        nonlinear=nonlinear,
        objective=objective,
        name=str(data.get("name", "")),
    )
    return _standardize_problem(problem, demote_affine)


def _bound(value, default=-np.inf):
    if value is None:
        return default
    if isinstance(value, str):
        lowered = value.lower()
        if lowered in ("inf", "+inf", "infinity"):
            return np.inf
        if lowered in ("-inf", "-infinity"):
            return -np.inf
    return float(value)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def problem_to_dict(p):
    """The JSON-schema dict for ``p`` (inverse of standardize on min form)."""
    data = {"name": p.name, "variables": [], "linear": [], "nonlinear": []}
    for v in p.variables:
        spec = {"name": v.name}
        if np.isfinite(v.lower):
            spec["lb"] = v.lower
        if np.isfinite(v.upper):
            spec["ub"] = v.upper
        if v.integral:
            spec["integer"] = True
        data["variables"].append(spec)
    for row, rhs in zip(p.A, p.b):
        data["linear"].append(_linear_spec(p, row, ">=", rhs))
    for row, rhs in zip(p.C, p.d):
        data["linear"].append(_linear_spec(p, row, "=", rhs))
    for con in p.nonlinear:
        spec = {"sense": con.sense, "name": con.name}
        if con.is_expression:
            spec["expr"] = to_string(con.body)
        else:
            spec["blackbox"] = con.blackbox_id or "unregistered"
            spec["active"] = [p.variables[i].name for i in con.active_vars]
        if con.separable is not None:
            a, b0 = con.separable
            spec["separable"] = {
                "coeffs": {p.variables[i].name: c for i, c in a.items()},
                "constant": b0,
            }
        data["nonlinear"].append(spec)
    obj = p.objective
    if obj.is_linear:
        coeffs = {
            p.variables[i].name: float(c)
            for i, c in enumerate(obj.linear)
            if c != 0.0
        }
        data["objective"] = {"coeffs": coeffs, "constant": obj.constant}
    elif isinstance(obj.body, ExpressionNode):
        data["objective"] = {"expr": to_string(obj.body), "constant": obj.constant}
    else:
        data["objective"] = {
            "blackbox": "unregistered",
            "active": [p.variables[i].name for i in obj.active_vars],
            "constant": obj.constant,
        }
    return data


def _linear_spec(p, row, sense, rhs):
    coeffs = {
        p.variables[i].name: float(c) for i, c in enumerate(row) if c != 0.0
    }
    return {"coeffs": coeffs, "sense": sense, "rhs": float(rhs)}


def load_problem(source, blackboxes=None):
    """Load a problem from a JSON file path, file object, or dict."""
    import json

    if isinstance(source, dict):
        data = source
    elif hasattr(source, "read"):
        data = json.load(source)
    else:
        with open(source) as handle:
            data = json.load(handle)
    return standardize(data, blackboxes)


def save_problem(p, path):
    """Write ``p`` to a JSON problem file."""
    import json

    with open(path, "w") as handle:
        json.dump(problem_to_dict(p), handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# Bound tightening
# ---------------------------------------------------------------------------

def tighten_bounds(p, k):
    """The implied range of variable ``k`` over the linear relaxation.

    Minimizes and maximizes ``x_k`` subject to the problem's linear rows and
    declared boxes.  A direction in which the LP is unbounded falls back to
    the declared bound.  The result never widens a declared finite bound.
    """
    from .backend import LpInstance, solve_lp

    n = p.n_vars
    lb, ub = p.lower_bounds(), p.upper_bounds()
    A = np.vstack([p.A, p.C])
    row_lb = np.concatenate([p.b, p.d])
    row_ub = np.concatenate([np.full(p.A.shape[0], np.inf), p.d])
    c = np.zeros(n)
    c[k] = 1.0
    lo, hi = lb[k], ub[k]
    low = solve_lp(LpInstance(c=c, A=A, row_lb=row_lb, row_ub=row_ub, lb=lb, ub=ub))
    if low.optimal:
        lo = max(lo, low.objective)
    high = solve_lp(LpInstance(c=-c, A=A, row_lb=row_lb, row_ub=row_ub, lb=lb, ub=ub))
    if high.optimal:
        hi = min(hi, -high.objective)
    return float(lo), float(hi)


def tighten_all(p):
    """A copy of ``p`` with every variable's box tightened via the LP.

    Raises UnboundedVariableError if any variable that appears in a
    nonlinear constraint (or nonlinear objective) still has an infinite
    bound afterwards — sampling needs a finite box.
    """
    needs_box = set()
    for con in p.nonlinear:
        needs_box.update(con.active_vars)
    if not p.objective.is_linear:
        needs_box.update(p.objective.active_vars)

    variables = []
    unbounded = []
    for k, v in enumerate(p.variables):
        lo, hi = tighten_bounds(p, k)
        if k in needs_box and not (np.isfinite(lo) and np.isfinite(hi)):
            unbounded.append(v.name)
        variables.append(Variable(v.name, lo, hi, v.integral))
    if unbounded:
        raise UnboundedVariableError(unbounded)
    return StandardFormProblem(
        variables,
        A=p.A,
        b=p.b,
        C=p.C,
        d=p.d,
        nonlinear=p.nonlinear,
        objective=p.objective,
        name=p.name,
    )
