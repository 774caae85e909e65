"""Forward-mode automatic differentiation on dual numbers.

A :class:`DualNumber` carries ``(value, deriv)`` through the arithmetic the
expression evaluator performs, so one evaluation with a seeded dual yields
one directional derivative.  :func:`gradient` runs one pass per requested
coordinate for expression trees, and falls back to central finite
differences for opaque callables (flagged ``approximate``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .expressions import ExpressionNode, evaluate

__all__ = ["DualNumber", "GradientResult", "gradient"]

# Step sizes mandated for the repair stage: finite differences use
# 1e-6 * variable range; domain-boundary retries nudge 1e-9 * range inward.
FD_RELATIVE_STEP = 1e-6
BOUNDARY_NUDGE = 1e-9


class DualNumber:
    """A first-order dual number ``value + deriv * eps`` with ``eps² = 0``."""

    __slots__ = ("value", "deriv")

    def __init__(self, value, deriv=0.0):
        self.value = float(value)
        self.deriv = float(deriv)

    def __repr__(self):
        return f"DualNumber({self.value!r}, {self.deriv!r})"

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, DualNumber) else DualNumber(x)

    def __add__(self, other):
        o = DualNumber._lift(other)
        return DualNumber(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        o = DualNumber._lift(other)
        return DualNumber(self.value - o.value, self.deriv - o.deriv)

    def __rsub__(self, other):
        o = DualNumber._lift(other)
        return DualNumber(o.value - self.value, o.deriv - self.deriv)

    def __mul__(self, other):
        o = DualNumber._lift(other)
        return DualNumber(
            self.value * o.value, self.deriv * o.value + self.value * o.deriv
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = DualNumber._lift(other)
        if o.value == 0.0:
            raise DomainError("division by zero")
        inv = 1.0 / o.value
        return DualNumber(
            self.value * inv, (self.deriv * o.value - self.value * o.deriv) * inv * inv
        )

    def __rtruediv__(self, other):
        return DualNumber._lift(other).__truediv__(self)

    def __neg__(self):
        return DualNumber(-self.value, -self.deriv)

    def __pow__(self, exponent):
        if isinstance(exponent, DualNumber):
            return (self.log() * exponent).exp()
        return self.pow_const(float(exponent))

    def pow_const(self, c):
        """Power rule for a constant exponent (integer exponents permit a
        negative base)."""
        v = self.value
        if v == 0.0:
            if c > 1.0:
                return DualNumber(0.0, 0.0)
            if c == 1.0:
                return DualNumber(0.0, self.deriv)
            raise DomainError(f"power {c!r} of zero has no derivative")
        if v < 0.0 and c != round(c):
            raise DomainError(f"negative base {v!r} with fractional exponent")
        value = v ** c
        return DualNumber(value, c * (v ** (c - 1.0)) * self.deriv)

    # -- elementary functions ----------------------------------------------

    def exp(self):
        try:
            e = math.exp(self.value)
        except OverflowError:
            e = math.inf
        return DualNumber(e, e * self.deriv)

    def log(self):
        if self.value <= 0.0:
            raise DomainError(f"log of non-positive value {self.value!r}")
        return DualNumber(math.log(self.value), self.deriv / self.value)

    def sqrt(self):
        if self.value < 0.0:
            raise DomainError(f"sqrt of negative value {self.value!r}")
        if self.value == 0.0:
            if self.deriv == 0.0:
                return DualNumber(0.0, 0.0)
            raise DomainError("sqrt has no derivative at zero")
        s = math.sqrt(self.value)
        return DualNumber(s, 0.5 * self.deriv / s)

    def abs(self):
        # subgradient convention: derivative 0 at the kink
        sign = 1.0 if self.value > 0.0 else (-1.0 if self.value < 0.0 else 0.0)
        return DualNumber(abs(self.value), sign * self.deriv)

    def __abs__(self):
        return self.abs()

    def sin(self):
        return DualNumber(math.sin(self.value), math.cos(self.value) * self.deriv)

    def cos(self):
        return DualNumber(math.cos(self.value), -math.sin(self.value) * self.deriv)

    def tan(self):
        t = math.tan(self.value)
        return DualNumber(t, (1.0 + t * t) * self.deriv)


@dataclass
class GradientResult:
    """Value and gradient of a scalar function at a point.

    ``gradient[j]`` is the partial derivative with respect to ``wrt[j]``.
    ``approximate`` is True when finite differences were used (black boxes).
    """

    value: float
    gradient: np.ndarray
    approximate: bool = False


def _ranges(box, wrt):
    """Per-coordinate ranges used to scale steps; missing/infinite ranges
    borrow the widest finite one (or 1.0 when none exists)."""
    if box is None:
        return np.ones(len(wrt))
    lb, ub = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    spans = ub - lb
    finite = spans[np.isfinite(spans)]
    fallback = float(finite.max()) if finite.size else 1.0
    out = np.empty(len(wrt))
    for j, k in enumerate(wrt):
        s = spans[k]
        out[j] = s if np.isfinite(s) and s > 0.0 else fallback
    return out


def _nudge_inward(x, box):
    """Pull a point off the box boundary by BOUNDARY_NUDGE * range."""
    if box is None:
        return x
    lb, ub = np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float)
    spans = np.where(np.isfinite(ub - lb), ub - lb, 1.0)
    lo = np.where(np.isfinite(lb), lb + BOUNDARY_NUDGE * spans, -np.inf)
    hi = np.where(np.isfinite(ub), ub - BOUNDARY_NUDGE * spans, np.inf)
    return np.clip(x, lo, np.maximum(lo, hi))


def gradient(func, x, wrt=None, box=None):
    """Differentiate ``func`` at ``x`` with respect to coordinates ``wrt``.

    Parameters
    ----------
    func : ExpressionNode or callable
        Expression trees are differentiated exactly with dual numbers; a
        callable ``f(x) -> float`` is treated as a black box and
        differentiated by central differences with step 1e-6 * range.
    x : array_like
        Full variable vector.
    wrt : sequence of int, optional
        Coordinate indices to differentiate against.  Defaults to the
        expression's free variables, or all coordinates for a black box.
    box : (lb, ub), optional
        Variable bounds; used to scale finite-difference steps and to retry
        once from slightly inside the box when evaluation fails on the
        boundary.

    Returns
    -------
    GradientResult
    """
    x = np.asarray(x, dtype=float)
    if isinstance(func, ExpressionNode):
        if wrt is None:
            from .expressions import free_variables

            wrt = free_variables(func)
        wrt = list(wrt)
        try:
            return _dual_gradient(func, x, wrt)
        except DomainError:
            retry = _nudge_inward(x, box)
            if box is None or np.array_equal(retry, x):
                raise
            return _dual_gradient(func, retry, wrt)
    if wrt is None:
        wrt = list(range(len(x)))
    wrt = list(wrt)
    try:
        return _fd_gradient(func, x, wrt, box)
    except DomainError:
        retry = _nudge_inward(x, box)
        if box is None or np.array_equal(retry, x):
            raise
        return _fd_gradient(func, retry, wrt, box)


def _dual_gradient(expr, x, wrt):
    values = list(map(float, x))
    grad = np.zeros(len(wrt))
    value = None
    for j, k in enumerate(wrt):
        env = list(values)
        env[k] = DualNumber(values[k], 1.0)
        out = evaluate(expr, env)
        if isinstance(out, DualNumber):
            value, grad[j] = out.value, out.deriv
        else:  # expression does not involve x_k
            value, grad[j] = float(out), 0.0
    if value is None:  # empty wrt: still report the value
        value = float(evaluate(expr, values))
    if math.isnan(value) or np.isnan(grad).any():
        raise DomainError("gradient evaluation produced NaN")
    return GradientResult(value=value, gradient=grad, approximate=False)


def _call_blackbox(func, x):
    value = func(np.asarray(x, dtype=float))
    value = float(value)
    if math.isnan(value):
        raise DomainError("black-box evaluation produced NaN")
    return value


def _fd_gradient(func, x, wrt, box):
    steps = FD_RELATIVE_STEP * _ranges(box, wrt)
    value = _call_blackbox(func, x)
    grad = np.zeros(len(wrt))
    for j, k in enumerate(wrt):
        h = steps[j]
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        try:
            grad[j] = (_call_blackbox(func, xp) - _call_blackbox(func, xm)) / (2 * h)
        except DomainError:
            # one-sided difference when the centered stencil leaves the domain
            try:
                grad[j] = (_call_blackbox(func, xp) - value) / h
            except DomainError:
                grad[j] = (value - _call_blackbox(func, xm)) / h
    return GradientResult(value=value, gradient=grad, approximate=True)
