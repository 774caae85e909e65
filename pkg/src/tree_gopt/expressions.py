"""Expression trees for nonlinear constraint and objective bodies.

An :class:`ExpressionNode` is a small AST over variables and constants with
the operator set ``+ - * / ^`` and the functions ``exp, log, sqrt, abs, min,
max, sin, cos, tan``.  The same tree evaluates on plain floats, on numpy
column vectors (one value per sample point), and on dual numbers — anything
that implements the arithmetic operators plus ``log``/``exp``/... methods.

Scalar evaluation is strict: domain violations (log of a non-positive value,
division by zero, ...) and NaN results raise :class:`DomainError` annotated
with the offending subexpression.  The vectorized path used by the sampler is
forgiving instead: bad rows come back as NaN with a validity mask.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import DomainError, ParseError

__all__ = [
    "ExpressionNode",
    "Const",
    "Var",
    "Neg",
    "BinaryOp",
    "Call",
    "parse_expression",
    "to_string",
    "evaluate",
    "evaluate_many",
    "free_variables",
    "affine_decompose",
    "split_affine_part",
]

_FUNCTIONS = {
    "exp": 1,
    "log": 1,
    "sqrt": 1,
    "abs": 1,
    "sin": 1,
    "cos": 1,
    "tan": 1,
    "min": 2,
    "max": 2,
}


# ---------------------------------------------------------------------------
# AST nodes
# ---------------------------------------------------------------------------


class ExpressionNode:
    """Base class for expression tree nodes."""

    __slots__ = ()

    def evaluate(self, values):
        """Evaluate at ``values`` (indexable by variable index), strictly."""
        return evaluate(self, values)

    def __str__(self):
        return to_string(self)

    def __repr__(self):
        return f"{type(self).__name__}({to_string(self)!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))


class Const(ExpressionNode):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)

    def _key(self):
        return (self.value,)


class Var(ExpressionNode):
    """A reference to problem variable ``index`` (``name`` is for printing)."""

    __slots__ = ("index", "name")

    def __init__(self, index, name):
        self.index = int(index)
        self.name = str(name)

    def _key(self):
        return (self.index,)


class Neg(ExpressionNode):
    __slots__ = ("child",)

    def __init__(self, child):
        self.child = child

    def _key(self):
        return (self.child,)


class BinaryOp(ExpressionNode):
    """One of ``+ - * / ^`` applied to two subtrees."""

    __slots__ = ("op", "left", "right")

    def __init__(self, op, left, right):
        if op not in ("+", "-", "*", "/", "^"):
            raise ValueError(f"unknown binary operator {op!r}")
        self.op = op
        self.left = left
        self.right = right

    def _key(self):
        return (self.op, self.left, self.right)


class Call(ExpressionNode):
    """A function application: exp/log/sqrt/abs/sin/cos/tan (unary) or
    min/max (binary)."""

    __slots__ = ("func", "args")

    def __init__(self, func, args):
        if func not in _FUNCTIONS:
            raise ValueError(f"unknown function {func!r}")
        if len(args) != _FUNCTIONS[func]:
            raise ValueError(
                f"{func} expects {_FUNCTIONS[func]} argument(s), got {len(args)}"
            )
        self.func = func
        self.args = tuple(args)

    def _key(self):
        return (self.func, self.args)


# ---------------------------------------------------------------------------
# Strict scalar evaluation (floats and dual numbers)
# ---------------------------------------------------------------------------


def _is_real(x):
    return isinstance(x, (int, float, np.floating, np.integer))


def _fail(node, message):
    raise DomainError(message, subexpression=to_string(node))


def _check_nan(node, result):
    if _is_real(result) and math.isnan(result):
        _fail(node, "evaluation produced NaN")
    return result


def _eval_call(node, arg_values):
    """Apply ``node.func``.  Dual-like arguments are dispatched to their own
    methods, which perform equivalent domain checks."""
    func = node.func
    if func in ("min", "max"):
        a, b = arg_values
        if _is_real(a) and _is_real(b):
            return min(a, b) if func == "min" else max(a, b)
        # dual-like: compare primal values, ties go to the first argument
        av = a.value if not _is_real(a) else a
        bv = b.value if not _is_real(b) else b
        if func == "min":
            chosen = a if av <= bv else b
        else:
            chosen = a if av >= bv else b
        return chosen

    (x,) = arg_values
    if not _is_real(x):
        try:
            return getattr(x, func)()
        except DomainError as err:
            if err.subexpression is None:
                err.subexpression = to_string(node)
            raise
    if math.isnan(x):
        _fail(node, "NaN input")
    if func == "log":
        if x <= 0.0:
            _fail(node, f"log of non-positive value {x!r}")
        return math.log(x)
    if func == "sqrt":
        if x < 0.0:
            _fail(node, f"sqrt of negative value {x!r}")
        return math.sqrt(x)
    if func == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return math.inf
    if func == "abs":
        return abs(x)
    if func == "sin":
        return math.sin(x)
    if func == "cos":
        return math.cos(x)
    if func == "tan":
        return math.tan(x)
    raise AssertionError(func)


def _eval_pow(node, base, expo):
    """Power with the usual piecewise domain rules.

    Integer constant exponents follow the algebraic power rule (negative
    bases allowed); fractional exponents require a non-negative base.
    """
    if _is_real(expo):
        if _is_real(base):
            if base == 0.0 and expo < 0.0:
                _fail(node, "zero raised to a negative power")
            if base < 0.0 and expo != round(expo):
                _fail(node, f"negative base {base!r} with fractional exponent")
            try:
                return base ** expo
            except OverflowError:
                return math.inf
        # dual base, constant exponent
        try:
            return base.pow_const(float(expo))
        except DomainError as err:
            if err.subexpression is None:
                err.subexpression = to_string(node)
            raise
    # non-constant exponent: route through exp(expo * log(base))
    base_v = base if _is_real(base) else base.value
    if base_v <= 0.0:
        _fail(node, "non-constant exponent requires a positive base")
    if _is_real(base) and _is_real(expo):
        return math.exp(expo * math.log(base))
    log_base = base.log() if not _is_real(base) else math.log(base)
    product = expo * log_base
    return product.exp() if not _is_real(product) else math.exp(product)


def evaluate(expr, values):
    """Strictly evaluate ``expr`` at ``values``.

    ``values`` is indexable by variable index; entries may be floats or
    dual-number objects.  Raises :class:`DomainError` on domain violations or
    NaN propagation, naming the innermost offending subexpression.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        v = values[expr.index]
        if _is_real(v) and math.isnan(v):
            _fail(expr, f"variable {expr.name} is NaN")
        return v
    if isinstance(expr, Neg):
        return -evaluate(expr.child, values)
    if isinstance(expr, BinaryOp):
        left = evaluate(expr.left, values)
        right = evaluate(expr.right, values)
        op = expr.op
        if op == "+":
            return _check_nan(expr, left + right)
        if op == "-":
            return _check_nan(expr, left - right)
        if op == "*":
            return _check_nan(expr, left * right)
        if op == "/":
            rv = right if _is_real(right) else right.value
            if rv == 0.0:
                _fail(expr, "division by zero")
            return _check_nan(expr, left / right)
        return _check_nan(expr, _eval_pow(expr, left, right))
    if isinstance(expr, Call):
        args = [evaluate(a, values) for a in expr.args]
        return _eval_call(expr, args)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Vectorized evaluation (sampler path)
# ---------------------------------------------------------------------------


def evaluate_many(expr, columns):
    """Evaluate ``expr`` on many points at once.

    Parameters
    ----------
    expr : ExpressionNode
    columns : mapping or sequence
        ``columns[i]`` is a 1-D float array with the values of variable ``i``
        for every point.

    Returns
    -------
    values : ndarray
        Expression values; rows that hit a domain violation are NaN.
    valid : ndarray of bool
        False where the evaluation left the domain.
    """
    with np.errstate(all="ignore"):
        out = np.asarray(_eval_vec(expr, columns), dtype=float)
    valid = np.isfinite(out)
    out = np.where(valid, out, np.nan)
    return out, valid


def _eval_vec(expr, columns):
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return np.asarray(columns[expr.index], dtype=float)
    if isinstance(expr, Neg):
        return -_eval_vec(expr.child, columns)
    if isinstance(expr, BinaryOp):
        left = _eval_vec(expr.left, columns)
        right = _eval_vec(expr.right, columns)
        op = expr.op
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        if op == "/":
            return np.where(right == 0.0, np.nan, left) / np.where(
                right == 0.0, 1.0, right
            )
        # '^': mirror the scalar domain rules without raising
        if isinstance(expr.right, Const) and float(
            expr.right.value
        ) == round(expr.right.value):
            return np.power(left, expr.right.value)
        bad = left < 0.0
        safe = np.where(bad, 1.0, left)
        return np.where(bad, np.nan, np.power(safe, right))
    if isinstance(expr, Call):
        args = [_eval_vec(a, columns) for a in expr.args]
        f = expr.func
        if f == "min":
            return np.minimum(*args)
        if f == "max":
            return np.maximum(*args)
        (x,) = args
        if f == "log":
            bad = x <= 0.0
            return np.where(bad, np.nan, np.log(np.where(bad, 1.0, x)))
        if f == "sqrt":
            bad = x < 0.0
            return np.where(bad, np.nan, np.sqrt(np.where(bad, 0.0, x)))
        return getattr(np, f)(x)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Structure helpers
# ---------------------------------------------------------------------------


def free_variables(expr):
    """Indices of the variables referenced by ``expr``, sorted."""
    found = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            found.add(node.index)
        elif isinstance(node, Neg):
            stack.append(node.child)
        elif isinstance(node, BinaryOp):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Call):
            stack.extend(node.args)
    return sorted(found)


def affine_decompose(expr):
    """Return ``(coeffs, constant)`` if ``expr`` is syntactically affine,
    else None.  ``coeffs`` maps variable index -> coefficient."""
    result = _affine(expr)
    if result is None:
        return None
    coeffs, const = result
    coeffs = {i: c for i, c in coeffs.items() if c != 0.0}
    return coeffs, const


def _affine(expr):
    if isinstance(expr, Const):
        return {}, expr.value
    if isinstance(expr, Var):
        return {expr.index: 1.0}, 0.0
    if isinstance(expr, Neg):
        sub = _affine(expr.child)
        if sub is None:
            return None
        coeffs, const = sub
        return {i: -c for i, c in coeffs.items()}, -const
    if isinstance(expr, BinaryOp):
        if expr.op in ("+", "-"):
            left = _affine(expr.left)
            right = _affine(expr.right)
            if left is None or right is None:
                return None
            sign = 1.0 if expr.op == "+" else -1.0
            coeffs = dict(left[0])
            for i, c in right[0].items():
                coeffs[i] = coeffs.get(i, 0.0) + sign * c
            return coeffs, left[1] + sign * right[1]
        if expr.op == "*":
            left = _affine(expr.left)
            right = _affine(expr.right)
            if left is None or right is None:
                return None
            lc, lb = left
            rc, rb = right
            if not lc:  # constant * affine
                return {i: lb * c for i, c in rc.items()}, lb * rb
            if not rc:  # affine * constant
                return {i: rb * c for i, c in lc.items()}, lb * rb
            return None
        if expr.op == "/":
            left = _affine(expr.left)
            right = _affine(expr.right)
            if left is None or right is None or right[0]:
                return None
            if right[1] == 0.0:
                return None
            return {i: c / right[1] for i, c in left[0].items()}, left[1] / right[1]
        if expr.op == "^":
            left = _affine(expr.left)
            right = _affine(expr.right)
            if (
                left is not None
                and right is not None
                and not left[0]
                and not right[0]
            ):
                # constant ^ constant folds to a constant
                try:
                    return {}, float(left[1] ** right[1])
                except (OverflowError, ValueError, ZeroDivisionError):
                    return None
            return None
    if isinstance(expr, Call):
        # constant-folding through functions of constants
        subs = [_affine(a) for a in expr.args]
        if all(s is not None and not s[0] for s in subs):
            try:
                value = _eval_call(expr, [s[1] for s in subs])
            except DomainError:
                return None
            return {}, float(value)
        return None
    return None


def split_affine_part(expr):
    """Split a top-level sum into its affine terms and the rest.

    Returns ``(coeffs, constant, remainder)`` where ``remainder`` is an
    ExpressionNode holding the non-affine terms (or None when the whole
    expression is affine).  The input satisfies
    ``expr == coeffs·x + constant + remainder``.
    """
    terms = []
    _flatten_sum(expr, 1.0, terms)
    coeffs, const = {}, 0.0
    rest = None
    for sign, term in terms:
        dec = affine_decompose(term)
        if dec is not None:
            for i, c in dec[0].items():
                coeffs[i] = coeffs.get(i, 0.0) + sign * c
            const += sign * dec[1]
        else:
            signed = term if sign > 0 else Neg(term)
            rest = signed if rest is None else BinaryOp("+", rest, signed)
    coeffs = {i: c for i, c in coeffs.items() if c != 0.0}
    return coeffs, const, rest


def _flatten_sum(expr, sign, out):
    if isinstance(expr, BinaryOp) and expr.op in ("+", "-"):
        _flatten_sum(expr.left, sign, out)
        _flatten_sum(expr.right, sign if expr.op == "+" else -sign, out)
    elif isinstance(expr, Neg):
        _flatten_sum(expr.child, -sign, out)
    else:
        out.append((sign, expr))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_NUMBER_START = set("0123456789.")


class _Tokenizer:
    def __init__(self, text):
        self.text = text
        self.pos = 0
        self.tokens = []
        self._scan()
        self.index = 0

    def _scan(self):
        text = self.text
        i = 0
        n = len(text)
        while i < n:
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            if ch in _NUMBER_START:
                j = i
                seen_e = False
                while j < n:
                    c = text[j]
                    if c.isdigit() or c == ".":
                        j += 1
                    elif c in "eE" and not seen_e:
                        # exponent only if followed by digits or sign+digits
                        k = j + 1
                        if k < n and text[k] in "+-":
                            k += 1
                        if k < n and text[k].isdigit():
                            seen_e = True
                            j = k + 1
                        else:
                            break
                    else:
                        break
                try:
                    value = float(text[i:j])
                except ValueError:
                    raise ParseError(f"bad number literal {text[i:j]!r}", i)
                self.tokens.append(("num", value, i))
                i = j
            elif ch.isalpha() or ch == "_":
                j = i
                while j < n and (text[j].isalnum() or text[j] == "_"):
                    j += 1
                self.tokens.append(("ident", text[i:j], i))
                i = j
            elif ch == "*" and i + 1 < n and text[i + 1] == "*":
                self.tokens.append(("op", "^", i))
                i += 2
            elif ch in "+-*/^(),":
                self.tokens.append(("op", ch, i))
                i += 1
            else:
                raise ParseError(f"unexpected character {ch!r}", i)
        self.tokens.append(("end", None, n))

    def peek(self):
        return self.tokens[self.index]

    def next(self):
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def expect(self, op):
        kind, value, pos = self.next()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}, found {value!r}", pos)


class _Parser:
    def __init__(self, text, name_to_index):
        self.toks = _Tokenizer(text)
        self.names = name_to_index

    def parse(self):
        expr = self._expression()
        kind, value, pos = self.toks.peek()
        if kind != "end":
            if kind == "op" and value == ")":
                raise ParseError("unbalanced closing parenthesis", pos)
            raise ParseError(f"unexpected trailing input {value!r}", pos)
        return expr

    def _expression(self):
        node = self._term()
        while True:
            kind, value, _ = self.toks.peek()
            if kind == "op" and value in "+-":
                self.toks.next()
                node = BinaryOp(value, node, self._term())
            else:
                return node

    def _term(self):
        node = self._factor()
        while True:
            kind, value, _ = self.toks.peek()
            if kind == "op" and value in "*/":
                self.toks.next()
                node = BinaryOp(value, node, self._factor())
            else:
                return node

    def _factor(self):
        kind, value, _ = self.toks.peek()
        if kind == "op" and value == "-":
            self.toks.next()
            child = self._factor()
            if isinstance(child, Const):
                return Const(-child.value)
            return Neg(child)
        if kind == "op" and value == "+":
            self.toks.next()
            return self._factor()
        return self._power()

    def _power(self):
        base = self._atom()
        kind, value, _ = self.toks.peek()
        if kind == "op" and value == "^":
            self.toks.next()
            return BinaryOp("^", base, self._factor())
        return base

    def _atom(self):
        kind, value, pos = self.toks.next()
        if kind == "num":
            return Const(value)
        if kind == "ident":
            nxt_kind, nxt_val, _ = self.toks.peek()
            if nxt_kind == "op" and nxt_val == "(":
                if value not in _FUNCTIONS:
                    raise ParseError(f"unknown function {value!r}", pos)
                self.toks.next()
                args = [self._expression()]
                while True:
                    k, v, p = self.toks.peek()
                    if k == "op" and v == ",":
                        self.toks.next()
                        args.append(self._expression())
                    elif k == "op" and v == ")":
                        self.toks.next()
                        break
                    elif k == "end":
                        raise ParseError("unbalanced opening parenthesis", p)
                    else:
                        raise ParseError(f"expected ',' or ')', found {v!r}", p)
                if len(args) != _FUNCTIONS[value]:
                    raise ParseError(
                        f"{value} expects {_FUNCTIONS[value]} argument(s), "
                        f"got {len(args)}",
                        pos,
                    )
                return Call(value, args)
            if value not in self.names:
                raise ParseError(f"unknown identifier {value!r}", pos)
            return Var(self.names[value], value)
        if kind == "op" and value == "(":
            node = self._expression()
            k, v, p = self.toks.peek()
            if k == "op" and v == ")":
                self.toks.next()
                return node
            raise ParseError("unbalanced opening parenthesis", p)
        raise ParseError(f"unexpected token {value!r}", pos)


def parse_expression(text, variables):
    """Parse ``text`` into an :class:`ExpressionNode`.

    ``variables`` maps variable name -> index, or is a sequence of objects
    with ``.name`` attributes (index = position).
    """
    if not isinstance(variables, dict):
        variables = {v.name: i for i, v in enumerate(variables)}
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------------------
# Canonical printer
# ---------------------------------------------------------------------------

# precedence levels: sum=1, product=2, unary minus=3, power=4, atom=5


def to_string(expr):
    """Print ``expr`` in canonical infix form; reparsing reproduces the
    same tree."""
    return _print(expr, 0)


def _print(expr, parent_prec):
    if isinstance(expr, Const):
        text = repr(expr.value)
        if expr.value < 0.0:
            return f"({text})" if parent_prec > 1 else text
        return text
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = _print(expr.child, 3)
        text = f"-{inner}"
        return f"({text})" if parent_prec > 2 else text
    if isinstance(expr, BinaryOp):
        op = expr.op
        if op in "+-":
            prec = 1
            left = _print(expr.left, prec)
            right = _print(expr.right, prec + 1)
            text = f"{left} {op} {right}"
        elif op in "*/":
            prec = 2
            left = _print(expr.left, prec)
            right = _print(expr.right, prec + 1)
            text = f"{left}{op}{right}"
        else:  # power, right-associative
            prec = 4
            left = _print(expr.left, prec + 1)
            right = _print(expr.right, prec)
            text = f"{left}^{right}"
        return f"({text})" if parent_prec > prec else text
    if isinstance(expr, Call):
        args = ", ".join(_print(a, 0) for a in expr.args)
        return f"{expr.func}({args})"
    raise TypeError(f"not an expression node: {expr!r}")
