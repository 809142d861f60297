"""Small arithmetic expression language for coordinate-dependent coefficients.

Metric entries, warp profiles and manufactured solutions are written as
strings over the coordinates ``x1, x2, x3``.  The grammar is deliberately
tiny:

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          (right associative)
    atom    := NUMBER | 'pi' | 'x1' | 'x2' | 'x3'
             | FUNC '(' expr ')' | '(' expr ')'
    FUNC    := exp | sin | cos | sqrt

Expressions compile to a nested-tuple AST that can be evaluated on numpy
arrays and differentiated symbolically, so metrics defined this way get
exact first and second derivatives instead of finite differences.
"""

from __future__ import annotations

import math

import numpy as np

_FUNCS = ("exp", "sin", "cos", "sqrt")
_VARS = {"x1": 0, "x2": 1, "x3": 2}


class ExpressionError(ValueError):
    """Raised for syntax errors or unsupported constructs."""


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "+-*/^()":
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_e = False
            while j < n and (text[j].isdigit() or text[j] == "." or
                             (text[j] in "eE" and not seen_e) or
                             (text[j] in "+-" and j > i and text[j - 1] in "eE")):
                if text[j] in "eE":
                    seen_e = True
                j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExpressionError(f"bad number at position {i}: {text[i:j]!r}")
            tokens.append(("num", value, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionError(f"unexpected character {c!r} at position {i}")
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExpressionError(
                f"expected {kind!r} at position {tok[2]} in {self.text!r}, got {tok[1]!r}")
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(
                f"trailing input at position {tok[2]} in {self.text!r}: {tok[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            rhs = self.term()
            node = ("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.take()[0]
            rhs = self.unary()
            node = ("mul" if op == "*" else "div", node, rhs)
        return node

    def unary(self):
        if self.peek()[0] == "-":
            self.take()
            return ("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "^":
            self.take()
            expo = self.unary()
            return ("pow", base, expo)
        return base

    def atom(self):
        tok = self.peek()
        if tok[0] == "num":
            self.take()
            return ("num", tok[1])
        if tok[0] == "(":
            self.take()
            node = self.expr()
            self.take(")")
            return node
        if tok[0] == "name":
            self.take()
            name = tok[1]
            if name == "pi":
                return ("num", math.pi)
            if name in _VARS:
                return ("var", _VARS[name])
            if name in _FUNCS:
                self.take("(")
                arg = self.expr()
                self.take(")")
                return ("call", name, arg)
            raise ExpressionError(
                f"unknown name {name!r} at position {tok[2]}; "
                f"allowed: x1, x2, x3, pi, {', '.join(_FUNCS)}")
        raise ExpressionError(f"unexpected token {tok[1]!r} at position {tok[2]}")


def parse(text):
    """Parse ``text`` into an AST (nested tuples)."""
    if isinstance(text, tuple):
        return text
    return _Parser(str(text)).parse()


def evaluate(node, points):
    """Evaluate an AST at ``points`` with shape (..., 3); returns (...)."""
    points = np.asarray(points, dtype=float)
    kind = node[0]
    if kind == "num":
        return np.full(points.shape[:-1], node[1])
    if kind == "var":
        return points[..., node[1]]
    if kind == "neg":
        return -evaluate(node[1], points)
    if kind == "add":
        return evaluate(node[1], points) + evaluate(node[2], points)
    if kind == "sub":
        return evaluate(node[1], points) - evaluate(node[2], points)
    if kind == "mul":
        return evaluate(node[1], points) * evaluate(node[2], points)
    if kind == "div":
        return evaluate(node[1], points) / evaluate(node[2], points)
    if kind == "pow":
        return evaluate(node[1], points) ** evaluate(node[2], points)
    if kind == "call":
        arg = evaluate(node[2], points)
        return getattr(np, node[1])(arg)
    raise ExpressionError(f"bad AST node {node!r}")


def _is_const(node, value=None):
    if node[0] != "num":
        return False
    return True if value is None else node[1] == value


def simplify(node):
    kind = node[0]
    if kind in ("num", "var"):
        return node
    if kind == "neg":
        a = simplify(node[1])
        if _is_const(a):
            return ("num", -a[1])
        if a[0] == "neg":
            return a[1]
        return ("neg", a)
    if kind == "call":
        a = simplify(node[2])
        if _is_const(a):
            return ("num", float(getattr(math, node[1])(a[1])))
        return ("call", node[1], a)
    a = simplify(node[1])
    b = simplify(node[2])
    if _is_const(a) and _is_const(b):
        va, vb = a[1], b[1]
        if kind == "add":
            return ("num", va + vb)
        if kind == "sub":
            return ("num", va - vb)
        if kind == "mul":
            return ("num", va * vb)
        if kind == "div":
            return ("num", va / vb)
        if kind == "pow":
            return ("num", va ** vb)
    if kind == "add":
        if _is_const(a, 0.0):
            return b
        if _is_const(b, 0.0):
            return a
    if kind == "sub":
        if _is_const(b, 0.0):
            return a
        if _is_const(a, 0.0):
            return simplify(("neg", b))
    if kind == "mul":
        if _is_const(a, 0.0) or _is_const(b, 0.0):
            return ("num", 0.0)
        if _is_const(a, 1.0):
            return b
        if _is_const(b, 1.0):
            return a
    if kind == "div":
        if _is_const(a, 0.0):
            return ("num", 0.0)
        if _is_const(b, 1.0):
            return a
    if kind == "pow":
        if _is_const(b, 0.0):
            return ("num", 1.0)
        if _is_const(b, 1.0):
            return a
    return (kind, a, b)


def derivative(node, axis):
    """Symbolic partial derivative of an AST along ``axis`` in {0, 1, 2}."""
    return simplify(_diff(simplify(node), axis))


def _diff(node, axis):
    kind = node[0]
    if kind == "num":
        return ("num", 0.0)
    if kind == "var":
        return ("num", 1.0 if node[1] == axis else 0.0)
    if kind == "neg":
        return ("neg", _diff(node[1], axis))
    if kind == "add" or kind == "sub":
        return (kind, _diff(node[1], axis), _diff(node[2], axis))
    if kind == "mul":
        a, b = node[1], node[2]
        return ("add", ("mul", _diff(a, axis), b), ("mul", a, _diff(b, axis)))
    if kind == "div":
        a, b = node[1], node[2]
        num = ("sub", ("mul", _diff(a, axis), b), ("mul", a, _diff(b, axis)))
        return ("div", num, ("mul", b, b))
    if kind == "pow":
        base, expo = node[1], node[2]
        if expo[0] != "num":
            raise ExpressionError(
                "differentiation supports constant exponents only")
        p = expo[1]
        return ("mul", ("num", p),
                ("mul", ("pow", base, ("num", p - 1.0)), _diff(base, axis)))
    if kind == "call":
        name, arg = node[1], node[2]
        da = _diff(arg, axis)
        if name == "exp":
            outer = ("call", "exp", arg)
        elif name == "sin":
            outer = ("call", "cos", arg)
        elif name == "cos":
            outer = ("neg", ("call", "sin", arg))
        elif name == "sqrt":
            outer = ("div", ("num", 0.5), ("call", "sqrt", arg))
        else:
            raise ExpressionError(f"no derivative rule for {name!r}")
        return ("mul", outer, da)
    raise ExpressionError(f"bad AST node {node!r}")


class Expression:
    """Compiled expression: numpy evaluation plus exact derivatives."""

    def __init__(self, source):
        if isinstance(source, Expression):
            self.source = source.source
            self.ast = source.ast
        else:
            self.source = str(source)
            self.ast = simplify(parse(self.source))
        self._grad = None
        self._hess = None

    @classmethod
    def constant(cls, value):
        out = cls.__new__(cls)
        out.source = repr(float(value))
        out.ast = ("num", float(value))
        out._grad = None
        out._hess = None
        return out

    def __call__(self, points):
        return evaluate(self.ast, points)

    def gradient_asts(self):
        if self._grad is None:
            self._grad = tuple(derivative(self.ast, k) for k in range(3))
        return self._grad

    def hessian_asts(self):
        if self._hess is None:
            grads = self.gradient_asts()
            self._hess = tuple(tuple(derivative(grads[k], l) for l in range(3))
                               for k in range(3))
        return self._hess

    def grad(self, points):
        """Gradient, shape (..., 3)."""
        return np.stack([evaluate(g, points) for g in self.gradient_asts()],
                        axis=-1)

    def hess(self, points):
        """Second derivatives, shape (..., 3, 3)."""
        hs = self.hessian_asts()
        points = np.asarray(points, dtype=float)
        out = np.empty(points.shape[:-1] + (3, 3))
        for k in range(3):
            for l in range(3):
                out[..., k, l] = evaluate(hs[k][l], points)
        return out

    def is_constant(self):
        return self.ast[0] == "num"

    def __repr__(self):
        return f"Expression({self.source!r})"
