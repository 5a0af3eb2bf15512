"""Small arithmetic expression language for analytic scenario data.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := atom ('^' unary)?
    atom    := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Names are the constants ``pi`` and ``e``, the variables ``x1..xk``,
``y1..y(n-k)`` and ``t``, and the functions sin, cos, tan, log, exp, sqrt
and pow. Evaluation is vectorized over numpy arrays; nothing is passed to
``eval``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    def __init__(self, message, source="", pos=None):
        self.source = source
        self.pos = pos
        where = f" at column {pos + 1}" if pos is not None else ""
        super().__init__(f"{message}{where} in {source!r}" if source else message)


FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tan": (1, np.tan),
    "log": (1, np.log),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "pow": (2, np.power),
}
CONSTANTS = {"pi": np.pi, "e": np.e}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>\*\*|[-+*/^(),]))"
)


@dataclass(frozen=True)
class Num:
    value: float

    def evaluate(self, env):
        return self.value


@dataclass(frozen=True)
class Var:
    name: str

    def evaluate(self, env):
        return env[self.name]


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            return a / b
        return np.power(a, b)


@dataclass(frozen=True)
class Neg:
    arg: object

    def evaluate(self, env):
        return -self.arg.evaluate(env)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple

    def evaluate(self, env):
        fn = FUNCTIONS[self.name][1]
        return fn(*(a.evaluate(env) for a in self.args))


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            col = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionError(f"unexpected character {src[col]!r}", src, col)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


class _Parser:
    def __init__(self, src, variables):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value:
            found = text or "end of input"
            raise ExpressionError(f"expected {value!r}, found {found!r}", self.src, pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected {text!r}", self.src, pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[1] in ("^", "**"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise ExpressionError(f"unknown function {text!r}", self.src, pos)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                arity = FUNCTIONS[text][0]
                if len(args) != arity:
                    raise ExpressionError(
                        f"{text} takes {arity} argument(s), got {len(args)}", self.src, pos
                    )
                return Call(text, tuple(args))
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text not in self.variables:
                raise ExpressionError(f"unknown variable {text!r}", self.src, pos)
            return Var(text)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = text or "end of input"
        raise ExpressionError(f"unexpected {found!r}", self.src, pos)


def variable_names(k, n):
    return {f"x{i + 1}" for i in range(k)} | {f"y{a + 1}" for a in range(n - k)} | {"t"}


class Expression:
    """Parsed expression evaluated on ambient points and times."""

    def __init__(self, source: str, k: int, n: int):
        self.source = source
        self.k = k
        self.n = n
        self.tree = _Parser(source, variable_names(k, n)).parse()

    def __repr__(self):
        return f"Expression({self.source!r})"

    def env(self, points, t):
        points = np.asarray(points, dtype=float)
        env = {f"x{i + 1}": points[..., i] for i in range(self.k)}
        env.update({f"y{a + 1}": points[..., self.k + a] for a in range(self.n - self.k)})
        env["t"] = t
        return env

    def __call__(self, points, t):
        """Evaluate at ambient points (..., n) and time t."""
        points = np.asarray(points, dtype=float)
        with np.errstate(all="ignore"):
            out = self.tree.evaluate(self.env(points, t))
        return np.broadcast_to(np.asarray(out, dtype=float), points.shape[:-1]).copy()


def parse_vector(sources, k, n, length=None):
    """Parse a list of component expressions."""
    if isinstance(sources, str):
        raise ExpressionError("expected a list of component expressions")
    if length is not None and len(sources) != length:
        raise ExpressionError(f"expected {length} components, got {len(sources)}")
    return [Expression(s, k, n) for s in sources]
