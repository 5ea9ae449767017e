"""Tiny arithmetic grammar for scenario expressions.

Scenario configs describe flows, fields and laws as plain text formulas.
This module compiles such a formula into a closed evaluation tree; no
host-language evaluation facility is involved. The grammar, with the usual
precedence and ``^`` binding tightest (right-associative)::

    expr   : term (('+' | '-') term)*
    term   : unary (('*' | '/') unary)*
    unary  : ('+' | '-') unary | power
    power  : atom ('^' unary)?
    atom   : NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Functions and constants come from :mod:`comoving.dual`, so a compiled
expression accepts dual numbers anywhere a variable appears and keeps
derivative information intact. Any other name is a free variable resolved
from the environment passed to :meth:`Expression.evaluate`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .dual import CONSTANTS, FUNCTIONS
from .errors import ConfigError

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+[eE][+-]?\d+|\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")")


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            rest = text[pos:].lstrip()
            if not rest:
                break
            raise ConfigError(
                f"unexpected character {rest[0]!r} in expression {text!r}")
        pos = match.end()
        if match.group("number") is not None:
            tok = match.group("number")
            value = int(tok) if tok.isdigit() else float(tok)
            tokens.append(("number", value))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
    return tokens


@dataclass(frozen=True)
class Expression:
    """A compiled formula: source text, free variables, evaluation tree."""

    text: str
    variables: frozenset
    _fn: object = field(repr=False)

    def evaluate(self, env):
        """Evaluate with ``env`` mapping variable names to values.

        Parameters
        ----------
        env : mapping
            Values for (at least) every name in :attr:`variables`. Dual
            numbers are accepted and propagate through every operation.
        """
        return self._fn(env)

    __call__ = evaluate


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0
        self.names = set()

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take_op(self, *ops):
        tok = self.peek()
        if tok is not None and tok[0] == "op" and tok[1] in ops:
            self.pos += 1
            return tok[1]
        return None

    def expect_op(self, op):
        if self.take_op(op) is None:
            raise ConfigError(f"expected {op!r} in expression {self.text!r}")

    def parse(self):
        fn = self.expr()
        if self.peek() is not None:
            raise ConfigError(
                f"trailing input after position {self.pos} in "
                f"expression {self.text!r}")
        return fn

    def expr(self):
        fn = self.term()
        while True:
            op = self.take_op("+", "-")
            if op is None:
                return fn
            rhs = self.term()
            if op == "+":
                fn = (lambda a, b: lambda env: a(env) + b(env))(fn, rhs)
            else:
                fn = (lambda a, b: lambda env: a(env) - b(env))(fn, rhs)

    def term(self):
        fn = self.unary()
        while True:
            op = self.take_op("*", "/")
            if op is None:
                return fn
            rhs = self.unary()
            if op == "*":
                fn = (lambda a, b: lambda env: a(env) * b(env))(fn, rhs)
            else:
                fn = (lambda a, b: lambda env: a(env) / b(env))(fn, rhs)

    def unary(self):
        if self.take_op("-") is not None:
            inner = self.unary()
            return lambda env: -inner(env)
        if self.take_op("+") is not None:
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.take_op("^") is not None:
            exponent = self.unary()
            return lambda env: base(env) ** exponent(env)
        return base

    def atom(self):
        tok = self.peek()
        if tok is None:
            raise ConfigError(f"unexpected end of expression {self.text!r}")
        kind, value = tok
        if kind == "number":
            self.pos += 1
            return lambda env: value
        if kind == "name":
            self.pos += 1
            if self.take_op("(") is not None:
                if value not in FUNCTIONS:
                    raise ConfigError(
                        f"unknown function {value!r} in "
                        f"expression {self.text!r}")
                func = FUNCTIONS[value]
                arg = self.expr()
                self.expect_op(")")
                return lambda env: func(arg(env))
            if value in CONSTANTS:
                const = CONSTANTS[value]
                return lambda env: const
            self.names.add(value)
            return _lookup(value)
        if value == "(":
            self.pos += 1
            inner = self.expr()
            self.expect_op(")")
            return inner
        raise ConfigError(
            f"unexpected {value!r} in expression {self.text!r}")


def _lookup(name):
    def fn(env):
        try:
            return env[name]
        except KeyError:
            raise ConfigError(f"unknown variable {name!r}") from None
    return fn


def parse_expression(text):
    """Compile ``text`` into an :class:`Expression`.

    Raises
    ------
    ConfigError
        On any syntax problem or reference to an unknown function.
    """
    if not isinstance(text, str) or not text.strip():
        raise ConfigError(f"expression must be nonempty text, got {text!r}")
    parser = _Parser(text)
    fn = parser.parse()
    return Expression(text, frozenset(parser.names), fn)
