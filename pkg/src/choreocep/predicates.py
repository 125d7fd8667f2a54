"""A small comparison language for filter, division and pattern predicates.

Grammar::

    expr       := or_expr
    or_expr    := and_expr ("or" and_expr)*
    and_expr   := unary ("and" unary)*
    unary      := "not" unary | "(" expr ")" | comparison
    comparison := NAME OP literal
    OP         := "==" | "!=" | "<" | "<=" | ">" | ">="
    literal    := number | 'text' | "text" | true | false

Examples: ``speed > 80``, ``available == true and grade >= 3``,
``payment == 'time' or payment == 'distance'``.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .errors import DefinitionError, EvaluationError, MissingAttributeError

_TOKEN = re.compile(
    r"""\s*(?:
        (?P<num>-?\d+(?:\.\d*)?(?:[eE][-+]?\d+)?)
      | (?P<str>'[^']*'|"[^"]*")
      | (?P<op>==|!=|<=|>=|<|>)
      | (?P<paren>[()])
      | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
    )""",
    re.VERBOSE,
)

_OPS: dict[str, Callable[[Any, Any], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}

_KEYWORDS = {"and", "or", "not", "true", "false"}


def _tokenize(text: str) -> list[tuple[str, Any]]:
    tokens: list[tuple[str, Any]] = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise DefinitionError(f"unexpected input at {pos} in predicate {text!r}")
        pos = m.end()
        kind = m.lastgroup
        value = m.group(kind)
        if kind == "num":
            tokens.append(("lit", float(value) if any(c in value for c in ".eE") else int(value)))
        elif kind == "str":
            tokens.append(("lit", value[1:-1]))
        elif kind == "name" and value in ("true", "false"):
            tokens.append(("lit", value == "true"))
        elif kind == "name" and value in _KEYWORDS:
            tokens.append((value, value))
        else:
            tokens.append((kind, value))
    return tokens


@dataclass(frozen=True)
class Predicate:
    """A compiled predicate; call it with an attribute mapping."""

    source: str
    attributes: frozenset[str]
    _fn: Callable[[Mapping[str, Any]], bool]

    def __call__(self, attrs: Mapping[str, Any]) -> bool:
        return self._fn(attrs)


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.names: set[str] = set()

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def take(self, kind: str | None = None) -> tuple[str, Any]:
        if self.i >= len(self.tokens):
            raise DefinitionError(f"unexpected end of predicate {self.text!r}")
        tok = self.tokens[self.i]
        if kind is not None and tok[0] != kind:
            raise DefinitionError(f"expected {kind}, got {tok[1]!r} in {self.text!r}")
        self.i += 1
        return tok

    def parse(self) -> Callable[[Mapping[str, Any]], bool]:
        fn = self.or_expr()
        if self.i != len(self.tokens):
            raise DefinitionError(f"trailing input {self.tokens[self.i][1]!r} in {self.text!r}")
        return fn

    def or_expr(self):
        parts = [self.and_expr()]
        while self.peek() == "or":
            self.take()
            parts.append(self.and_expr())
        if len(parts) == 1:
            return parts[0]
        return lambda a: any(p(a) for p in parts)

    def and_expr(self):
        parts = [self.unary()]
        while self.peek() == "and":
            self.take()
            parts.append(self.unary())
        if len(parts) == 1:
            return parts[0]
        return lambda a: all(p(a) for p in parts)

    def unary(self):
        kind = self.peek()
        if kind == "not":
            self.take()
            inner = self.unary()
            return lambda a: not inner(a)
        if kind == "paren":
            if self.tokens[self.i][1] != "(":
                raise DefinitionError(f"unexpected ')' in {self.text!r}")
            self.take()
            inner = self.or_expr()
            tok = self.take("paren")
            if tok[1] != ")":
                raise DefinitionError(f"expected ')' in {self.text!r}")
            return inner
        return self.comparison()

    def comparison(self):
        _, name = self.take("name")
        _, op = self.take("op")
        _, literal = self.take("lit")
        self.names.add(name)
        cmp = _OPS[op]

        def check(attrs: Mapping[str, Any]) -> bool:
            try:
                value = attrs[name]
            except KeyError:
                raise MissingAttributeError(name) from None
            try:
                return bool(cmp(value, literal))
            except TypeError:
                raise EvaluationError(
                    f"cannot compare {name}={value!r} with {literal!r}"
                ) from None

        return check


def compile_predicate(text: str) -> Predicate:
    if not isinstance(text, str) or not text.strip():
        raise DefinitionError("predicate must be a non-empty string")
    parser = _Parser(text)
    fn = parser.parse()
    return Predicate(text, frozenset(parser.names), fn)
