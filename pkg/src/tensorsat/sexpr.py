"""S-expression terms and patterns.

Terms are the common currency between the rule engine, the tensor
language and the e-graph:

* ``App(op, args)`` -- an operator application; a bare atom is a
  zero-argument application (``a`` == ``(a)``).  Operator symbols are
  strings; integer atoms keep their ``int`` value as the op.
* ``Var("x")`` -- a pattern variable, written ``?x``.

A term with no variables is *ground*.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import SExprError

Atom = Union[int, str]


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


@dataclass(frozen=True)
class App:
    op: Atom
    args: tuple["Term", ...] = ()

    def __str__(self) -> str:
        return format_term(self)


Term = Union[Var, App]

_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_INT = re.compile(r"-?\d+\Z")


def _atom(tok: str) -> Term:
    if tok.startswith("?"):
        if len(tok) == 1:
            raise SExprError("empty variable name '?'")
        return Var(tok[1:])
    if _INT.match(tok):
        return App(int(tok))
    return App(tok)


def parse(text: str) -> Term:
    """Parse a single S-expression; raises SExprError on trailing input."""
    terms = parse_many(text)
    if len(terms) != 1:
        raise SExprError(f"expected one expression, found {len(terms)}: {text!r}")
    return terms[0]


def parse_many(text: str) -> list[Term]:
    """Parse zero or more whitespace-separated S-expressions."""
    tokens = _TOKEN.findall(text)
    pos = 0

    def parse_one() -> Term:
        nonlocal pos
        if pos >= len(tokens):
            raise SExprError(f"unexpected end of input in {text!r}")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise SExprError(f"unexpected ')' in {text!r}")
        if tok != "(":
            return _atom(tok)
        if pos >= len(tokens):
            raise SExprError(f"unclosed '(' in {text!r}")
        head = tokens[pos]
        pos += 1
        if head in ("(", ")"):
            raise SExprError(f"operator expected after '(' in {text!r}")
        head_term = _atom(head)
        if isinstance(head_term, Var):
            raise SExprError(f"variable {head_term} cannot be an operator")
        args = []
        while True:
            if pos >= len(tokens):
                raise SExprError(f"unclosed '(' in {text!r}")
            if tokens[pos] == ")":
                pos += 1
                return App(head_term.op, tuple(args))
            args.append(parse_one())

    out = []
    while pos < len(tokens):
        out.append(parse_one())
    return out


def format_term(t: Term) -> str:
    if isinstance(t, Var):
        return f"?{t.name}"
    if not t.args:
        return str(t.op)
    return "(" + " ".join([str(t.op)] + [format_term(a) for a in t.args]) + ")"


def walk(t: Term) -> Iterator[Term]:
    """Pre-order traversal."""
    yield t
    if isinstance(t, App):
        for a in t.args:
            yield from walk(a)


def variables(t: Term) -> list[str]:
    """Variable names in first-occurrence pre-order, deduplicated."""
    seen: dict[str, None] = {}
    for sub in walk(t):
        if isinstance(sub, Var):
            seen.setdefault(sub.name, None)
    return list(seen)


def is_ground(t: Term) -> bool:
    return all(not isinstance(sub, Var) for sub in walk(t))


def depth(t: Term) -> int:
    if isinstance(t, Var) or not t.args:
        return 1
    return 1 + max(depth(a) for a in t.args)
