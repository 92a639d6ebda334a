"""Rewrite rules over S-expression patterns.

A rule has one or more source patterns and the same number of target
patterns; source/target outputs pair positionally.  Rules with one
pattern are *single-pattern*; rules with several are *multi-pattern*
and match through the canonical-pattern machinery: each source is
canonicalized by renaming variables to ?v0, ?v1, ... in pre-order
first-occurrence order, so patterns that differ only by variable names
share one e-graph search.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from .egraph import EGraph, Match
from .errors import GraphParseError, ShapeMismatch
from .sexpr import App, Term, Var, parse, variables
from .tensor_lang import Value, infer_shape, is_op


@dataclass(frozen=True)
class CanonicalPattern:
    pattern: Term
    rename: tuple[tuple[str, str], ...]  # original -> canonical variable name

    @property
    def rename_map(self) -> dict[str, str]:
        return dict(self.rename)


def canonicalize(pattern: Term) -> CanonicalPattern:
    """Rename variables to ?v0, ?v1, ... in first-occurrence pre-order.

    Patterns equal up to variable renaming get identical canonical forms."""
    mapping: dict[str, str] = {}

    def go(t: Term) -> Term:
        if isinstance(t, Var):
            if t.name not in mapping:
                mapping[t.name] = f"v{len(mapping)}"
            return Var(mapping[t.name])
        return App(t.op, tuple(go(a) for a in t.args))

    canon = go(pattern)
    return CanonicalPattern(canon, tuple(mapping.items()))


def decanonicalize(matches: Sequence[Match], rename: Mapping[str, str]) -> list[Match]:
    """Re-key canonical-variable bindings by the original variable names."""
    inverse = {canon: orig for orig, canon in rename.items()}
    out = []
    for m in matches:
        bindings = tuple(sorted((inverse[v], c) for v, c in m.bindings))
        out.append(Match(m.eclass, bindings))
    return out


def compatible(substs: Sequence[Mapping[str, int]], egraph: EGraph) -> bool:
    """True iff every variable shared between source patterns is bound to
    the same (canonical) e-class in all of them."""
    seen: dict[str, int] = {}
    for subst in substs:
        for var, cid in subst.items():
            cid = egraph.find(cid)
            prev = seen.setdefault(var, cid)
            if prev != cid:
                return False
    return True


def combined_subst(substs: Sequence[Mapping[str, int]], egraph: EGraph) -> dict[str, int]:
    out: dict[str, int] = {}
    for subst in substs:
        for var, cid in subst.items():
            out[var] = egraph.find(cid)
    return out


@dataclass(frozen=True)
class RewriteRule:
    name: str
    sources: tuple[Term, ...]
    targets: tuple[Term, ...]

    def __post_init__(self):
        if not self.sources or len(self.sources) != len(self.targets):
            raise GraphParseError(
                f"rule {self.name}: need equally many sources and targets (>=1)"
            )
        bound: set[str] = set()
        for s in self.sources:
            if isinstance(s, Var):
                raise GraphParseError(f"rule {self.name}: bare-variable source pattern")
            bound.update(variables(s))
        for t in self.targets:
            free = set(variables(t)) - bound
            if free:
                raise GraphParseError(
                    f"rule {self.name}: target uses unbound variables {sorted(free)}"
                )

    @property
    def multi(self) -> bool:
        return len(self.sources) > 1

    @property
    def canonical_sources(self) -> tuple[CanonicalPattern, ...]:
        return tuple(canonicalize(s) for s in self.sources)

    def target_variables(self) -> tuple[tuple[str, ...], ...]:
        return tuple(tuple(variables(t)) for t in self.targets)

    def __str__(self) -> str:
        return "{}: {} => {}".format(
            self.name,
            " ; ".join(map(str, self.sources)),
            " ; ".join(map(str, self.targets)),
        )


def eval_pattern(term: Term, subst: Mapping[str, int], egraph: EGraph) -> Value:
    """Shape-infer a pattern under a substitution, reading variable values
    from e-class analyses.  Raises ShapeMismatch on failure."""
    if isinstance(term, Var):
        return egraph.eclass(subst[term.name]).analysis
    if not term.args:
        if isinstance(term.op, int):
            return Value.of_int(term.op)
        if not is_op(term.op):
            return Value.of_str(term.op)
        raise ShapeMismatch(f"operator {term.op!r} used without arguments")
    child_values = [eval_pattern(a, subst, egraph) for a in term.args]
    return infer_shape(term.op, child_values)


def shape_check(rule: RewriteRule, matches: Sequence[Match], egraph: EGraph) -> bool:
    """True iff every target pattern shape-infers under the combined match
    and its output matches the shape of the positionally matched source
    e-class.  On a generic e-graph (no analysis client) this is trivially
    true."""
    if egraph.analysis is None:
        return True
    subst = combined_subst([m.subst for m in matches], egraph)
    for tgt, m in zip(rule.targets, matches):
        try:
            out = eval_pattern(tgt, subst, egraph)
        except ShapeMismatch:
            return False
        if not out.same_data(egraph.eclass(m.eclass).analysis):
            return False
    return True


# ------------------------------------------------------------- rule files

_STANZA = re.compile(r"([A-Za-z0-9_\-]+)\s*:\s*(.*)\Z", re.S)


_RULE_START = re.compile(r"[A-Za-z0-9_\-]+\s*:")


def parse_rules(text: str) -> list[RewriteRule]:
    """Parse the rule file format.

    One rule per stanza; a stanza starts at a ``name:`` line and may wrap
    onto following lines; ``#`` starts a comment.  Within a stanza::

        name: src1 ; src2 => tgt1 ; tgt2
    """
    rules = []
    stanza_lines: list[str] = []
    stanza_start = 0

    def flush():
        if not stanza_lines:
            return
        body = " ".join(stanza_lines)
        m = _STANZA.match(body)
        if m is None:
            raise GraphParseError(f"bad rule stanza {body!r}", line=stanza_start)
        name, rest = m.groups()
        if rest.count("=>") != 1:
            raise GraphParseError(f"rule {name}: need exactly one '=>'", line=stanza_start)
        src_text, tgt_text = rest.split("=>")
        try:
            sources = tuple(parse(p) for p in src_text.split(";"))
            targets = tuple(parse(p) for p in tgt_text.split(";"))
            rules.append(RewriteRule(name, sources, targets))
        except GraphParseError as e:
            raise GraphParseError(str(e), line=stanza_start) from None
        except Exception as e:
            raise GraphParseError(f"rule {name}: {e}", line=stanza_start) from None
        stanza_lines.clear()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            flush()
            continue
        if _RULE_START.match(line.strip()):
            flush()
            stanza_start = lineno
        elif not stanza_lines:
            raise GraphParseError(f"expected 'name:' to start a rule, got {line.strip()!r}", line=lineno)
        stanza_lines.append(line.strip())
    flush()
    seen: set[str] = set()
    for r in rules:
        if r.name in seen:
            raise GraphParseError(f"duplicate rule name {r.name!r}")
        seen.add(r.name)
    return rules


@lru_cache(maxsize=1)
def default_rules() -> tuple[RewriteRule, ...]:
    """The shipped ruleset (see data/default.rules)."""
    text = resources.files("tensorsat.data").joinpath("default.rules").read_text()
    return tuple(parse_rules(text))
