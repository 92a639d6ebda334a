"""Exploration phase: iterated rule application to the e-graph with
saturation detection, growth limits and cycle filtering.

Each iteration searches all rules against a snapshot of the e-graph,
then applies the surviving matches:

* multi-pattern rules (only while ``iter < k_multi``) go through the
  canonical-pattern machinery: matches of each canonical source are
  decanonicalized, the Cartesian product over source positions is
  filtered by compatibility at shared variables and by shape checking,
  and each surviving combination instantiates its target patterns and
  unions them with the positionally matched e-classes;
* single-pattern rules apply the same way with a one-element product,
  and keep running after the multi-pattern budget is exhausted.

Multi-pattern rules can grow the e-graph at a doubly exponential rate
(pairs of pairs of matches), hence the separate ``k_multi`` budget.

Cycle filtering is per ``filter_mode``: "vanilla" checks every match by
applying it on a scratch clone (complete, O(N) per match), "efficient"
uses the per-iteration descendants map as an O(1) pre-filter and sweeps
surviving cycles into the filter list after each iteration, "none"
leaves cycles for the extractor's ILP constraints.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .cycles import (
    FilterList,
    break_all_cycles,
    get_descendants,
    vanilla_check,
    will_create_cycle,
)
from .egraph import EGraph, Match
from .errors import AnalysisMergeError, TensorSatError
from .rules import (
    CanonicalPattern,
    RewriteRule,
    combined_subst,
    compatible,
    decanonicalize,
    shape_check,
)
from .sexpr import Term
from .tensor_lang import TensorGraph, build_egraph

FILTER_MODES = ("none", "vanilla", "efficient")


@dataclass
class ExploreLimits:
    n_max: int = 50000
    k_max: int = 15
    k_multi: int = 1
    time_limit_s: Optional[float] = None

    def __post_init__(self):
        if min(self.n_max, self.k_max, self.k_multi) < 0:
            raise ValueError("limits must be non-negative")
        if self.k_multi > self.k_max:
            raise ValueError("k_multi must be <= k_max")


@dataclass
class RuleStats:
    found: int = 0
    applied: int = 0
    applied_noop: int = 0
    skipped_self: int = 0
    skipped_compat: int = 0
    skipped_shape: int = 0
    skipped_cycle: int = 0


@dataclass
class ExploreReport:
    iterations: int = 0
    stop_reason: str = ""
    enodes_per_iter: list[int] = field(default_factory=list)
    alloc_per_iter: list[int] = field(default_factory=list)
    eclasses_per_iter: list[int] = field(default_factory=list)
    rules: dict[str, RuleStats] = field(default_factory=dict)
    prefilter_checks: int = 0
    prefilter_rejects: int = 0
    postprocess_filtered: int = 0
    node_limit_overshoot: int = 0
    filter_size: int = 0
    time_s: float = 0.0

    @property
    def saturated(self) -> bool:
        return self.stop_reason == "saturated"

    def total(self, field_name: str) -> int:
        return sum(getattr(s, field_name) for s in self.rules.values())

    def to_stats(self) -> dict[str, object]:
        """Flat machine-readable key-value view (CLI --stats-out)."""
        out: dict[str, object] = {
            "explore.iterations": self.iterations,
            "explore.stop_reason": self.stop_reason,
            "explore.enodes_per_iter": ",".join(map(str, self.enodes_per_iter)),
            "explore.alloc_per_iter": ",".join(map(str, self.alloc_per_iter)),
            "explore.eclasses_per_iter": ",".join(map(str, self.eclasses_per_iter)),
            "explore.prefilter_checks": self.prefilter_checks,
            "explore.prefilter_rejects": self.prefilter_rejects,
            "explore.postprocess_filtered": self.postprocess_filtered,
            "explore.node_limit_overshoot": self.node_limit_overshoot,
            "explore.filter_size": self.filter_size,
            "explore.time_s": self.time_s,
        }
        for name, s in sorted(self.rules.items()):
            for f in ("found", "applied", "applied_noop", "skipped_self",
                      "skipped_compat", "skipped_shape", "skipped_cycle"):
                out[f"rule.{name}.{f}"] = getattr(s, f)
        return out


@dataclass
class _Compiled:
    rule: RewriteRule
    canon: tuple[CanonicalPattern, ...]
    target_vars: tuple[tuple[str, ...], ...]


def _compile(rules: Sequence[RewriteRule]) -> list[_Compiled]:
    return [_Compiled(r, r.canonical_sources, r.target_variables()) for r in rules]


def _search(eg: EGraph, compiled: Sequence[_Compiled], filt: FilterList) -> dict[Term, list[Match]]:
    """One e-match per unique canonical source pattern (shared across rules)."""
    table: dict[Term, list[Match]] = {}
    for c in compiled:
        for cp in c.canon:
            if cp.pattern not in table:
                table[cp.pattern] = eg.ematch(cp.pattern, filt)
    return table


def _apply_combo(eg: EGraph, rule: RewriteRule, matches: Sequence[Match]) -> bool:
    """Instantiate each target and union it with its matched class.

    Returns True iff the e-graph changed (new nodes or a real merge).
    Bindings may be stale (search snapshot); they canonicalize here."""
    alloc_before = eg.allocated_nodes
    changed = False
    subst = combined_subst([m.subst for m in matches], eg)
    try:
        for tgt, m in zip(rule.targets, matches):
            new_cid = eg.add_term(tgt, subst)
            old_cid = eg.find(m.eclass)
            if eg.find(new_cid) != old_cid:
                eg.union(old_cid, new_cid)
                changed = True
    except AnalysisMergeError as e:
        raise AnalysisMergeError(f"unsound rule {rule.name!r}: {e}") from e
    return changed or eg.allocated_nodes > alloc_before


class _Engine:
    def __init__(
        self,
        eg: EGraph,
        filt: FilterList,
        filter_mode: str,
        report: ExploreReport,
        on_reject: Optional[Callable] = None,
        allow_self_pairs: bool = False,
        deadline: Optional[float] = None,
        n_max: Optional[int] = None,
    ):
        if filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")
        self.eg = eg
        self.filt = filt
        self.filter_mode = filter_mode
        self.report = report
        self.on_reject = on_reject
        self.allow_self_pairs = allow_self_pairs
        self.deadline = deadline
        self.n_max = n_max
        self.descendants = None
        self.stop: Optional[str] = None

    def stats(self, rule: RewriteRule) -> RuleStats:
        return self.report.rules.setdefault(rule.name, RuleStats())

    def begin_iteration(self) -> None:
        if self.filter_mode == "efficient":
            self.descendants = get_descendants(self.eg, self.filt)

    def _out_of_budget(self) -> bool:
        if self.deadline is not None and time.perf_counter() > self.deadline:
            self.stop = "timeout"
            return True
        if self.n_max is not None and self.eg.num_nodes >= self.n_max:
            self.stop = "node-limit"
            self.report.node_limit_overshoot = self.eg.num_nodes - self.n_max
            return True
        return False

    def _cycle_rejected(self, c: _Compiled, matches: Sequence[Match]) -> bool:
        if self.filter_mode == "none":
            return False
        if self.filter_mode == "efficient":
            self.report.prefilter_checks += 1
            subst = combined_subst([m.subst for m in matches], self.eg)
            matched = [self.eg.find(m.eclass) for m in matches]
            leaves = [[subst[v] for v in tvars] for tvars in c.target_vars]
            hit = will_create_cycle(matched, leaves, self.descendants, self.eg)
        else:
            hit = vanilla_check(
                self.eg, self.filt, lambda g: _apply_combo(g, c.rule, matches)
            )
        if hit:
            self.report.prefilter_rejects += self.filter_mode == "efficient"
            if self.on_reject is not None:
                self.on_reject(self.eg, self.filt, c.rule, list(matches))
        return hit

    def run_rule(self, c: _Compiled, table: dict[Term, list[Match]]) -> bool:
        """Apply one rule over the searched snapshot; True iff anything changed."""
        per_source = [
            decanonicalize(table[cp.pattern], cp.rename_map) for cp in c.canon
        ]
        stats = self.stats(c.rule)
        changed = False
        for idx in itertools.product(*(range(len(ms)) for ms in per_source)):
            combo = tuple(per_source[i][k] for i, k in enumerate(idx))
            if self._out_of_budget():
                break
            stats.found += 1
            if (
                len(combo) > 1
                and not self.allow_self_pairs
                and all(k == idx[0] for k in idx[1:])
                and all(cp.pattern == c.canon[0].pattern for cp in c.canon[1:])
            ):
                # the same canonical match in every position
                stats.skipped_self += 1
                continue
            if len(combo) > 1 and not compatible([m.subst for m in combo], self.eg):
                stats.skipped_compat += 1
                continue
            if not shape_check(c.rule, combo, self.eg):
                stats.skipped_shape += 1
                continue
            if self._cycle_rejected(c, combo):
                stats.skipped_cycle += 1
                continue
            if _apply_combo(self.eg, c.rule, combo):
                stats.applied += 1
                changed = True
            else:
                stats.applied_noop += 1
        return changed

    def end_iteration(self) -> None:
        self.eg.rebuild()
        if self.filter_mode != "none":
            self.report.postprocess_filtered += break_all_cycles(self.eg, self.filt)


def apply_multi_pattern(
    eg: EGraph,
    multi_rules: Sequence[RewriteRule],
    filt: Optional[FilterList] = None,
    filter_mode: str = "none",
    allow_self_pairs: bool = False,
) -> int:
    """One multi-pattern pass (search + Cartesian product + apply).

    Returns the number of applications that changed the e-graph."""
    filt = set() if filt is None else filt
    report = ExploreReport()
    compiled = _compile([r for r in multi_rules if r.multi])
    engine = _Engine(eg, filt, filter_mode, report, allow_self_pairs=allow_self_pairs)
    engine.begin_iteration()
    table = _search(eg, compiled, filt)
    for c in compiled:
        engine.run_rule(c, table)
    engine.end_iteration()
    return report.total("applied")


def apply_single_patterns(
    eg: EGraph,
    single_rules: Sequence[RewriteRule],
    filt: Optional[FilterList] = None,
    filter_mode: str = "none",
) -> int:
    """One single-pattern pass; returns applications that changed the e-graph."""
    filt = set() if filt is None else filt
    report = ExploreReport()
    compiled = _compile([r for r in single_rules if not r.multi])
    engine = _Engine(eg, filt, filter_mode, report)
    engine.begin_iteration()
    table = _search(eg, compiled, filt)
    for c in compiled:
        engine.run_rule(c, table)
    engine.end_iteration()
    return report.total("applied")


def saturate(
    eg: EGraph,
    rules: Sequence[RewriteRule],
    limits: Optional[ExploreLimits] = None,
    filter_mode: str = "efficient",
    filt: Optional[FilterList] = None,
    on_reject: Optional[Callable] = None,
    allow_self_pairs: bool = False,
) -> tuple[FilterList, ExploreReport]:
    """Run exploration iterations on an existing e-graph until saturation
    ("no application changed the e-graph over a full iteration") or a limit."""
    limits = limits or ExploreLimits()
    filt = set() if filt is None else filt
    report = ExploreReport()
    start = time.perf_counter()
    deadline = None if limits.time_limit_s is None else start + limits.time_limit_s
    compiled = _compile(rules)
    multi = [c for c in compiled if c.rule.multi]
    single = [c for c in compiled if not c.rule.multi]
    for c in compiled:
        report.rules.setdefault(c.rule.name, RuleStats())

    engine = _Engine(
        eg, filt, filter_mode, report,
        on_reject=on_reject, allow_self_pairs=allow_self_pairs,
        deadline=deadline, n_max=limits.n_max,
    )
    stop = "iter-limit" if limits.k_max > 0 else "iter-limit"
    for iteration in range(limits.k_max):
        engine.begin_iteration()
        active = multi + single if iteration < limits.k_multi else single
        table = _search(eg, [c for c in active], filt)
        changed = False
        for c in active:
            changed |= engine.run_rule(c, table)
            if engine.stop:
                break
        engine.end_iteration()
        report.iterations = iteration + 1
        report.enodes_per_iter.append(eg.num_nodes)
        report.alloc_per_iter.append(eg.allocated_nodes)
        report.eclasses_per_iter.append(eg.num_classes)
        if engine.stop:
            stop = engine.stop
            break
        if not changed:
            stop = "saturated"
            break
        if deadline is not None and time.perf_counter() > deadline:
            stop = "timeout"
            break
    report.stop_reason = stop
    report.filter_size = len(filt)
    report.time_s = time.perf_counter() - start
    return filt, report


def explore(
    g: TensorGraph,
    rules: Sequence[RewriteRule],
    limits: Optional[ExploreLimits] = None,
    filter_mode: str = "efficient",
    on_reject: Optional[Callable] = None,
    allow_self_pairs: bool = False,
) -> tuple[EGraph, FilterList, ExploreReport]:
    """End-to-end exploration for a single-rooted tensor graph."""
    if g.root is None:
        raise TensorSatError("graph must be single-rooted (run make_single_rooted)")
    eg, _ = build_egraph(g)
    filt, report = saturate(
        eg, rules, limits, filter_mode,
        on_reject=on_reject, allow_self_pairs=allow_self_pairs,
    )
    return eg, filt, report
