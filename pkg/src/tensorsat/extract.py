"""Extraction: pick one e-node per needed e-class minimizing total cost.

Two extractors share the per-node cost vector:

* greedy -- per class, the e-node with the smallest subtree cost, to a
  fixpoint.  Fast, but it treats children independently: when siblings
  share a subgraph its cost is double counted, so greedy can miss merges
  whose payoff comes exactly from that sharing.
* ILP -- binary selection variable x_i per e-node with
  (1) x_i binary, (2) exactly one node picked in the root class,
  (3) a picked node needs a pick in each child class, and optionally
  (4)/(5) topological-order variables t_m making the extracted graph
  acyclic.  With real t_m: t_g(i) - t_m - eps + A(1 - x_i) >= 0,
  eps = 1/(2M) < 1/M, A = 2 > 1 + eps; with integer t_m:
  t_g(i) - t_m + A(1 - x_i) >= 1, A = M.  Filter-listed nodes are
  pinned to x_i = 0.  Without cycle constraints the e-graph must have
  been kept acyclic by filtering; a post-solve validation fails loudly
  if it was not.

The built-in solver is a best-first branch-and-bound over the binary
variables with LP-relaxation bounding; models can also be exported in
the CPLEX-style LP text format and solutions imported back.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .egraph import EGraph
from .errors import (
    CyclicSelection,
    ExtractionError,
    GraphParseError,
    InfeasibleModel,
    NoFiniteExtraction,
    ReconstructError,
    SolveTimeout,
)
from .tensor_lang import SIGNATURES, TensorGraph, ValueKind

INT_TOL = 1e-6
COST_TOL = 1e-9


# ---------------------------------------------------------------- selection


@dataclass
class SolverStats:
    nodes_explored: int = 0
    lp_solves: int = 0
    time_s: float = 0.0
    optimal: bool = True
    objective: float = 0.0


@dataclass
class ExtractionResult:
    selection: dict[int, int]  # reached e-class id -> chosen e-node id
    total_cost: float
    graph: Optional[TensorGraph] = None
    stats: Optional[SolverStats] = None
    optimal: bool = True


def _reached_selection(
    eg: EGraph, chosen: Mapping[int, int], root: int
) -> dict[int, int]:
    """Restrict a per-class choice map to classes reachable from the root
    through the chosen nodes."""
    root = eg.find(root)
    out: dict[int, int] = {}
    stack = [root]
    while stack:
        cid = eg.find(stack.pop())
        if cid in out:
            continue
        if cid not in chosen:
            raise ReconstructError(f"no selected node covers e-class c{cid}")
        nid = chosen[cid]
        out[cid] = nid
        stack.extend(eg.nodes[nid].children)
    return out


def selection_is_acyclic(eg: EGraph, selection: Mapping[int, int]) -> bool:
    state: dict[int, int] = {}

    def visit(cid: int) -> bool:
        cid = eg.find(cid)
        s = state.get(cid)
        if s == 2:
            return True
        if s == 1:
            return False
        state[cid] = 1
        ok = all(visit(ch) for ch in eg.nodes[selection[cid]].children)
        state[cid] = 2
        return ok

    return all(visit(cid) for cid in selection)


def selection_cost(costs: Mapping[int, float], selection: Mapping[int, int]) -> float:
    """Shared subgraphs count once: sum over unique selected nodes."""
    return sum(costs[nid] for nid in set(selection.values()))


# ------------------------------------------------------------------ greedy


def greedy_extract(
    eg: EGraph, costs: Mapping[int, float], filt: Iterable[int] = ()
) -> ExtractionResult:
    """Per class, pick the e-node with the smallest subtree cost (fixpoint
    from infinity; cycle-only classes stay infinite; ties break to the
    smallest node id).  The reported total deduplicates shared selections."""
    if eg.root is None:
        raise ExtractionError("e-graph has no root")
    filt = set(filt)
    start = time.perf_counter()
    best: dict[int, tuple[float, Optional[int]]] = {
        cid: (math.inf, None) for cid in eg.classes
    }
    rounds = 0
    changed = True
    while changed:
        changed = False
        rounds += 1
        for node in eg.iter_nodes():
            if node.id in filt:
                continue
            cid = eg.class_of(node.id)
            total = costs[node.id]
            for child in node.children:
                total += best[eg.find(child)][0]
            if total == math.inf:
                continue
            cur_cost, cur_node = best[cid]
            if total < cur_cost - 1e-15 or (
                abs(total - cur_cost) <= 1e-15 and (cur_node is None or node.id < cur_node)
            ):
                best[cid] = (total, node.id)
                changed = True
    root = eg.find(eg.root)
    if best[root][0] == math.inf:
        raise NoFiniteExtraction("every root selection has infinite cost")
    chosen = {cid: nid for cid, (c, nid) in best.items() if nid is not None}
    selection = _reached_selection(eg, chosen, root)
    stats = SolverStats(nodes_explored=rounds, time_s=time.perf_counter() - start)
    return ExtractionResult(selection, selection_cost(costs, selection), stats=stats)


# --------------------------------------------------------------- ILP model


@dataclass
class ILPModel:
    var_names: list[str]
    objective: list[float]
    lb: list[float]
    ub: list[float]
    binary_idx: list[int]
    integer_idx: list[int]
    # (name, {var: coeff}, sense, rhs) with sense in {"<=", "="}
    rows: list[tuple[str, dict[int, float], str, float]]
    x_of_node: dict[int, int]
    node_of_x: dict[int, int]
    t_of_class: dict[int, int]
    class_order: list[int]
    root_class: int
    costs: dict[int, float]
    pinned: set[int]
    with_cycle: bool
    topo: str
    epsilon: float
    big_a: float

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    def pin(self, node_id: int, value: int) -> None:
        """Fix a selection variable (used by tests and solution replay)."""
        idx = self.x_of_node[node_id]
        self.lb[idx] = self.ub[idx] = float(value)


def reachable_classes(eg: EGraph, filt: set[int], root: int) -> list[int]:
    """Classes reachable from the root through live nodes, root first.

    Child classes whose nodes are all filtered are kept (their emptiness
    forces the parent's x to 0 through constraint (3))."""
    root = eg.find(root)
    seen = {root}
    order = [root]
    queue = [root]
    while queue:
        cid = queue.pop()
        for nid in sorted(eg.classes[cid].node_ids):
            if nid in filt:
                continue
            for child in eg.nodes[nid].children:
                child = eg.find(child)
                if child not in seen:
                    seen.add(child)
                    order.append(child)
                    queue.append(child)
    return [root] + sorted(c for c in order if c != root)


def build_ilp(
    eg: EGraph,
    costs: Mapping[int, float],
    filt: Iterable[int] = (),
    with_cycle: bool = False,
    topo: str = "real",
) -> ILPModel:
    """Objective and constraints (1)-(3), plus (4)/(5) when with_cycle.

    E-classes unreachable from the root are pruned (this preserves the
    optimum and shrinks the model)."""
    if eg.root is None:
        raise ExtractionError("e-graph has no root")
    if topo not in ("real", "int"):
        raise ValueError("topo must be 'real' or 'int'")
    filt = {nid for nid in filt if nid in eg.nodes}
    classes = reachable_classes(eg, filt, eg.root)
    m_count = len(classes)
    class_index = {cid: i for i, cid in enumerate(classes)}
    epsilon = 1.0 / (2 * m_count)
    big_a = float(m_count) if topo == "int" else 2.0

    var_names: list[str] = []
    objective: list[float] = []
    lb: list[float] = []
    ub: list[float] = []
    x_of_node: dict[int, int] = {}
    pinned: set[int] = set()
    live_by_class: dict[int, list[int]] = {}
    for cid in classes:
        live_by_class[cid] = [n for n in sorted(eg.classes[cid].node_ids) if n not in filt]
    all_nodes = sorted(n for cid in classes for n in eg.classes[cid].node_ids)
    for nid in all_nodes:
        x_of_node[nid] = len(var_names)
        var_names.append(f"x_{nid}")
        objective.append(float(costs[nid]))
        lb.append(0.0)
        is_pinned = nid in filt
        ub.append(0.0 if is_pinned else 1.0)
        if is_pinned:
            pinned.add(nid)
    binary_idx = list(range(len(var_names)))
    t_of_class: dict[int, int] = {}
    integer_idx: list[int] = []
    if with_cycle:
        t_max = float(m_count - 1) if topo == "int" else 1.0
        for cid in classes:
            t_of_class[cid] = len(var_names)
            var_names.append(f"t_{class_index[cid]}")
            objective.append(0.0)
            lb.append(0.0)
            ub.append(t_max)
            if topo == "int":
                integer_idx.append(t_of_class[cid])

    rows: list[tuple[str, dict[int, float], str, float]] = []
    root = classes[0]
    rows.append(
        ("root", {x_of_node[n]: 1.0 for n in live_by_class[root]}, "=", 1.0)
    )
    for cid in classes:
        for nid in live_by_class[cid]:
            children = sorted({eg.find(c) for c in eg.nodes[nid].children})
            for m in children:
                coeffs = {x_of_node[nid]: 1.0}
                for j in live_by_class[m]:
                    coeffs[x_of_node[j]] = coeffs.get(x_of_node[j], 0.0) - 1.0
                rows.append((f"pick_{nid}_c{class_index[m]}", coeffs, "<=", 0.0))
            if with_cycle:
                for m in children:
                    # t_g(i) - t_m - eps + A(1 - x_i) >= 0   (real)
                    # t_g(i) - t_m + A(1 - x_i) >= 1         (int, A >= M)
                    coeffs = {x_of_node[nid]: big_a}
                    ti, tm = t_of_class[cid], t_of_class[m]
                    if ti != tm:
                        coeffs[tm] = coeffs.get(tm, 0.0) + 1.0
                        coeffs[ti] = coeffs.get(ti, 0.0) - 1.0
                    rhs = big_a - (1.0 if topo == "int" else epsilon)
                    rows.append((f"topo_{nid}_c{class_index[m]}", coeffs, "<=", rhs))
    return ILPModel(
        var_names=var_names,
        objective=objective,
        lb=lb,
        ub=ub,
        binary_idx=binary_idx,
        integer_idx=integer_idx,
        rows=rows,
        x_of_node=x_of_node,
        node_of_x={v: k for k, v in x_of_node.items()},
        t_of_class=t_of_class,
        class_order=classes,
        root_class=root,
        costs=dict(costs),
        pinned=pinned,
        with_cycle=with_cycle,
        topo=topo,
        epsilon=epsilon,
        big_a=big_a,
    )


# ---------------------------------------------------------------- LP export


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _fmt_terms(coeffs: dict[int, float], names: Sequence[str]) -> str:
    parts: list[str] = []
    for idx in sorted(coeffs):
        c = coeffs[idx]
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        if parts:
            parts.append(f"{sign} {_fmt(mag)} {names[idx]}")
        else:
            lead = "- " if sign == "-" else ""
            parts.append(f"{lead}{_fmt(mag)} {names[idx]}")
    return " ".join(parts) if parts else f"0 {names[0]}"


def export_lp(model: ILPModel) -> str:
    """CPLEX-style LP text: Minimize / Subject To / Bounds / Binary /
    General sections; bit-stable for goldens."""
    lines = [
        f"\\ tensorsat extraction model: classes={model.num_classes}"
        f" vars={model.num_vars} cycle={'none' if not model.with_cycle else model.topo}",
        "Minimize",
        " obj: " + _fmt_terms({i: c for i, c in enumerate(model.objective)}, model.var_names),
        "Subject To",
    ]
    for name, coeffs, sense, rhs in model.rows:
        lines.append(f" {name}: {_fmt_terms(coeffs, model.var_names)} {sense} {_fmt(rhs)}")
    lines.append("Bounds")
    for idx, name in enumerate(model.var_names):
        lo, hi = model.lb[idx], model.ub[idx]
        if idx in model.t_of_class.values():
            lines.append(f" {_fmt(lo)} <= {name} <= {_fmt(hi)}")
        elif lo == hi:
            lines.append(f" {name} = {_fmt(lo)}")
    lines.append("Binary")
    for idx in model.binary_idx:
        lines.append(f" {model.var_names[idx]}")
    if model.integer_idx:
        lines.append("General")
        for idx in model.integer_idx:
            lines.append(f" {model.var_names[idx]}")
    lines.append("End")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ solver


def _lp_arrays(model: ILPModel):
    n = model.num_vars
    eq_rows = [(r, rhs) for name, r, sense, rhs in model.rows if sense == "="]
    ub_rows = [(r, rhs) for name, r, sense, rhs in model.rows if sense == "<="]

    def to_sparse(rows):
        data, ri, ci = [], [], []
        rhs = np.zeros(len(rows))
        for k, (coeffs, b) in enumerate(rows):
            rhs[k] = b
            for idx, c in coeffs.items():
                if c != 0:
                    ri.append(k)
                    ci.append(idx)
                    data.append(c)
        mat = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return mat, rhs

    a_eq, b_eq = to_sparse(eq_rows) if eq_rows else (None, None)
    a_ub, b_ub = to_sparse(ub_rows) if ub_rows else (None, None)
    return np.array(model.objective), a_ub, b_ub, a_eq, b_eq


def solve_ilp(
    model: ILPModel,
    eg: EGraph,
    time_limit_s: float = 60.0,
) -> ExtractionResult:
    """Best-first branch-and-bound on the binary selection variables with
    LP-relaxation bounding.  Returns a provably optimal solution, or the
    best incumbent with ``optimal=False`` at the time limit.

    Topological variables stay continuous during bounding: a 0/1
    selection admits a feasible (integer) topological order exactly when
    it is acyclic, which the t-columns of the relaxation already decide.
    When the model has no cycle constraints, a post-solve acyclicity
    validation fails loudly if the filter list was insufficient."""
    start = time.perf_counter()
    stats = SolverStats()
    c, a_ub, b_ub, a_eq, b_eq = _lp_arrays(model)

    def solve_lp(lb, ub):
        stats.lp_solves += 1
        res = linprog(
            c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
            bounds=list(zip(lb, ub)), method="highs",
        )
        if res.status == 2:  # infeasible
            return None
        if res.status != 0:
            raise ExtractionError(f"LP relaxation failed: {res.message}")
        return res.fun, res.x

    lb0, ub0 = list(model.lb), list(model.ub)
    root_lp = solve_lp(lb0, ub0)
    if root_lp is None:
        raise InfeasibleModel("no selection satisfies the constraints")

    def most_fractional(x) -> int:
        frac_idx = -1
        frac_dist = INT_TOL
        for idx in model.binary_idx:
            d = abs(x[idx] - round(x[idx]))
            if d > frac_dist:
                frac_dist = d
                frac_idx = idx
        return frac_idx

    incumbent_val = math.inf
    incumbent_x: Optional[np.ndarray] = None

    def offer(value: float, x) -> None:
        nonlocal incumbent_val, incumbent_x
        if value < incumbent_val - COST_TOL:
            incumbent_val = value
            incumbent_x = x

    def int_value(x) -> float:
        return sum(model.objective[i] for i in model.binary_idx if x[i] > 0.5)

    def dive(lb, ub, x) -> None:
        """Round fractional variables one at a time for a quick incumbent."""
        lb, ub = list(lb), list(ub)
        while time.perf_counter() - start <= time_limit_s:
            idx = most_fractional(x)
            if idx < 0:
                offer(int_value(x), x)
                return
            preferred = round(x[idx])
            for fix in (preferred, 1 - preferred):
                lb2, ub2 = list(lb), list(ub)
                if fix == 0:
                    ub2[idx] = 0.0
                else:
                    lb2[idx] = 1.0
                res = solve_lp(lb2, ub2)
                if res is not None:
                    lb, ub, x = lb2, ub2, res[1]
                    break
            else:
                return  # both fixings infeasible

    dive(lb0, ub0, root_lp[1])
    counter = 0
    # tie-break prefers deeper nodes, which reach integral leaves sooner
    heap = [(root_lp[0], 0, counter, lb0, ub0, root_lp[1])]
    timed_out = False
    while heap:
        if time.perf_counter() - start > time_limit_s:
            timed_out = True
            break
        bound, neg_depth, _, lb, ub, x = heapq.heappop(heap)
        if bound >= incumbent_val - COST_TOL:
            break  # best-first: nothing better remains
        stats.nodes_explored += 1
        frac_idx = most_fractional(x)
        if frac_idx < 0:
            offer(int_value(x), x)
            continue
        for fix in (0.0, 1.0):
            lb2, ub2 = list(lb), list(ub)
            if fix == 0.0:
                ub2[frac_idx] = 0.0
            else:
                lb2[frac_idx] = 1.0
            child = solve_lp(lb2, ub2)
            if child is None or child[0] >= incumbent_val - COST_TOL:
                continue
            counter += 1
            heapq.heappush(heap, (child[0], neg_depth - 1, counter, lb2, ub2, child[1]))

    stats.time_s = time.perf_counter() - start
    stats.optimal = not timed_out
    if incumbent_x is None:
        if timed_out:
            raise SolveTimeout(f"no feasible incumbent within {time_limit_s}s")
        raise InfeasibleModel("no integral selection found")
    stats.objective = incumbent_val
    selected = [model.node_of_x[i] for i in model.binary_idx if incumbent_x[i] > 0.5]
    return _result_from_nodes(model, eg, selected, stats)


def _result_from_nodes(
    model: ILPModel, eg: EGraph, selected_nodes: Sequence[int], stats: SolverStats
) -> ExtractionResult:
    by_class: dict[int, list[int]] = {}
    for nid in selected_nodes:
        by_class.setdefault(eg.class_of(nid), []).append(nid)
    chosen = {cid: min(nids) for cid, nids in by_class.items()}
    selection = _reached_selection(eg, chosen, model.root_class)
    for cid, nid in selection.items():
        if nid in model.pinned:
            raise ExtractionError(f"filter-listed node n{nid} selected")
    if not selection_is_acyclic(eg, selection):
        raise CyclicSelection(
            "extracted selection contains a cycle"
            + ("" if model.with_cycle else " (filter list was insufficient)")
        )
    return ExtractionResult(
        selection,
        selection_cost(model.costs, selection),
        stats=stats,
        optimal=stats.optimal,
    )


def parse_solution(model: ILPModel, eg: EGraph, text: str) -> ExtractionResult:
    """Import an external solver's solution: ``variable = value`` lines
    (bare ``variable value`` pairs also accepted)."""
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            name, _, val = line.partition("=")
        else:
            parts = line.split()
            if len(parts) != 2:
                raise GraphParseError(f"bad solution line {line!r}", line=lineno)
            name, val = parts
        try:
            values[name.strip()] = float(val)
        except ValueError:
            raise GraphParseError(f"bad value in {line!r}", line=lineno) from None
    index = {name: i for i, name in enumerate(model.var_names)}
    unknown = sorted(set(values) - set(index))
    if unknown:
        raise GraphParseError(f"unknown variables {unknown[:3]}")
    binaries = set(model.binary_idx)
    selected = [
        model.node_of_x[index[name]]
        for name, v in values.items()
        if index[name] in binaries and v > 0.5
    ]
    stats = SolverStats(optimal=False)
    stats.objective = sum(model.costs[n] for n in selected)
    return _result_from_nodes(model, eg, selected, stats)


# -------------------------------------------------------------- reconstruct


def reconstruct(eg: EGraph, selection: Mapping[int, int]) -> TensorGraph:
    """Materialize a selection as a tensor graph (noop root, shapes
    re-validated, shared selections emitted once)."""
    if eg.root is None:
        raise ReconstructError("e-graph has no root")
    g = TensorGraph()
    built: dict[int, str] = {}
    onstack: set[int] = set()

    def node_name(cid: int) -> str:
        return f"e{cid}"

    def build(cid: int) -> str:
        cid = eg.find(cid)
        if cid in built:
            return built[cid]
        if cid in onstack:
            raise ReconstructError(f"cycle through e-class c{cid}")
        if cid not in selection:
            raise ReconstructError(f"selection misses e-class c{cid}")
        onstack.add(cid)
        enode = eg.nodes[selection[cid]]
        sig = SIGNATURES.get(enode.op) if isinstance(enode.op, str) else None
        if sig is None:
            raise ReconstructError(f"e-node n{enode.id} ({enode.op!r}) is not a graph operator")
        params: dict[str, int | str] = {}
        inputs: list[str] = []
        for (arg_name, kind), child in zip(sig.args, enode.children):
            child = eg.find(child)
            if kind in (ValueKind.T, ValueKind.TT):
                inputs.append(build(child))
            else:
                leaf_id = selection.get(child)
                if leaf_id is None:
                    raise ReconstructError(f"selection misses parameter class c{child}")
                leaf = eg.nodes[leaf_id]
                if leaf.children:
                    raise ReconstructError(f"parameter class c{child} selected a non-literal")
                params[arg_name] = leaf.op
        onstack.discard(cid)
        name = node_name(cid)
        g.add(name, enode.op, tuple(inputs), **params)
        built[cid] = name
        return name

    root_name = build(eg.root)

    def flatten_outputs(name: str) -> list[str]:
        node = g.nodes[name]
        if node.op != "noop":
            return [name]
        return flatten_outputs(node.inputs[0]) + flatten_outputs(node.inputs[1])

    g.set_outputs(flatten_outputs(root_name))
    g.root = root_name
    return g
