"""Cycle handling for extraction: the extracted graph must be a DAG even
though the e-graph itself can (and usually will) contain cycles.

Reachability is over e-classes: a live (non-filter-listed) e-node
contributes an edge from its class to each child class.  Two filtering
strategies keep extractable graphs acyclic:

* vanilla -- before applying any substitution, apply it on a scratch
  clone and run full cycle detection; O(N) per match.
* efficient -- a descendants map built once per iteration gives an O(1)
  sound-but-incomplete pre-filter per match; a post-processing DFS pass
  then collects any cycles that slipped through and resolves each by
  filter-listing its newest e-node (largest insertion id).

Filter-listed nodes are treated as removed everywhere: matching,
descendants, DFS, term enumeration, and extraction (x_i = 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .egraph import EGraph

FilterList = set[int]


def live_adjacency(eg: EGraph, filt: Iterable[int] = ()) -> dict[int, set[int]]:
    """Class -> child classes through live e-nodes."""
    filt = set(filt)
    adj: dict[int, set[int]] = {cid: set() for cid in eg.classes}
    for node in eg.iter_nodes():
        if node.id in filt:
            continue
        cid = eg.class_of(node.id)
        for child in node.children:
            adj[cid].add(eg.find(child))
    return adj


@dataclass
class DescendantsMap:
    """Exact transitive closure of the live child relation, as bitmasks.

    ``m in descendants(m)`` iff m lies on a cycle."""

    index: dict[int, int]
    masks: list[int]
    order: list[int]

    def reaches(self, frm: int, to: int) -> bool:
        ti = self.index.get(to)
        fi = self.index.get(frm)
        if ti is None or fi is None:
            return False
        return bool(self.masks[fi] >> ti & 1)

    def descendants(self, cid: int) -> set[int]:
        fi = self.index.get(cid)
        if fi is None:
            return set()
        mask = self.masks[fi]
        return {self.order[i] for i in range(len(self.order)) if mask >> i & 1}

    def on_cycle(self, cid: int) -> bool:
        return self.reaches(cid, cid)


def get_descendants(eg: EGraph, filt: Iterable[int] = ()) -> DescendantsMap:
    """One pass over the e-graph: SCCs (iterative Tarjan), then closure
    over the condensation in reverse topological order."""
    adj = live_adjacency(eg, filt)
    order = sorted(adj)
    index = {cid: i for i, cid in enumerate(order)}

    # Tarjan's SCC, iterative
    sccs: list[list[int]] = []
    scc_of: dict[int, int] = {}
    low: dict[int, int] = {}
    num: dict[int, int] = {}
    on_stack: set[int] = set()
    stack: list[int] = []
    counter = 0
    for start in order:
        if start in num:
            continue
        work = [(start, iter(sorted(adj[start])))]
        num[start] = low[start] = counter
        counter += 1
        stack.append(start)
        on_stack.add(start)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in num:
                    num[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(adj[w]))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], num[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == num[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    scc_of[w] = len(sccs)
                    if w == v:
                        break
                sccs.append(comp)

    # Tarjan emits SCCs in reverse topological order of the condensation,
    # i.e. every edge goes from a later-emitted SCC to an earlier one.
    scc_mask = [0] * len(sccs)
    scc_children: list[set[int]] = [set() for _ in sccs]
    self_cyclic = [len(c) > 1 for c in sccs]
    for v in order:
        sv = scc_of[v]
        for w in adj[v]:
            sw = scc_of[w]
            if sw != sv:
                scc_children[sv].add(sw)
            elif len(sccs[sv]) == 1:
                self_cyclic[sv] = True  # self-loop
    for si, comp in enumerate(sccs):
        mask = 0
        for sw in scc_children[si]:
            mask |= scc_mask[sw]
            for w in sccs[sw]:
                mask |= 1 << index[w]
        if self_cyclic[si]:
            for w in comp:
                mask |= 1 << index[w]
        scc_mask[si] = mask
    masks = [scc_mask[scc_of[cid]] for cid in order]
    return DescendantsMap(index, masks, order)


def will_create_cycle(
    matched_classes: Sequence[int],
    target_leaf_classes: Sequence[Iterable[int]],
    d: DescendantsMap,
    eg: EGraph,
) -> bool:
    """Pre-filter: would instantiating the targets and unioning each with
    its matched class close a loop, according to the stored map?

    Sound w.r.t. the snapshot (a flagged match really cycles) but not
    complete: reachability added earlier in the same iteration is not in
    the map, so a passing match can still introduce a cycle."""
    for out, leaves in zip(matched_classes, target_leaf_classes):
        out = eg.find(out)
        for leaf in leaves:
            leaf = eg.find(leaf)
            if leaf == out or d.reaches(leaf, out):
                return True
    return False


def dfs_get_cycles(eg: EGraph, filt: Iterable[int] = (), root: Optional[int] = None) -> list[list[int]]:
    """DFS from the root e-class over live nodes; every back-edge to an
    on-stack class yields one cycle, reported as the e-node path that
    closes it.  One pass can report many cycles."""
    filt = set(filt)
    if root is None:
        root = eg.root
    if root is None:
        raise ValueError("e-graph has no root")
    root = eg.find(root)
    cycles: list[list[int]] = []
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[int, int] = {}
    depth_of: dict[int, int] = {}
    path_nodes: list[int] = []  # e-node taken to enter stack level i+1

    def edges(cid: int) -> list[tuple[int, int]]:
        out = []
        for nid in sorted(eg.classes[cid].node_ids):
            if nid in filt:
                continue
            for child in eg.nodes[nid].children:
                out.append((nid, eg.find(child)))
        return out

    stack: list[tuple[int, Iterable[tuple[int, int]]]] = [(root, iter(edges(root)))]
    color[root] = GRAY
    depth_of[root] = 0
    while stack:
        cid, it = stack[-1]
        advanced = False
        for nid, child in it:
            state = color.get(child, WHITE)
            if state == GRAY:
                start = depth_of[child]
                cycles.append(path_nodes[start:] + [nid])
            elif state == WHITE:
                color[child] = GRAY
                depth_of[child] = len(stack)
                path_nodes.append(nid)
                stack.append((child, iter(edges(child))))
                advanced = True
                break
        if not advanced:
            stack.pop()
            if path_nodes:
                path_nodes.pop()
            color[cid] = BLACK
            depth_of.pop(cid, None)
    return cycles


def resolve_cycle(eg: EGraph, filt: FilterList, cycle: Sequence[int]) -> Optional[int]:
    """Filter-list the newest node of the cycle; returns it, or None when
    the cycle was already broken by an earlier resolution this pass."""
    if any(nid in filt for nid in cycle):
        return None
    newest = max(cycle)
    filt.add(newest)
    return newest


def break_all_cycles(eg: EGraph, filt: FilterList, root: Optional[int] = None) -> int:
    """Post-processing loop of the efficient filter: DFS, resolve, repeat
    until no live cycle is reachable from the root.  Returns the number of
    nodes filtered."""
    added = 0
    while True:
        cycles = dfs_get_cycles(eg, filt, root)
        if not cycles:
            return added
        for cycle in cycles:
            if resolve_cycle(eg, filt, cycle) is not None:
                added += 1


def vanilla_check(eg: EGraph, filt: Iterable[int], apply_fn: Callable[[EGraph], None]) -> bool:
    """Complete per-substitution check: apply on a scratch clone and run
    full cycle detection.  True iff the substitution would create a cycle.
    Costs a pass over the whole e-graph per call."""
    scratch = eg.clone()
    apply_fn(scratch)
    return bool(dfs_get_cycles(scratch, filt))
