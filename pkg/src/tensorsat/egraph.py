"""Domain-generic e-graph: e-classes of e-nodes with hashconsing,
congruence maintenance, e-matching and client-defined analysis data.

The analysis client decides what metadata each e-class carries (the
tensor language stores shapes and split origins there).  A ``None``
client leaves analyses empty, which is enough for plain term rewriting.

Node ids are global insertion counters and are never reused; "the last
node added" (max id) is well defined for cycle resolution and all
deterministic tie-breaks.  Class ids are the ids of their founding
nodes, canonicalized through a union-find that always keeps the
smallest root, so original-graph classes keep their small ids forever.

Mutation is single-threaded.  ematch and the other read-only queries
are pure and safe to run concurrently against a non-mutating e-graph:
many concurrent readers XOR one writer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, Optional, Protocol

from .errors import AnalysisMergeError
from .sexpr import App, Atom, Term, Var


class Analysis(Protocol):
    """Per-e-class metadata maintained by the e-graph for a language client."""

    def make(self, op: Atom, child_values: list[Any]) -> Any:
        """Value for a fresh e-node, from its op and children's values."""
        ...

    def merge(self, a: Any, b: Any) -> Any:
        """Join two class values on union; must be commutative/associative.

        Raises AnalysisMergeError on incompatible values."""
        ...


class UnionFind:
    """Union-find over int ids; the canonical element is the smallest id."""

    def __init__(self) -> None:
        self._parent: dict[int, int] = {}

    def make(self, x: int) -> None:
        self._parent[x] = x

    def find(self, x: int) -> int:
        parent = self._parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        keep, drop = (ra, rb) if ra < rb else (rb, ra)
        self._parent[drop] = keep
        return keep

    def copy(self) -> "UnionFind":
        uf = UnionFind()
        uf._parent = dict(self._parent)
        return uf


@dataclass
class ENode:
    """Operator plus ordered children e-class ids.

    ``children`` are rewritten to canonical ids on rebuild; between
    rebuilds they may be stale and must be resolved through find()."""

    id: int
    op: Atom
    children: tuple[int, ...]


@dataclass
class EClass:
    id: int
    node_ids: set[int]
    analysis: Any = None


@dataclass(frozen=True)
class Match:
    """One e-match: the class where the pattern root matched plus bindings.

    ``bindings`` is sorted by variable name so matches are hashable and
    deterministically ordered."""

    eclass: int
    bindings: tuple[tuple[str, int], ...]

    @property
    def subst(self) -> dict[str, int]:
        return dict(self.bindings)

    def sort_key(self) -> tuple:
        return (self.eclass, tuple(cid for _, cid in self.bindings))


def _match_sorted(matches: Iterable[Match]) -> list[Match]:
    return sorted(set(matches), key=Match.sort_key)


class EGraph:
    def __init__(self, analysis: Optional[Analysis] = None):
        self.analysis = analysis
        self.uf = UnionFind()
        self.nodes: dict[int, ENode] = {}
        self.classes: dict[int, EClass] = {}
        self.hashcons: dict[tuple[Atom, tuple[int, ...]], int] = {}
        self.node_class: dict[int, int] = {}
        self.root: Optional[int] = None
        self._next_id = 0
        self._dirty = False

    # -- introspection --------------------------------------------------

    @property
    def num_nodes(self) -> int:
        """Live e-node count (after consolidation)."""
        return len(self.nodes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def allocated_nodes(self) -> int:
        """Monotone count of all node ids ever created."""
        return self._next_id

    def find(self, cid: int) -> int:
        return self.uf.find(cid)

    def class_of(self, nid: int) -> int:
        return self.uf.find(self.node_class[nid])

    def eclass(self, cid: int) -> EClass:
        return self.classes[self.uf.find(cid)]

    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def iter_nodes(self) -> Iterator[ENode]:
        for nid in sorted(self.nodes):
            yield self.nodes[nid]

    def node_children(self, nid: int) -> tuple[int, ...]:
        return tuple(self.uf.find(c) for c in self.nodes[nid].children)

    # -- construction ---------------------------------------------------

    def add_enode(self, op: Atom, children: Iterable[int] = ()) -> int:
        """Add (or find) an e-node; returns its e-class id."""
        key = (op, tuple(self.uf.find(c) for c in children))
        hit = self.hashcons.get(key)
        if hit is not None:
            return self.class_of(hit)
        nid = self._next_id
        self._next_id += 1
        value = None
        if self.analysis is not None:
            value = self.analysis.make(
                op, [self.classes[c].analysis for c in key[1]]
            )
        self.uf.make(nid)
        self.nodes[nid] = ENode(nid, op, key[1])
        self.classes[nid] = EClass(nid, {nid}, value)
        self.hashcons[key] = nid
        self.node_class[nid] = nid
        return nid

    def add_term(self, term: Term, env: Optional[Mapping[str, int]] = None) -> int:
        """Add a term; variables resolve through ``env`` to e-class ids."""
        if isinstance(term, Var):
            if env is None or term.name not in env:
                raise KeyError(f"unbound variable ?{term.name}")
            return self.uf.find(env[term.name])
        child_ids = [self.add_term(a, env) for a in term.args]
        return self.add_enode(term.op, child_ids)

    def union(self, a: int, b: int) -> int:
        """Merge two e-classes; analysis values are joined by the client."""
        ra, rb = self.uf.find(a), self.uf.find(b)
        if ra == rb:
            return ra
        merged = None
        if self.analysis is not None:
            merged = self.analysis.merge(
                self.classes[ra].analysis, self.classes[rb].analysis
            )
        keep = self.uf.union(ra, rb)
        drop = rb if keep == ra else ra
        kc, dc = self.classes[keep], self.classes.pop(drop)
        kc.node_ids |= dc.node_ids
        for nid in dc.node_ids:
            self.node_class[nid] = keep
        if self.analysis is not None:
            kc.analysis = merged
        if self.root == drop:
            self.root = keep
        self._dirty = True
        return keep

    def rebuild(self) -> None:
        """Restore congruence: canonicalize children, consolidate duplicate
        e-nodes (keeping the oldest id) and merge congruent classes."""
        while self._dirty:
            self._dirty = False
            new_hashcons: dict[tuple[Atom, tuple[int, ...]], int] = {}
            for nid in sorted(self.nodes):
                node = self.nodes.get(nid)
                if node is None:
                    continue
                children = tuple(self.uf.find(c) for c in node.children)
                node.children = children
                key = (node.op, children)
                survivor = new_hashcons.get(key)
                if survivor is None:
                    new_hashcons[key] = nid
                    continue
                # congruent duplicate: same (op, children) as an older node
                sc, nc = self.class_of(survivor), self.class_of(nid)
                if sc != nc:
                    self.union(sc, nc)
                self._drop_node(nid)
            self.hashcons = new_hashcons

    def _drop_node(self, nid: int) -> None:
        cid = self.class_of(nid)
        self.classes[cid].node_ids.discard(nid)
        del self.nodes[nid]
        del self.node_class[nid]

    # -- queries ----------------------------------------------------------

    def ematch(self, pattern: Term, filt: frozenset[int] | set[int] = frozenset()) -> list[Match]:
        """All matches of a single-rooted pattern, in deterministic order.

        Filter-listed e-nodes are treated as removed."""
        if isinstance(pattern, Var):
            return _match_sorted(
                Match(cid, ((pattern.name, cid),))
                for cid in self.classes
                if any(n not in filt for n in self.classes[cid].node_ids)
            )
        out: list[Match] = []
        for cid in sorted(self.classes):
            for subst in self._match_class(pattern, cid, {}, filt):
                out.append(Match(cid, tuple(sorted(subst.items()))))
        return _match_sorted(out)

    def _match_class(
        self, pattern: Term, cid: int, subst: dict[str, int], filt
    ) -> Iterator[dict[str, int]]:
        cid = self.uf.find(cid)
        if isinstance(pattern, Var):
            bound = subst.get(pattern.name)
            if bound is not None:
                if self.uf.find(bound) == cid:
                    yield subst
                return
            new = dict(subst)
            new[pattern.name] = cid
            yield new
            return
        for nid in sorted(self.classes[cid].node_ids):
            if nid in filt:
                continue
            node = self.nodes[nid]
            if node.op != pattern.op or len(node.children) != len(pattern.args):
                continue
            stack = [subst]
            for sub_pat, child in zip(pattern.args, node.children):
                stack = [
                    s2
                    for s1 in stack
                    for s2 in self._match_class(sub_pat, child, s1, filt)
                ]
                if not stack:
                    break
            yield from stack

    def represented_terms(
        self, cid: int, depth_limit: int, filt: frozenset[int] | set[int] = frozenset()
    ) -> set[App]:
        """All ground terms represented by the class up to a depth limit,
        skipping filter-listed nodes."""
        memo: dict[tuple[int, int], set[App]] = {}

        def go(c: int, d: int) -> set[App]:
            c = self.uf.find(c)
            if d <= 0:
                return set()
            key = (c, d)
            cached = memo.get(key)
            if cached is not None:
                return cached
            memo[key] = set()  # cycle guard for this (class, depth)
            out: set[App] = set()
            for nid in sorted(self.classes[c].node_ids):
                if nid in filt:
                    continue
                node = self.nodes[nid]
                if not node.children:
                    out.add(App(node.op))
                    continue
                if d == 1:
                    continue
                combos: list[tuple[App, ...]] = [()]
                for child in node.children:
                    child_terms = go(child, d - 1)
                    combos = [pre + (t,) for pre in combos for t in child_terms]
                    if not combos:
                        break
                for args in combos:
                    out.add(App(node.op, args))
            memo[key] = out
            return out

        return go(cid, depth_limit)

    def dump(self) -> str:
        """Line-oriented debug dump, stable across runs for goldens."""
        lines = [
            f"egraph nodes={self.num_nodes} classes={self.num_classes} "
            f"root={'-' if self.root is None else 'c%d' % self.uf.find(self.root)}"
        ]
        for cid in sorted(self.classes):
            cls = self.classes[cid]
            nodes = []
            for nid in sorted(cls.node_ids):
                node = self.nodes[nid]
                args = ",".join(f"c{self.uf.find(c)}" for c in node.children)
                nodes.append(f"n{nid}={node.op}({args})")
            meta = "" if cls.analysis is None else f" [{cls.analysis}]"
            lines.append(f"c{cid}{meta}: " + " ".join(nodes))
        return "\n".join(lines) + "\n"

    def clone(self) -> "EGraph":
        g = EGraph(self.analysis)
        g.uf = self.uf.copy()
        g.nodes = {nid: ENode(n.id, n.op, n.children) for nid, n in self.nodes.items()}
        g.classes = {
            cid: EClass(c.id, set(c.node_ids), c.analysis)
            for cid, c in self.classes.items()
        }
        g.hashcons = dict(self.hashcons)
        g.node_class = dict(self.node_class)
        g.root = self.root
        g._next_id = self._next_id
        g._dirty = self._dirty
        return g
