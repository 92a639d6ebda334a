import itertools
import random

import pytest

from tensorsat.egraph import EGraph, Match, UnionFind
from tensorsat.sexpr import App, Var, depth, parse


def add(eg, text):
    return eg.add_term(parse(text))


# ---------------------------------------------------------------- basics


def test_mul_div_term_has_four_classes():
    # (÷ (× a 2) 2): the literal 2 is shared, so {a, 2, ×, ÷}
    eg = EGraph()
    root = add(eg, "(div (mul a 2) 2)")
    assert eg.num_classes == 4
    assert eg.num_nodes == 4
    assert eg.find(root) == root


def test_hashcons_idempotence():
    eg = EGraph()
    a = add(eg, "(div (mul a 2) 2)")
    n = eg.num_nodes
    b = add(eg, "(div (mul a 2) 2)")
    assert a == b
    assert eg.num_nodes == n


def test_shift_union_represents_both_forms():
    eg = EGraph()
    root = add(eg, "(div (mul a 2) 2)")
    eg.root = root
    mul = add(eg, "(mul a 2)")
    shift = add(eg, "(shl a 1)")
    eg.union(mul, shift)
    eg.rebuild()
    assert eg.num_classes == 5  # {a} {2} {1} {mul,shl} {div}
    assert eg.num_nodes == 6
    terms = eg.represented_terms(root, 3)
    assert terms == {parse("(div (mul a 2) 2)"), parse("(div (shl a 1) 2)")}


def test_union_idempotent_and_self():
    eg = EGraph()
    c = add(eg, "(f a)")
    assert eg.union(c, c) == eg.find(c)
    n, k = eg.num_nodes, eg.num_classes
    eg.rebuild()
    assert (eg.num_nodes, eg.num_classes) == (n, k)


def test_rebuild_clean_is_noop_and_idempotent():
    eg = EGraph()
    add(eg, "(f (g a) b)")
    before = eg.dump()
    eg.rebuild()
    assert eg.dump() == before
    a, b = add(eg, "a"), add(eg, "b")
    eg.union(a, b)
    eg.rebuild()
    once = eg.dump()
    eg.rebuild()
    assert eg.dump() == once


def test_congruence_after_leaf_union():
    eg = EGraph()
    fa, fb = add(eg, "(f a)"), add(eg, "(f b)")
    assert eg.find(fa) != eg.find(fb)
    eg.union(add(eg, "a"), add(eg, "b"))
    eg.rebuild()
    assert eg.find(fa) == eg.find(fb)
    # consolidated: one f-node remains
    ops = [n.op for n in eg.iter_nodes()]
    assert ops.count("f") == 1


def test_three_level_congruence_propagates():
    eg = EGraph()
    top1, top2 = add(eg, "(f (g a))"), add(eg, "(f (g b))")
    eg.union(add(eg, "a"), add(eg, "b"))
    eg.rebuild()
    assert eg.find(add(eg, "(g a)")) == eg.find(add(eg, "(g b)"))
    assert eg.find(top1) == eg.find(top2)


# ------------------------------------------------- congruence closure oracle


def subterms(t):
    out = {t}
    for a in t.args:
        out |= subterms(a)
    return out


def naive_congruence(universe, union_pairs):
    """Fixpoint congruence closure over a finite term set (test oracle)."""
    rep = {t: t for t in universe}

    def find(t):
        while rep[t] != t:
            t = rep[t]
        return t

    def merge(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            rep[rb] = ra

    for a, b in union_pairs:
        merge(a, b)
    changed = True
    while changed:
        changed = False
        for t1, t2 in itertools.combinations(universe, 2):
            if find(t1) == find(t2):
                continue
            if (
                t1.op == t2.op
                and len(t1.args) == len(t2.args)
                and all(find(x) == find(y) for x, y in zip(t1.args, t2.args))
            ):
                merge(t1, t2)
                changed = True
    return find


def random_terms(rng, n_terms):
    leaves = [App("a"), App("b"), App("c"), App(0)]
    pool = list(leaves)
    for _ in range(n_terms):
        op = rng.choice(["f", "g", "h"])
        arity = 1 if op in ("f", "g") else 2
        args = tuple(rng.choice(pool) for _ in range(arity))
        pool.append(App(op, args))
    return pool


@pytest.mark.parametrize("seed", range(8))
def test_congruence_matches_naive_oracle(seed):
    rng = random.Random(seed)
    pool = random_terms(rng, 12)
    universe = set()
    for t in pool:
        universe |= subterms(t)
    universe = sorted(universe, key=str)
    union_pairs = [
        (rng.choice(universe), rng.choice(universe)) for _ in range(rng.randint(1, 4))
    ]

    eg = EGraph()
    ids = {t: eg.add_term(t) for t in universe}
    for a, b in union_pairs:
        eg.union(ids[a], ids[b])
    eg.rebuild()

    oracle_find = naive_congruence(universe, union_pairs)
    for t1, t2 in itertools.combinations(universe, 2):
        same_oracle = oracle_find(t1) == oracle_find(t2)
        same_egraph = eg.find(ids[t1]) == eg.find(ids[t2])
        assert same_oracle == same_egraph, (t1, t2)


def test_union_order_insensitive():
    def partition(build_order):
        eg = EGraph()
        terms = ["(f a)", "(f b)", "(g a)", "a", "b", "c"]
        ids = {t: add(eg, t) for t in terms}
        for a, b in build_order:
            eg.union(ids[a], ids[b])
        eg.rebuild()
        groups = {}
        for t in terms:
            groups.setdefault(eg.find(ids[t]), set()).add(t)
        return frozenset(frozenset(g) for g in groups.values())

    unions = [("a", "b"), ("b", "c"), ("(f a)", "(g a)")]
    parts = {partition(p) for p in itertools.permutations(unions)}
    assert len(parts) == 1


# ------------------------------------------------------------- e-matching


def enumerate_partial_trees(eg, cid, max_depth, filt=frozenset()):
    """All partial expansions of a class: either a bare class reference or a
    node expansion whose children are partial trees (ematch test oracle)."""
    cid = eg.find(cid)
    trees = [("ref", cid)]
    if max_depth <= 0:
        return trees
    for nid in sorted(eg.classes[cid].node_ids):
        if nid in filt:
            continue
        node = eg.nodes[nid]
        child_options = [
            enumerate_partial_trees(eg, c, max_depth - 1, filt) for c in node.children
        ]
        for combo in itertools.product(*child_options):
            trees.append(("app", cid, node.op, combo))
    return trees


def match_tree(pattern, tree, subst):
    if isinstance(pattern, Var):
        cid = tree[1]
        if pattern.name in subst:
            return [subst] if subst[pattern.name] == cid else []
        out = dict(subst)
        out[pattern.name] = cid
        return [out]
    if tree[0] != "app" or tree[2] != pattern.op or len(tree[3]) != len(pattern.args):
        return []
    results = [subst]
    for pat_child, tree_child in zip(pattern.args, tree[3]):
        results = [s2 for s1 in results for s2 in match_tree(pat_child, tree_child, s1)]
    return results


def oracle_ematch(eg, pattern, filt=frozenset()):
    found = set()
    d = depth(pattern)
    for cid in eg.class_ids():
        for tree in enumerate_partial_trees(eg, cid, d, filt):
            if tree[0] != "app":
                continue
            for subst in match_tree(pattern, tree, {}):
                found.add(Match(cid, tuple(sorted(subst.items()))))
    return sorted(found, key=Match.sort_key)


def test_ematch_single_match_example():
    eg = EGraph()
    add(eg, "(div (mul a 2) 2)")
    ms = eg.ematch(parse("(mul ?x 2)"))
    assert len(ms) == 1
    assert ms[0].subst == {"x": eg.find(add(eg, "a"))}


def test_ematch_bare_var_matches_every_class():
    eg = EGraph()
    add(eg, "(div (mul a 2) 2)")
    ms = eg.ematch(parse("?x"))
    assert len(ms) == eg.num_classes


def random_egraph(seed, n_extra=10, n_unions=3):
    rng = random.Random(seed)
    eg = EGraph()
    ids = [add(eg, t) for t in ["a", "b", "c", "0"]]
    for _ in range(n_extra):
        op = rng.choice(["f", "g", "h", "k"])
        arity = 1 if op in ("f", "g") else 2
        ids.append(eg.add_enode(op, [rng.choice(ids) for _ in range(arity)]))
    for _ in range(n_unions):
        eg.union(rng.choice(ids), rng.choice(ids))
    eg.rebuild()
    assert eg.num_nodes <= 50
    return eg


@pytest.mark.parametrize("seed", range(10))
def test_ematch_agrees_with_enumeration_oracle(seed):
    eg = random_egraph(seed)
    patterns = [
        "(f ?x)",
        "(h ?x ?y)",
        "(h ?x ?x)",
        "(f (g ?x))",
        "(h (f ?x) ?y)",
        "(k a ?y)",
    ]
    for text in patterns:
        pat = parse(text)
        assert eg.ematch(pat) == oracle_ematch(eg, pat), text


def test_ematch_respects_filter_list():
    eg = EGraph()
    fa = add(eg, "(f a)")
    (f_node,) = [n.id for n in eg.iter_nodes() if n.op == "f"]
    assert len(eg.ematch(parse("(f ?x)"))) == 1
    assert eg.ematch(parse("(f ?x)"), {f_node}) == []
    assert oracle_ematch(eg, parse("(f ?x)"), {f_node}) == []


# -------------------------------------------------- represented terms, misc


def test_represented_terms_childless():
    eg = EGraph()
    c = add(eg, "7")
    assert eg.represented_terms(c, 1) == {App(7)}


@pytest.mark.parametrize("seed", range(6))
def test_represented_terms_matches_independent_enumeration(seed):
    eg = random_egraph(seed)

    def enum(cid, d):
        cid = eg.find(cid)
        if d <= 0:
            return set()
        out = set()
        for nid in sorted(eg.classes[cid].node_ids):
            node = eg.nodes[nid]
            if not node.children:
                out.add(App(node.op))
            elif d > 1:
                opts = [enum(c, d - 1) for c in node.children]
                for combo in itertools.product(*opts):
                    out.add(App(node.op, combo))
        return out

    for cid in eg.class_ids():
        for d in (1, 2, 3):
            assert eg.represented_terms(cid, d) == enum(cid, d)


@pytest.mark.parametrize("seed", range(6))
def test_monotonicity_under_add_union_rebuild(seed):
    rng = random.Random(seed)
    eg = random_egraph(seed)
    before = {cid: eg.represented_terms(cid, 3) for cid in eg.class_ids()}
    ids = eg.class_ids()
    eg.add_enode("f", [rng.choice(ids)])
    eg.union(rng.choice(ids), rng.choice(ids))
    eg.rebuild()
    for cid, terms in before.items():
        assert terms <= eg.represented_terms(cid, 3)


def test_union_find_properties():
    uf = UnionFind()
    for i in range(10):
        uf.make(i)
    uf.union(3, 7)
    uf.union(7, 9)
    assert uf.find(9) == uf.find(3) == 3  # smallest root wins
    assert uf.find(uf.find(9)) == uf.find(9)  # idempotent


def test_dump_golden():
    eg = EGraph()
    root = add(eg, "(div (mul a 2) 2)")
    eg.root = root
    mul, shift = add(eg, "(mul a 2)"), add(eg, "(shl a 1)")
    eg.union(mul, shift)
    eg.rebuild()
    assert eg.dump() == (
        "egraph nodes=6 classes=5 root=c3\n"
        "c0: n0=a()\n"
        "c1: n1=2()\n"
        "c2: n2=mul(c0,c1) n5=shl(c0,c4)\n"
        "c3: n3=div(c2,c1)\n"
        "c4: n4=1()\n"
    )
