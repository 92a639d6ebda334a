import random

import pytest
from hypothesis import given, settings, strategies as st

from tensorsat.egraph import EGraph, Match
from tensorsat.errors import GraphParseError, ShapeMismatch
from tensorsat.rules import (
    RewriteRule,
    canonicalize,
    combined_subst,
    compatible,
    decanonicalize,
    default_rules,
    eval_pattern,
    parse_rules,
    shape_check,
)
from tensorsat.sexpr import App, Term, Var, parse, variables
from tensorsat.tensor_lang import TensorAnalysis, Value, ValueKind, make_identifier

FIG3_TEXT = """
merge-two-matmuls:
  (matmul ?input1 ?input2) ; (matmul ?input1 ?input3)
  => (split_0 (split 1 (matmul ?input1 (concat_2 1 ?input2 ?input3))))
   ; (split_1 (split 1 (matmul ?input1 (concat_2 1 ?input2 ?input3))))
"""


# ------------------------------------------------------------ canonicalize


def test_canonicalize_alpha_equivalent_patterns_collide():
    a = canonicalize(parse("(matmul ?a ?b)"))
    b = canonicalize(parse("(matmul ?x ?y)"))
    assert a.pattern == b.pattern == parse("(matmul ?v0 ?v1)")
    assert a.rename_map == {"a": "v0", "b": "v1"}


def test_canonicalize_shared_pattern_two_rename_maps():
    s1 = canonicalize(parse("(matmul ?input1 ?input2)"))
    s2 = canonicalize(parse("(matmul ?input1 ?input3)"))
    assert s1.pattern == s2.pattern
    assert s1.rename_map == {"input1": "v0", "input2": "v1"}
    assert s2.rename_map == {"input1": "v0", "input3": "v1"}


_names = st.sampled_from(["a", "b", "c", "d", "e"])


def _patterns():
    return st.recursive(
        st.one_of(_names.map(Var), st.sampled_from([App("k"), App(1)])),
        lambda kids: st.tuples(st.sampled_from(["f", "g"]), st.lists(kids, min_size=1, max_size=3)).map(
            lambda p: App(p[0], tuple(p[1]))
        ),
        max_leaves=8,
    )


@given(_patterns(), st.permutations(["a", "b", "c", "d", "e"]))
@settings(max_examples=80)
def test_canonicalize_is_alpha_congruence(pat, perm):
    ren = dict(zip(["a", "b", "c", "d", "e"], perm))

    def rename(t: Term) -> Term:
        if isinstance(t, Var):
            return Var(ren[t.name])
        return App(t.op, tuple(rename(a) for a in t.args))

    assert canonicalize(pat).pattern == canonicalize(rename(pat)).pattern


def test_canonicalize_distinguishes_structure():
    assert canonicalize(parse("(f ?x ?x)")).pattern != canonicalize(parse("(f ?x ?y)")).pattern


def test_decanonicalize_roundtrip():
    assert decanonicalize([], {"a": "v0"}) == []
    m = Match(7, (("v0", 1), ("v1", 2)))
    out = decanonicalize([m], {"input1": "v0", "input2": "v1"})
    assert out == [Match(7, (("input1", 1), ("input2", 2)))]
    cp = canonicalize(parse("(f ?p ?q)"))
    back = decanonicalize(decanonicalize([m], cp.rename_map), {v: v for v in ("p", "q")})
    assert back[0].subst == {"p": 1, "q": 2}


# -------------------------------------------------------------- compatible


def test_compatible_examples():
    eg = EGraph()
    c1, c2, c3 = (eg.add_enode(op) for op in ("a", "b", "c"))
    assert compatible([{"input1": c1, "input2": c2}, {"input1": c1, "input3": c3}], eg)
    assert not compatible([{"input1": c1}, {"input1": c2}], eg)
    assert compatible([{"x": c1}, {"y": c2}], eg)  # disjoint variables
    # shared through a union: distinct ids, same canonical class
    eg.union(c2, c3)
    assert compatible([{"v": c2}, {"v": c3}], eg)


@pytest.mark.parametrize("seed", range(10))
def test_compatible_agrees_with_bruteforce_join(seed):
    rng = random.Random(seed)
    eg = EGraph()
    ids = [eg.add_enode(f"leaf{i}") for i in range(6)]
    for _ in range(2):
        eg.union(rng.choice(ids), rng.choice(ids))
    eg.rebuild()
    vars_pool = ["p", "q", "r"]
    substs = [
        {v: rng.choice(ids) for v in rng.sample(vars_pool, rng.randint(1, 3))}
        for _ in range(rng.randint(1, 3))
    ]
    brute = True
    for v in vars_pool:
        vals = {eg.find(s[v]) for s in substs if v in s}
        if len(vals) > 1:
            brute = False
    assert compatible(substs, eg) == brute


# -------------------------------------------------------------- shape_check


def shape_env(shapes: dict[str, tuple[int, ...]], ints: dict[str, int] | None = None):
    """E-graph whose classes carry the given shapes, for binding variables."""
    eg = EGraph(TensorAnalysis())
    env = {}
    for name, shape in shapes.items():
        env[name] = eg.add_term(parse(f"(input {make_identifier(name, shape)})"))
    for name, val in (ints or {}).items():
        env[name] = eg.add_enode(val)
    return eg, env


def fig3_rule():
    (rule,) = parse_rules(FIG3_TEXT)
    # shipped grammar uses the explicit activation argument; the Fig. 3 style
    # two-argument matmul is kept local to this test via a generic check
    return rule


def test_shape_check_fig3_accepts_and_rejects():
    rules = {r.name: r for r in default_rules()}
    rule = rules["matmul-merge-shared-lhs"]
    eg, env = shape_env(
        {"x": (64, 128), "a": (128, 32), "b": (128, 32)}, ints={"act": 0}
    )
    m1 = eg.add_term(parse("(matmul ?act ?x ?a)"), env)
    m2 = eg.add_term(parse("(matmul ?act ?x ?b)"), env)
    matches = [
        Match(m1, (("act", env["act"]), ("x", env["x"]), ("a", env["a"]))),
        Match(m2, (("act", env["act"]), ("x", env["x"]), ("b", env["b"]))),
    ]
    assert shape_check(rule, matches, eg)

    # axis-0 mismatch between the two right-hand sides: concat_2 axis 1 illegal
    eg2, env2 = shape_env(
        {"x": (64, 128), "a": (128, 32), "b": (256, 32)}, ints={"act": 0}
    )
    m1 = eg2.add_term(parse("(matmul ?act ?x ?a)"), env2)
    with pytest.raises(ShapeMismatch):
        eg2.add_term(parse("(matmul ?act ?x ?b)"), env2)  # source itself invalid
    # make b compatible with x but not concat-able with a on axis 1
    eg3, env3 = shape_env(
        {"x": (64, 128), "a": (128, 32), "b": (128, 32), "c": (64, 64)}, ints={"act": 0}
    )
    m1 = eg3.add_term(parse("(matmul ?act ?x ?a)"), env3)
    # pair m1 with itself but bind ?b to a tensor whose rank-0 extent differs
    wrong = [
        Match(m1, (("act", env3["act"]), ("x", env3["x"]), ("a", env3["a"]))),
        Match(m1, (("act", env3["act"]), ("x", env3["x"]), ("b", env3["c"]))),
    ]
    assert not shape_check(rule, wrong, eg3)


def test_shape_check_trivially_true_without_analysis():
    eg = EGraph()
    c = eg.add_term(parse("(f a)"))
    rule = RewriteRule("r", (parse("(f ?x)"),), (parse("(g ?x)"),))
    assert shape_check(rule, [Match(c, (("x", eg.add_enode("a")),))], eg)


def _var_kinds(rule):
    """Map each rule variable to the signature kind of its positions."""
    from tensorsat.tensor_lang import SIGNATURES

    kinds = {}

    def walk(t):
        if isinstance(t, Var) or not isinstance(t, App):
            return
        sig = SIGNATURES.get(t.op)
        if sig is None:  # literal leaf
            return
        for (arg, kind), child in zip(sig.args, t.args):
            if isinstance(child, Var):
                kinds.setdefault(child.name, kind)
            else:
                walk(child)

    for s in rule.sources:
        walk(s)
    return kinds


@pytest.mark.parametrize("rule", default_rules(), ids=lambda r: r.name)
def test_shipped_rules_shape_sound_under_fuzz(rule):
    import zlib

    rng = random.Random(zlib.crc32(rule.name.encode()))
    kinds = _var_kinds(rule)
    passes = 0
    for _ in range(120):
        shapes, ints = {}, {}
        for v, kind in kinds.items():
            if kind == ValueKind.T:
                if shapes and rng.random() < 0.5:
                    # bias toward collisions so equal-shape preconditions fire
                    shapes[v] = rng.choice(list(shapes.values()))
                else:
                    rank = rng.choice([2, 2, 4])
                    shapes[v] = tuple(rng.choice([1, 2, 3, 4, 8]) for _ in range(rank))
            elif kind == ValueKind.N:
                ints[v] = rng.choice([0, 0, 1, 2])
        eg, env = shape_env(shapes, ints)
        try:
            matched = [eg.add_term(s, env) for s in rule.sources]
        except ShapeMismatch:
            continue
        matches = [
            Match(cid, tuple(sorted((v, env[v]) for v in variables(src))))
            for cid, src in zip(matched, rule.sources)
        ]
        if not shape_check(rule, matches, eg):
            continue
        passes += 1
        subst = combined_subst([m.subst for m in matches], eg)
        for tgt, cid in zip(rule.targets, matched):
            out = eval_pattern(tgt, subst, eg)
            src_val = eg.eclass(cid).analysis
            assert out.same_data(src_val), (rule.name, out, src_val)
    # the fuzz must actually exercise passing assignments for most rules
    if rule.name in ("ewadd-commutative", "ewmul-commutative", "matmul-relu-fuse"):
        assert passes > 0


# -------------------------------------------------------------- rule files


def test_parse_single_pattern_rule():
    (r,) = parse_rules("swap: (ewadd ?a ?b) => (ewadd ?b ?a)\n")
    assert not r.multi
    assert r.sources == (parse("(ewadd ?a ?b)"),)


def test_parse_fig3_style_multi_pattern():
    (r,) = parse_rules(FIG3_TEXT)
    assert r.multi and len(r.sources) == 2
    shared = set(variables(r.sources[0])) & set(variables(r.sources[1]))
    assert shared == {"input1"}
    c0, c1 = canonicalize(r.sources[0]), canonicalize(r.sources[1])
    assert c0.pattern == c1.pattern


def test_default_ruleset_parses_and_canonical_count_regression():
    rules = default_rules()
    sources = [s for r in rules for s in r.sources]
    unique = {canonicalize(s).pattern for s in sources}
    assert len(rules) == 14
    assert len(sources) == 18
    assert len(unique) == 13  # frozen: canonicalization shares searches
    assert len(unique) < len(sources)


@pytest.mark.parametrize(
    "bad",
    [
        "noarrow: (f ?x) (g ?x)\n",
        "twoarrows: (f ?x) => (g ?x) => (h ?x)\n",
        "unbound: (f ?x) => (g ?y)\n",
        "countmismatch: (f ?x) ; (g ?x) => (h ?x)\n",
        "barevar: ?x => (f ?x)\n",
        "dup: (f ?x) => ?x\n\ndup: (g ?x) => ?x\n",
        "badsexpr: (f ?x => (g ?x)\n",
    ],
)
def test_rule_file_errors(bad):
    with pytest.raises(GraphParseError):
        parse_rules(bad)
