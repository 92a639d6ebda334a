import pytest
from hypothesis import given, strategies as st

from tensorsat.errors import SExprError
from tensorsat.sexpr import App, Var, depth, format_term, is_ground, parse, parse_many, variables


def test_parse_atoms():
    assert parse("a") == App("a")
    assert parse("2") == App(2)
    assert parse("-3") == App(-3)
    assert parse("?x") == Var("x")
    assert parse("x@64_128") == App("x@64_128")
    assert parse("1_0") == App("1_0")  # underscore => string, not int


def test_parse_nested():
    t = parse("(matmul 0 ?a (concat_2 1 ?b ?c))")
    assert t == App(
        "matmul",
        (App(0), Var("a"), App("concat_2", (App(1), Var("b"), Var("c")))),
    )
    assert depth(t) == 3
    assert variables(t) == ["a", "b", "c"]
    assert not is_ground(t)


def test_parse_many_and_roundtrip():
    terms = parse_many("(f a) (g (h 1))")
    assert len(terms) == 2
    for t in terms:
        assert parse(format_term(t)) == t


@pytest.mark.parametrize(
    "bad",
    ["(", ")", "(f", "(f))", "", "(?x a)", "((f) a)", "?"],
)
def test_parse_errors(bad):
    with pytest.raises(SExprError):
        parse(bad)


_atoms = st.one_of(
    st.integers(-99, 99),
    st.sampled_from(["a", "b", "matmul", "x@8_8", "0_1_2"]),
)


def _terms(max_depth=4):
    return st.recursive(
        st.one_of(
            _atoms.map(App),
            st.sampled_from(["x", "y", "z"]).map(Var),
        ),
        lambda kids: st.tuples(
            st.sampled_from(["f", "g", "concat_2"]), st.lists(kids, min_size=1, max_size=3)
        ).map(lambda p: App(p[0], tuple(p[1]))),
        max_leaves=8,
    )


@given(_terms())
def test_format_parse_fixpoint(t):
    assert parse(format_term(t)) == t
