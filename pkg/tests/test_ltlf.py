import random

import pytest
from hypothesis import given, settings

from formulas import AP, formulas, random_formula, random_trace, traces
from imdpsynth.ltlf import (
    FALSE,
    TRUE,
    And,
    Atom,
    BudgetExceeded,
    Dfa,
    DfaError,
    Eventually,
    Globally,
    LtlfSyntaxError,
    Next,
    Not,
    Or,
    Until,
    evaluate,
    normalize,
    parse,
    to_dfa,
)

a, b, c = Atom("a"), Atom("b"), Atom("c")


# ---------------------------------------------------------------- parser


@pytest.mark.parametrize(
    "text, expected",
    [
        ("a", a),
        ("!a", Not(a)),
        ("a & b | c", Or((And((a, b)), c))),
        ("a | b & c", Or((a, And((b, c))))),
        ("a U b U c", Until(a, Until(b, c))),
        ("a U b & c", And((Until(a, b), c))),
        ("X a U b", Until(Next(a), b)),
        ("G !obs & F des", And((Globally(Not(Atom("obs"))), Eventually(Atom("des"))))),
        ("F (a & X b)", Eventually(And((a, Next(b))))),
        ("true U false", Until(TRUE, FALSE)),
        ("!!a", Not(Not(a))),
    ],
)
def test_parser_precedence(text, expected):
    assert parse(text) == expected


@pytest.mark.parametrize("text", ["", "a &", "(a", "a)", "a b", "U a", "a $ b", "X"])
def test_parser_rejects(text):
    with pytest.raises(LtlfSyntaxError):
        parse(text)


def test_syntax_error_reports_position():
    with pytest.raises(LtlfSyntaxError) as err:
        parse("a & (b | ")
    assert err.value.pos == len("a & (b | ")


def test_undeclared_atom():
    assert parse("a U b", aps={"a", "b"}) == Until(a, b)
    with pytest.raises(LtlfSyntaxError):
        parse("a U d", aps={"a", "b"})


@settings(max_examples=200, deadline=None)
@given(formulas)
def test_printed_formula_parses_back(f):
    assert parse(str(f)) == f


# ---------------------------------------------------------------- semantics


def test_evaluation_examples():
    A, B, E = frozenset("a"), frozenset("b"), frozenset()
    assert evaluate(Eventually(a), [E, E, A])
    assert not evaluate(Eventually(a), [])
    assert evaluate(Globally(a), [])
    assert evaluate(Globally(a), [A, A]) and not evaluate(Globally(a), [A, E])
    assert evaluate(Until(a, b), [A, A, B]) and not evaluate(Until(a, b), [A, E, B])
    assert not evaluate(Next(a), [A]) and evaluate(Next(a), [E, A])
    assert evaluate(Not(Next(TRUE)), [A])  # last position
    assert not evaluate(a, []) and evaluate(Not(a), [])
    assert evaluate(TRUE, []) and not evaluate(FALSE, [])
    assert not evaluate(Until(FALSE, b), [])


@settings(max_examples=300, deadline=None)
@given(formulas, traces)
def test_normalization_preserves_meaning(f, tr):
    assert evaluate(normalize(f), tr) == evaluate(f, tr)


@settings(max_examples=300, deadline=None)
@given(formulas, traces)
def test_duality(f, tr):
    assert evaluate(Globally(f), tr) == evaluate(Not(Eventually(Not(f))), tr)
    assert evaluate(Not(f), tr) != evaluate(f, tr)


# ---------------------------------------------------------------- automata


def test_eventually_dfa():
    d = to_dfa(parse("F a"))
    assert d.n_states == 2 and d.ap == ("a",)
    assert d.accepting == frozenset({1}) and d.dead == frozenset()
    assert not d.accepts([]) and d.accepts([frozenset("a")])


def test_reach_avoid_dfa():
    d = to_dfa(parse("G !obs & F des"))
    assert d.n_states == 3 and len(d.dead) == 1 and len(d.accepting) == 1
    assert d.accepts([frozenset(), frozenset({"des"})])
    assert not d.accepts([frozenset({"obs"}), frozenset({"des"})])
    assert not d.accepts([frozenset({"des", "obs"})])
    dead = d.run([frozenset({"obs"})])
    assert dead in d.dead


def test_trivial_dfas():
    t = to_dfa(TRUE)
    assert t.n_states == 1 and t.accepting == {0} and t.accepts([])
    f = to_dfa(FALSE)
    assert f.n_states == 1 and not f.accepting and f.dead == {0}


def test_alphabet_handling():
    d = to_dfa(parse("F a"), ap=("b", "a"))
    assert d.ap == ("b", "a") and d.n_symbols == 4
    assert d.accepts([frozenset("a")])
    with pytest.raises(DfaError):
        to_dfa(parse("F a"), ap=("b",))
    with pytest.raises(DfaError):
        d.accepts([frozenset("z")])
    assert not d.accepts([frozenset("z")], strict=False)


def test_budget():
    with pytest.raises(BudgetExceeded):
        to_dfa(parse("F (a & X X X b)"), budget=2)


def test_equivalent_formulas_give_identical_dfas():
    for lhs, rhs in [
        ("G a", "!F !a"),
        ("F a", "true U a"),
        ("a & b", "b & a"),
        ("!(a | b)", "!a & !b"),
        ("a U b", "b | (a & X (a U b))"),
    ]:
        assert to_dfa(parse(lhs), AP).same_as(to_dfa(parse(rhs), AP))


def test_false_until_collapses_to_right_side():
    assert to_dfa(parse("false U b"), AP).same_as(to_dfa(parse("b"), AP))


def test_dfa_matches_evaluator_on_random_formulas():
    rng = random.Random(7)
    for _ in range(150):
        f = random_formula(rng, 4)
        d = to_dfa(f, AP)
        for _ in range(60):
            tr = random_trace(rng)
            assert d.accepts(tr) == evaluate(f, tr), (f, tr)


@settings(max_examples=100, deadline=None)
@given(formulas)
def test_formula_and_normal_form_isomorphic(f):
    assert to_dfa(f, AP).same_as(to_dfa(normalize(f), AP))


@settings(max_examples=100, deadline=None)
@given(formulas, traces)
def test_complement(f, tr):
    d, nd = to_dfa(f, AP), to_dfa(Not(f), AP)
    assert d.n_states == nd.n_states
    assert d.accepts(tr) != nd.accepts(tr)


@settings(max_examples=100, deadline=None)
@given(formulas)
def test_dfa_is_minimal_and_dead_states_correct(f):
    d = to_dfa(f, AP)
    # dead states cannot reach acceptance; others can
    for s in range(d.n_states):
        seen, todo = {s}, [s]
        while todo:
            t = todo.pop()
            for nxt in d.table[t]:
                if int(nxt) not in seen:
                    seen.add(int(nxt))
                    todo.append(int(nxt))
        assert (s in d.dead) == (not (seen & d.accepting))
    assert len(d.dead) <= 1


def test_dump_round_trip():
    d = to_dfa(parse("G !obs & F des"))
    back = Dfa.loads(d.dumps())
    assert back.same_as(d) and back.dead == d.dead
    with pytest.raises(DfaError):
        Dfa.loads("nfa 1\n")
