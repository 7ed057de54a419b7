"""Random LTLf formulas and traces shared by the test modules."""

import random

from hypothesis import strategies as st

from imdpsynth.ltlf import FALSE, TRUE, And, Atom, Eventually, Globally, Next, Not, Or, Until

AP = ("a", "b", "c")


def random_formula(rng: random.Random, depth: int, ap=AP):
    if depth == 0 or rng.random() < 0.25:
        r = rng.random()
        return Atom(rng.choice(ap)) if r < 0.85 else (TRUE if r < 0.93 else FALSE)
    op = rng.choice(["not", "and", "or", "X", "U", "F", "G"])
    sub = lambda: random_formula(rng, depth - 1, ap)
    if op == "not":
        return Not(sub())
    if op == "and":
        return And((sub(), sub()))
    if op == "or":
        return Or((sub(), sub()))
    if op == "X":
        return Next(sub())
    if op == "U":
        return Until(sub(), sub())
    return Eventually(sub()) if op == "F" else Globally(sub())


def random_trace(rng: random.Random, max_len: int = 8, ap=AP):
    return [frozenset(a for a in ap if rng.random() < 0.5) for _ in range(rng.randint(0, max_len))]


leaves = st.sampled_from([Atom(a) for a in AP] + [TRUE, FALSE])
formulas = st.recursive(
    leaves,
    lambda kids: st.one_of(
        kids.map(Not),
        kids.map(Next),
        kids.map(Eventually),
        kids.map(Globally),
        st.tuples(kids, kids).map(lambda t: And(t)),
        st.tuples(kids, kids).map(lambda t: Or(t)),
        st.tuples(kids, kids).map(lambda t: Until(*t)),
    ),
    max_leaves=8,
)
traces = st.lists(st.frozensets(st.sampled_from(AP)), max_size=7)
