import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imdpsynth.abstraction import (
    AbstractionConfig,
    AbstractionError,
    EpsEta,
    Imdp,
    TransitionInterval,
    _indicators,
    _interval_terms,
    build_imdp,
    check_consistency,
    choose_epsilon,
    choose_eta,
    transition_interval,
    unsafe_interval,
)
from imdpsynth.bounds import LinearMap, zero_map
from imdpsynth.geometry import Box, LabeledRegion, build_partition
from imdpsynth.learning import Kernel, NoiseModel, learn_mode

NOISE = NoiseModel("truncated_gaussian", bound=0.01, std=0.01)


def _ee(p_eps=0.99, p_eta=0.99, eps=0.01, eta=0.01, n=2):
    return EpsEta(np.full(n, eta), np.full(n, p_eta), np.full(n, eps), np.full(n, 1 - p_eps))


def test_worked_interval_example():
    # image well inside the target: lo = 0.99^4, hi = lo + 0.01^2
    q1 = Box([0, 0], [1, 1])
    im = Box([0.4, 0.4], [0.6, 0.6])
    ti = transition_interval(Box([0, 0], [0.1, 0.1]), q1, im, _ee())
    assert ti.lo == pytest.approx(0.99 ** 4, abs=1e-12)
    assert ti.hi == pytest.approx(0.99 ** 4 + 1e-4, abs=1e-12)
    assert round(ti.lo, 4) == 0.9606 and round(ti.hi, 4) == 0.9607


def test_far_target_gets_only_slop():
    im = Box([0.4, 0.4], [0.6, 0.6])
    ti = transition_interval(im, Box([5, 5], [6, 6]), im, _ee())
    assert ti.lo == 0.0 and ti.hi == pytest.approx(1e-4)


def test_disjoint_with_certain_eps_is_zero():
    im = Box([0.4, 0.4], [0.6, 0.6])
    ee = EpsEta(np.full(2, 0.01), np.ones(2), np.full(2, 0.01), np.zeros(2))
    assert transition_interval(im, Box([5, 5], [6, 6]), im, ee) == TransitionInterval(0.0, 0.0)


def test_overlapping_but_not_inside():
    im = Box([0.9, 0.4], [1.1, 0.6])
    ti = transition_interval(im, Box([0, 0], [1, 1]), im, _ee())
    assert ti.lo == 0.0 and ti.hi == pytest.approx(0.99 ** 4 + 1e-4)


def test_unsafe_interval_cases():
    dom = Box([-2, -2], [2, 2])
    inside = unsafe_interval(Box([0, 0], [0.1, 0.1]), _ee(), dom)
    assert inside.lo == pytest.approx(1 - 0.99 ** 4 - 1e-4) and inside.hi == pytest.approx(1 - 0.99 ** 4)
    outside = unsafe_interval(Box([5, 5], [6, 6]), _ee(), dom)
    assert outside.lo == pytest.approx(1 - 1e-4) and outside.hi == 1.0
    edge = unsafe_interval(Box([1.9, 0], [2.1, 0.1]), _ee(), dom)
    assert edge.lo == pytest.approx(1 - 0.99 ** 4 - 1e-4) and edge.hi == 1.0


def test_interval_validation():
    with pytest.raises(AbstractionError):
        TransitionInterval(0.5, 0.4)
    with pytest.raises(AbstractionError):
        TransitionInterval(-0.1, 0.4)


def test_choose_eta():
    eta, p = choose_eta(NOISE, 1.0, 2)
    assert np.allclose(eta, 0.01) and np.allclose(p, 1.0)
    eta, p = choose_eta(NOISE, 1.0, 2, fraction=0.75)
    assert np.allclose(eta, 0.0075) and np.all(p < 1)
    eta, p = choose_eta(NoiseModel("uniform", bound=1.0), 0.99 ** 2, 2)
    assert np.allclose(eta, 0.99) and np.allclose(p, 0.99)
    with pytest.raises(AbstractionError):
        choose_eta(NOISE, 0.0, 2)
    with pytest.raises(AbstractionError):
        choose_eta(NoiseModel("truncated_gaussian", bound=np.inf, std=1.0), 1.0, 2, fraction=0.5)


def _learned(seed=0, m=40):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (m, 2))
    A = np.array([[0.4, 0.1], [0.0, 0.5]])
    return learn_mode(1, X, X @ A.T + NOISE.sample(rng, (m, 2)), Kernel(100.0, 3.0), NOISE.sub_gaussian_theta)


def test_epsilon_policy():
    lm = _learned()
    sig = np.array([0.01, 0.01])
    eta = np.array([0.01, 0.01])
    target = Box([-1, -1], [1, 1])
    eps, p = choose_epsilon(Box([-0.1, -0.1], [0.1, 0.1]), target, eta, lm, sig)
    # inside: eps is the slack less eta
    assert np.allclose(eps, 0.89, rtol=1e-6) and np.all(p > 0.99)
    eps, p = choose_epsilon(Box([3, 3], [3.1, 3.1]), target, eta, lm, sig)
    assert np.isinf(eps).sum() == 1 and np.prod(1 - p) < 1e-4
    eps, p = choose_epsilon(Box([3, 3], [3.1, 3.1]), target, eta, lm, sig, separation=False)
    assert np.all(np.isfinite(eps)) and np.allclose(p, 0.99)


def test_vectorized_indicators_match_box_algebra():
    rng = np.random.default_rng(1)
    for _ in range(300):
        lo = rng.uniform(-1, 1, 2)
        im = Box(lo, lo + rng.uniform(0, 0.5, 2))
        tl = rng.uniform(-1, 1, 2)
        t = Box(tl, tl + rng.uniform(0, 1, 2))
        ee = _ee(eps=rng.uniform(0, 0.2), eta=0.01)
        c = ee.eps + ee.eta
        meets, inside = _indicators(im.lower, im.upper, t.lower[None], t.upper[None], c)
        conf, slop = _interval_terms(ee.delta_eps, float(np.prod(ee.p_eta)))
        ref = transition_interval(im, t, im, ee)
        assert min(meets[0] * conf + slop, 1.0) == pytest.approx(ref.hi)
        assert min(inside[0] * conf, ref.hi) == pytest.approx(ref.lo)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.5, 1.0), st.floats(0.5, 1.0), st.floats(0, 1), st.floats(0, 1))
def test_interval_well_formed(pe, ph, x, y):
    im = Box([x, y], [x + 0.1, y + 0.1])
    ee = _ee(p_eps=pe, p_eta=ph)
    ti = transition_interval(im, Box([0, 0], [1, 1]), im, ee)
    assert 0 <= ti.lo <= ti.hi <= 1
    u = unsafe_interval(im, ee, Box([0, 0], [1, 1]))
    assert 0 <= u.lo <= u.hi <= 1


def _small_system(step=0.25):
    part = build_partition(
        Box([-1, -1], [1, 1]),
        [LabeledRegion(Box([-step, -step], [step, step]), "des")],
        step,
    )
    lm = _learned()
    return part, {1: zero_map(2)}, {1: lm}


def test_build_imdp_rows_are_consistent():
    part, known, learned = _small_system()
    imdp, info = build_imdp(part, known, learned, NOISE)
    assert imdp.n_states == part.n_states and imdp.actions == (1,)
    assert check_consistency(imdp) == []
    for q in range(imdp.n_states):
        succ, lo, hi = imdp.row(q, 0)
        assert np.all(np.diff(succ) > 0)
        assert np.all((0 <= lo) & (lo <= hi) & (hi <= 1))
        assert np.all(hi > 1e-12)
    succ, lo, hi = imdp.row(imdp.unsafe, 0)
    assert succ.tolist() == [imdp.unsafe] and lo[0] == hi[0] == 1.0
    assert info["report"]["rows"] == part.n_states


def test_build_imdp_is_thread_independent():
    part, known, learned = _small_system()
    a, _ = build_imdp(part, known, learned, NOISE)
    b, _ = build_imdp(part, known, learned, NOISE, AbstractionConfig(threads=3))
    assert a.dumps() == b.dumps()


def test_imdp_round_trip():
    part, known, learned = _small_system(0.5)
    imdp, _ = build_imdp(part, known, learned, NOISE)
    back = Imdp.loads(imdp.dumps())
    assert back.dumps() == imdp.dumps()
    assert np.array_equal(back.lo, imdp.lo) and np.array_equal(back.hi, imdp.hi)
    assert back.labels == imdp.labels


def test_contracting_image_stays_near_origin():
    part, known, learned = _small_system()
    imdp, _ = build_imdp(part, known, learned, NOISE)
    q = part.locate([0.1, 0.1])
    ti = imdp.interval(q, 1, part.unsafe_index)
    assert ti.hi < 0.05


def test_modes_must_match():
    part, known, learned = _small_system()
    with pytest.raises(AbstractionError):
        build_imdp(part, {1: zero_map(2), 2: zero_map(2)}, learned, NOISE)


def test_known_linear_part_shifts_image():
    part, _, learned = _small_system(0.5)
    shift = LinearMap(np.zeros((2, 2)), [5.0, 5.0])
    imdp, _ = build_imdp(part, {1: shift}, learned, NOISE)
    for q in range(part.n_cells):
        assert imdp.interval(q, 1, part.unsafe_index).lo > 0.99
