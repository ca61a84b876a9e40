import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crystaljunction.errors import AssumptionViolated, NonPositiveDefinite
from crystaljunction.media import (ConstitutiveProfile, JunctionSystem, Layer, Medium, build_weight,
                                   make_junction, sample_weight, smoothstep, validate_asymptotics)

from conftest import stack_a


def test_identity_weight():
    w = build_weight(ConstitutiveProfile.homogeneous())
    assert np.allclose(w(np.linspace(-3, 3, 7)), np.eye(2))
    assert w.c0 == pytest.approx(1.0) and w.c1 == pytest.approx(1.0)


def test_diagonal_weight():
    w = build_weight(ConstitutiveProfile.homogeneous(eps=4.0))
    assert np.allclose(w(0.3)[0], np.diag([0.25, 1.0]))
    assert w.c0 == pytest.approx(0.25) and w.c1 == pytest.approx(1.0)


def test_bianisotropic_weight():
    w = build_weight(ConstitutiveProfile.homogeneous(chi=0.5))
    assert np.allclose(w(0.0)[0], [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]], atol=1e-15)
    assert w.c0 == pytest.approx(2 / 3) and w.c1 == pytest.approx(2.0)


def test_non_positive_layer_rejected():
    with pytest.raises(NonPositiveDefinite, match="layer 1"):
        build_weight(ConstitutiveProfile.from_layers([Layer(1.0), Layer(1.0, chi=1.5)]))


def test_stack_a_lookup_and_left_closed_interfaces():
    m = stack_a()
    w = sample_weight(m.weight, np.array([-0.75, 0.6, 0.25, 0.75]))
    assert np.allclose(w[0], np.eye(2))
    assert np.allclose(w[1], np.diag([0.25, 1.0]))
    # 0.25 is the interface: the right-adjacent layer wins; 0.75 wraps to the next cell start
    assert np.allclose(w[2], np.diag([0.25, 1.0]))
    assert np.allclose(w[3], np.eye(2))


def test_cell_average_matches_quadrature():
    m = stack_a()
    x = np.linspace(-1.0, 2.0, 37)
    h = 0.1
    eps, _, _ = m.profile.cell_average(x, h)
    fine = np.linspace(-0.5, 0.5, 20001)
    ref = np.array([np.trapezoid(m.profile.evaluate(xi + h * fine)[0], fine) for xi in x])
    assert np.allclose(eps, ref, atol=1e-3)
    assert np.all((eps >= 1.0 - 1e-12) & (eps <= 4.0 + 1e-12))


def test_identity_junction_is_identity():
    one = Medium.homogeneous()
    sys = make_junction(one, one)
    assert np.allclose(sys.weight(np.linspace(-5, 5, 41)), np.eye(2))


def test_compact_ramp_midpoint():
    sys = make_junction(Medium.homogeneous(), Medium.homogeneous(eps=4.0), "compact", 1.0)
    assert sys.switch(0.0) == pytest.approx(0.5)
    assert np.allclose(sys.weight(0.0)[0], np.diag([5 / 8, 1.0]))


def test_compact_constants_vanish_beyond_ramp():
    sys = make_junction(stack_a(), Medium.homogeneous(eps=2.25, period=1.5), "compact", 1.0)
    xs = np.concatenate([np.linspace(-60, -1, 500), np.linspace(1, 60, 500)])
    rep = validate_asymptotics(sys, xs)
    assert rep["C_left"] == 0.0 and rep["C_right"] == 0.0


def test_algebraic_tail_slope():
    sys = make_junction(Medium.homogeneous(), Medium.homogeneous(eps=4.0), "algebraic", epsilon=1.0)
    xs = np.concatenate([-np.geomspace(1e3, 1, 400), np.geomspace(1, 1e3, 400)])
    rep = validate_asymptotics(sys, xs)
    for side in ("left", "right"):
        assert np.isfinite(rep[f"C_{side}"])
        assert -2.1 <= rep[f"slope_{side}"] <= -1.9


def test_constant_difference_violates_assumption():
    left, right = Medium.homogeneous(), Medium.homogeneous(eps=4.0)
    sys = JunctionSystem(left, right, custom=left.weight)
    with pytest.raises(AssumptionViolated, match="right"):
        validate_asymptotics(sys, np.linspace(-100, 100, 1001))


def test_smoothstep_switch():
    u = np.linspace(-0.5, 1.5, 2001)
    s = smoothstep(u)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) >= 0)
    assert smoothstep(0.5) == pytest.approx(0.5)


@st.composite
def constitutive(draw):
    eps = draw(st.floats(0.2, 20.0))
    mu = draw(st.floats(0.2, 20.0))
    r = draw(st.floats(0.0, 0.95)) * np.sqrt(eps * mu)
    phase = draw(st.floats(0.0, 2 * np.pi))
    return eps, mu, r * np.exp(1j * phase)


@given(constitutive())
@settings(max_examples=50, deadline=None)
def test_weight_inverts_constitutive_and_respects_bounds(params):
    eps, mu, chi = params
    prof = ConstitutiveProfile.homogeneous(eps, mu, chi)
    w = build_weight(prof)
    x = np.array([0.1])
    W = w(x)[0]
    assert np.allclose(W, W.conj().T)
    assert np.allclose(W @ prof.constitutive(x)[0], np.eye(2), atol=1e-9)
    ev = np.linalg.eigvalsh(W)
    assert w.c0 <= ev.min() * (1 + 1e-12) and ev.max() <= w.c1 * (1 + 1e-12)


@given(st.floats(-10, 10), st.floats(0.01, 3.0))
@settings(max_examples=50, deadline=None)
def test_junction_weight_between_media(x, X):
    left, right = stack_a(), Medium.homogeneous(eps=2.25, period=1.5)
    sys = make_junction(left, right, "compact", X)
    w = sys.weight(x)[0]
    ev = np.linalg.eigvalsh(w)
    assert sys.c0 - 1e-12 <= ev.min() and ev.max() <= sys.c1 + 1e-12
    if x <= -X:
        assert np.allclose(w, left(x)[0])
    if x >= X:
        assert np.allclose(w, right(x)[0])
