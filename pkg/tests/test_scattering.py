import numpy as np
import pytest

from crystaljunction.bloch import GridBlochBasis, solve_bands
from crystaljunction.dynamics import make_wavepacket
from crystaljunction.errors import BoundaryContamination
from crystaljunction.grid import Grid, StateVector, WeightContext, weighted_inner
from crystaljunction.media import JunctionSystem, Medium
from crystaljunction.scattering import (LEFT, RIGHT, CutoffPair, Scene, StatePair,
                                        apply_junction_adjoint, asymptotic_velocity, default_schedule,
                                        initial_set_check, interface_energy, moller_iterate, packet_step,
                                        time_domain_scatter)

from conftest import STACK_A_PERIOD, first_band, stack_a


def _rand(ctx, rng, mask=None):
    n = ctx.grid.n_points
    v = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    if mask is not None:
        v[~mask] = 0
    return StateVector(v, ctx)


@pytest.fixture(scope="module")
def generic_scene():
    sys = JunctionSystem(stack_a(), Medium.homogeneous(eps=2.25, mu=1.2, chi=0.3, period=1.5), "compact", 1.0)
    return Scene(sys, Grid.for_period(1.5, 16, 8))


def test_left_support_passes_through(generic_scene):
    sc = generic_scene
    rng = np.random.default_rng(0)
    phi = _rand(sc.left_ctx, rng, sc.grid.x <= -2)
    out = sc.J(StatePair(phi, StateVector.zeros(sc.right_ctx)))
    assert np.array_equal(out.values, phi.values)


def test_zero_pair(generic_scene):
    sc = generic_scene
    out = sc.J(StatePair(StateVector.zeros(sc.left_ctx), StateVector.zeros(sc.right_ctx)))
    assert not np.any(out.values)


def test_core_annihilated(generic_scene):
    sc = generic_scene
    core = np.abs(sc.grid.x) <= 0.25
    rng = np.random.default_rng(1)
    phi = _rand(sc.left_ctx, rng, core)
    out = sc.J(StatePair(phi, phi.in_context(sc.right_ctx)))
    assert not np.any(out.values)
    e = interface_energy(sc.cut, sc.full, StatePair(phi, phi.in_context(sc.right_ctx)))
    assert all(v == 0.0 for v in e.values())


def test_adjoint_identity_weights():
    g = Grid.for_period(1.0, 16, 8)
    one = Medium.homogeneous(period=1.0)
    ctx = WeightContext.of(g, one)
    cut = CutoffPair.on(g)
    phi = _rand(ctx, np.random.default_rng(2))
    pair = apply_junction_adjoint(cut, phi, ctx, ctx)
    assert np.allclose(pair.left.values, cut.j_left[:, None] * phi.values, atol=1e-15)
    assert np.allclose(pair.right.values, cut.j_right[:, None] * phi.values, atol=1e-15)


def test_adjoint_pairing(generic_scene):
    sc = generic_scene
    for seed in range(20):
        rng = np.random.default_rng(seed)
        phi = _rand(sc.full, rng)
        pair = StatePair(_rand(sc.left_ctx, rng), _rand(sc.right_ctx, rng))
        lhs = weighted_inner(phi, sc.J(pair))
        rhs = sc.J_adjoint(phi).inner(pair)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_identical_media_adjoint_composition():
    sys = JunctionSystem(stack_a(), stack_a())
    sc = Scene(sys, Grid.for_period(1.5, 16, 8))
    rng = np.random.default_rng(3)
    pair = StatePair(_rand(sc.left_ctx, rng), _rand(sc.right_ctx, rng))
    back = sc.J_adjoint(sc.J(pair))
    assert np.allclose(back.left.values, sc.cut.j_left[:, None] ** 2 * pair.left.values, atol=1e-13)
    assert np.allclose(back.right.values, sc.cut.j_right[:, None] ** 2 * pair.right.values, atol=1e-13)


def test_no_interface_energy_for_identical_weights():
    sys = JunctionSystem(stack_a(), stack_a())
    sc = Scene(sys, Grid.for_period(1.5, 16, 8))
    rng = np.random.default_rng(4)
    e = interface_energy(sc.cut, sc.full, StatePair(_rand(sc.left_ctx, rng), _rand(sc.right_ctx, rng)))
    assert e["E_interface"] == pytest.approx(0.0, abs=1e-13)


def test_energy_decomposition(generic_scene):
    sc = generic_scene
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        e = interface_energy(sc.cut, sc.full, StatePair(_rand(sc.left_ctx, rng), _rand(sc.right_ctx, rng)))
        total = e["E_left"] + e["E_right"] + e["E_interface"]
        assert abs(e["E_total"] - total) < 1e-12 * e["E_total"]


@pytest.fixture(scope="module")
def identical_scene():
    med = stack_a()
    sc = Scene(JunctionSystem(med, med), Grid.for_period(STACK_A_PERIOD, 512, 8))
    return sc, solve_bands(med, N=32, n_bands=6)


@pytest.mark.parametrize("sign,expect_iso", [(1, True), (-1, False)])
def test_moller_identical_media(identical_scene, sign, expect_iso):
    sc, bs = identical_scene
    window = (0.2, 1.2)
    k0 = sign * 0.5 * np.pi / STACK_A_PERIOD
    band, _ = bs.find_mode(float(first_band(k0)), sign)
    wp = make_wavepacket(sc.sys.right, bs, band, k0, 0.05 * np.pi / STACK_A_PERIOD, sign, window, sc.grid,
                         sc.basis(RIGHT))
    dt = packet_step(1.2)
    sched = default_schedule(wp.mean_velocity, wp.sigma_k, 1.0, dt)
    # the free centre has cleared x = +5 by the end of the schedule
    assert wp.state.center() + wp.mean_velocity * sched[-1] > 5 or not expect_iso
    rep, _ = moller_iterate(sc, sc.pair(RIGHT, wp.state), 1, sched, dt, increments=expect_iso, keep_state=False)
    if expect_iso:
        assert rep.defect < 1e-2 and rep.verdict() == "ISOMETRIC"
        assert rep.increments_decrease
    else:
        assert rep.final_norm < 5e-2 and rep.verdict() == "NULL"


@pytest.fixture(scope="module")
def dichotomy_scene():
    left, right = stack_a(), Medium.homogeneous(eps=2.25, period=1.5)
    sc = Scene(JunctionSystem(left, right), Grid.for_period(1.5, 512, 8))
    return sc, {LEFT: solve_bands(left, N=32, n_bands=6), RIGHT: solve_bands(right, N=16, n_bands=6)}


@pytest.mark.parametrize("side,sign,direction,verdict", [
    (LEFT, -1, 1, "ISOMETRIC"), (LEFT, 1, 1, "NULL"), (RIGHT, 1, 1, "ISOMETRIC")])
def test_initial_sets(dichotomy_scene, side, sign, direction, verdict):
    sc, bands = dichotomy_scene
    res = initial_set_check(sc, side, sign, direction, (0.25, 0.95), bands[side], increments=False)
    assert res.verdict == verdict


def test_identity_asymptotic_velocity():
    med = Medium.homogeneous(period=1.0)
    g = Grid.for_period(1.0, 256, 4)
    bs = solve_bands(med, N=8, n_bands=4)
    band, _ = bs.find_mode(1.0, 1)
    basis = GridBlochBasis(med, g)
    wp = make_wavepacket(med, bs, band, 1.0, 0.05, 1, (0.5, 1.5), g, basis)
    tr = asymptotic_velocity(med, wp.state, [10.0, 20.0, 40.0, 60.0], basis)
    assert tr.limit == pytest.approx(1.0, abs=1e-3)
    assert tr.bounded


@pytest.fixture(scope="module")
def velocity_setup(bands_a_small):
    med = stack_a()
    g = Grid.for_period(STACK_A_PERIOD, 256, 16)
    return med, g, GridBlochBasis(med, g), bands_a_small


def test_stack_a_asymptotic_velocity(velocity_setup):
    med, g, basis, bs = velocity_setup
    k0 = 0.5 * np.pi / STACK_A_PERIOD
    band, _ = bs.find_mode(float(first_band(k0)), 1)
    wp = make_wavepacket(med, bs, band, k0, 0.05 * np.pi / STACK_A_PERIOD, 1, (0.1, 1.2), g, basis)
    tr = asymptotic_velocity(med, wp.state, [20.0, 40.0, 80.0, 120.0], basis)
    assert tr.limit == pytest.approx(bs.track(band, k0)[1], rel=2e-2)


def test_split_packet_zero_mean_velocity(velocity_setup):
    med, g, basis, bs = velocity_setup
    k0 = 0.5 * np.pi / STACK_A_PERIOD
    lam = float(first_band(k0))
    sig = 0.05 * np.pi / STACK_A_PERIOD
    parts = []
    for sign in (1, -1):
        band, _ = bs.find_mode(lam, sign)
        parts.append(make_wavepacket(med, bs, band, sign * k0, sig, sign, (0.1, 1.2), g, basis).state)
    psi = parts[0] + parts[1]
    psi = psi * (1 / psi.norm())
    tr = asymptotic_velocity(med, psi, [20.0, 40.0, 80.0, 120.0], basis)
    vel = abs(bs.track(bs.find_mode(lam, 1)[0], k0)[1])
    assert abs(tr.limit) < 2e-2 * vel
    assert tr.rms_limit == pytest.approx(vel, rel=3e-2)


def test_identical_media_transmit():
    one = Medium.homogeneous(eps=1.0, period=1.5)
    sc = Scene(JunctionSystem(one, one), Grid.for_period(1.5, 256, 8))
    rep = time_domain_scatter(sc, solve_bands(one, N=16, n_bands=6), (0.5, 1.5))
    assert rep.T == pytest.approx(1.0, abs=1e-3) and rep.R < 1e-3
    assert rep.flux_defect < 1e-10


def test_free_wrap_around_is_detected():
    med = stack_a()
    sc = Scene(JunctionSystem(med, med), Grid.for_period(STACK_A_PERIOD, 128, 8))
    bs = solve_bands(med, N=32, n_bands=6)
    k0 = 0.5 * np.pi / STACK_A_PERIOD
    band, _ = bs.find_mode(float(first_band(k0)), 1)
    wp = make_wavepacket(med, bs, band, k0, 0.05 * np.pi / STACK_A_PERIOD, 1, (0.2, 1.2), sc.grid, sc.basis(RIGHT))
    # one full lap: the end state is back near x = 0 but the orbit crossed the boundary
    lap = 2 * sc.grid.half_length / wp.mean_velocity
    with pytest.raises(BoundaryContamination):
        sc.free(sc.pair(RIGHT, wp.state), lap, alarm=1e-4)
