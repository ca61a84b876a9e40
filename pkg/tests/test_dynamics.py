import numpy as np
import pytest

from crystaljunction.bloch import GridBlochBasis, solve_bands
from crystaljunction.dynamics import (CrankNicolson, PropagatorConfig, cayley_energy, discretize, expectation,
                                      make_wavepacket, pgmres, propagate_free, propagate_full)
from crystaljunction.errors import BoundaryContamination, ContextMismatch, WindowViolation
from crystaljunction.grid import Grid, StateVector, WeightContext, weighted_inner
from crystaljunction.media import JunctionSystem, Medium

from conftest import STACK_A_PERIOD, first_band, stack_a


def _random_state(ctx, seed):
    rng = np.random.default_rng(seed)
    n = ctx.grid.n_points
    return StateVector(rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2)), ctx)


@pytest.fixture(scope="module")
def identity_setup():
    med = Medium.homogeneous(period=1.0)
    g = Grid.for_period(1.0, 32, 8)
    return med, g, discretize(med, g)


def test_plane_wave_eigenvector(identity_setup):
    _, g, op = identity_setup
    k = g.wavenumbers[5]
    f = np.exp(1j * k * g.x)
    out = op.apply_values(np.column_stack([f, f]))
    assert np.allclose(out, k * np.column_stack([f, f]), atol=1e-12)


def test_constant_annihilated(identity_setup):
    _, g, op = identity_setup
    assert np.abs(op.apply_values(np.ones((g.n_points, 2), complex))).max() < 1e-13


def test_symmetry_random_pairs():
    sys = JunctionSystem(stack_a(), Medium.homogeneous(eps=2.25, mu=1.3, chi=0.4j, period=1.5))
    op = discretize(sys, Grid.for_period(1.5, 32, 8))
    for seed in range(100):
        a, b = _random_state(op.context, seed), _random_state(op.context, 1000 + seed)
        defect = abs(weighted_inner(a, op(b)) - weighted_inner(op(a), b))
        assert defect < 1e-12 * a.norm() * op(b).norm()


def test_operator_context_checked(identity_setup):
    _, g, op = identity_setup
    other = WeightContext.of(g, Medium.homogeneous(eps=2.0, period=1.0))
    with pytest.raises(ContextMismatch):
        op(StateVector.zeros(other))


def test_symmetric_matrix_reproduces_operator():
    med = stack_a()
    g = Grid.for_period(1.5, 4, 8)
    op = discretize(med, g)
    H, S = op.symmetric_matrix()
    assert np.allclose(H, H.conj().T, atol=1e-12)
    ev = np.linalg.eigvalsh(H)
    basis_ev = np.sort(GridBlochBasis(med, g).energies.ravel())
    assert np.allclose(np.sort(ev), basis_ev, atol=1e-9)


def test_pgmres_solves_small_system():
    rng = np.random.default_rng(0)
    A = np.eye(30) * 4 + rng.standard_normal((30, 30)) * 0.3
    b = rng.standard_normal(30) + 0j
    x, its = pgmres(lambda v: A @ v, lambda v: v, b, np.zeros(30, complex), 1e-13)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b)


def test_zero_state_stays_zero(identity_setup):
    _, g, op = identity_setup
    out = propagate_full(StateVector.zeros(op.context), op, 3.0)
    assert not np.any(out.values)


def test_plane_wave_cayley_phase(identity_setup):
    _, g, op = identity_setup
    k0 = g.wavenumbers[3]
    dt = 0.05 / k0
    f = np.exp(1j * k0 * g.x)
    psi = StateVector(np.column_stack([f, f]).astype(complex), op.context)
    t = 200 * dt
    out = propagate_full(psi, op, t, PropagatorConfig(dt=dt, boundary_alarm=2.0))
    cn = np.exp(-1j * cayley_energy(k0, dt) * t) * psi.values
    assert np.abs(out.values - cn).max() < 1e-8
    # deviation from the exact phase is the Cayley phase error k0^3 dt^2 t / 12
    exact = np.exp(-1j * k0 * t) * psi.values
    assert np.abs(out.values - exact).max() == pytest.approx(k0 ** 3 * dt ** 2 * t / 12, rel=1e-2)


def test_cn_norm_drift_random_scene():
    sys = JunctionSystem(stack_a(), Medium.homogeneous(eps=2.25, period=1.5))
    g = Grid.for_period(1.5, 8, 8)
    op = discretize(sys, g)
    psi = _random_state(op.context, 11)
    cn = CrankNicolson(op, 0.05)
    v = psi.values
    for _ in range(500):
        v = cn.step(v)
    assert abs(psi.with_values(v).norm() - psi.norm()) < 1e-10 * psi.norm()


def test_boundary_alarm(identity_setup):
    _, g, op = identity_setup
    v = np.zeros((g.n_points, 2), complex)
    v[:4] = 1.0
    with pytest.raises(BoundaryContamination):
        propagate_full(StateVector(v, op.context), op, 0.1, PropagatorConfig(dt=0.05))


@pytest.fixture(scope="module")
def stack_setup(bands_a_small):
    med = stack_a()
    g = Grid.for_period(STACK_A_PERIOD, 32, 8)
    basis = GridBlochBasis(med, g)
    k0 = 0.5 * np.pi / STACK_A_PERIOD
    band, _ = bands_a_small.find_mode(float(first_band(k0)), 1)
    wp = make_wavepacket(med, bands_a_small, band, k0, 0.05 * np.pi / STACK_A_PERIOD, 1, (0.1, 1.2), g, basis)
    return med, g, basis, wp


def test_free_time_zero_round_trip(stack_setup):
    med, _, basis, wp = stack_setup
    assert (propagate_free(wp.state, med, 0.0, basis) - wp.state).norm() < 1e-10


def test_free_is_unitary_and_conserves_energy(stack_setup):
    med, g, basis, wp = stack_setup
    op = discretize(med, g)
    e0 = expectation(op, wp.state)
    for t in (3.0, 17.0, 40.0):
        out = propagate_free(wp.state, med, t, basis)
        assert abs(out.norm() - wp.state.norm()) < 1e-12
        assert abs(expectation(op, out) - e0) < 1e-10


def test_full_matches_free_on_periodic_scene(stack_setup):
    # default step 0.05 / max|lambda|; the periodic medium makes wrap-around harmless
    med, g, basis, wp = stack_setup
    op = discretize(med, g)
    cfg = PropagatorConfig(boundary_alarm=1.0)
    full = propagate_full(wp.state, op, 50.0, cfg)
    free = propagate_free(wp.state, med, 50.0, basis)
    assert (full - free).norm() < 1e-4


def test_identity_packet_transport():
    med = Medium.homogeneous(period=1.0)
    g = Grid.for_period(1.0, 256, 4)
    bs = solve_bands(med, N=8, n_bands=4)
    band, _ = bs.find_mode(1.0, 1)
    basis = GridBlochBasis(med, g)
    wp = make_wavepacket(med, bs, band, 1.0, 0.05, 1, (0.2, 1.8), g, basis)
    assert wp.mean_energy == pytest.approx(1.0, abs=1e-3)
    assert wp.mean_velocity == pytest.approx(1.0, abs=1e-9)
    # sigma_x = 5 for sigma_k = 1 / (sqrt 2 * 5) in the energy density
    wp5 = make_wavepacket(med, bs, band, 1.0, 1 / (np.sqrt(2) * 5), 1, (0.2, 1.8), g, basis)
    t = 40.0
    moved = propagate_free(wp5.state, med, t, basis).center() - wp5.state.center()
    assert moved == pytest.approx(t, rel=1e-2)


def test_stack_packet_group_velocity(bands_a_small):
    med = stack_a()
    g = Grid.for_period(STACK_A_PERIOD, 128, 8)
    basis = GridBlochBasis(med, g)
    k0 = 0.5 * np.pi / STACK_A_PERIOD
    band, _ = bands_a_small.find_mode(float(first_band(k0)), 1)
    wp = make_wavepacket(med, bands_a_small, band, k0, 0.05 * np.pi / STACK_A_PERIOD, 1, (0.1, 1.2), g, basis)
    _, vel, _ = bands_a_small.track(wp.band, wp.k0)
    t = 80.0
    moved = propagate_free(wp.state, med, t, basis).center() - wp.state.center()
    assert moved / t == pytest.approx(vel, rel=2e-2)


def test_packet_leakage_and_norm(stack_setup):
    _, _, _, wp = stack_setup
    assert wp.state.norm() == pytest.approx(1.0, abs=1e-12)
    assert wp.leakage < 1e-12


def test_wrong_sign_rejected(stack_setup, bands_a_small):
    med, g, basis, wp = stack_setup
    with pytest.raises(WindowViolation):
        make_wavepacket(med, bands_a_small, wp.band, wp.k0, wp.sigma_k, -1, (0.1, 1.2), g, basis)
