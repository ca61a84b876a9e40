import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crystaljunction.errors import ContextMismatch, IncommensurateDomain
from crystaljunction.grid import Grid, StateVector, WeightContext, weighted_inner
from crystaljunction.media import Medium, make_junction

from conftest import stack_a


def _random_state(ctx, rng):
    n = ctx.grid.n_points
    return StateVector(rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2)), ctx)


def test_grid_power_of_two():
    with pytest.raises(ValueError):
        Grid(10.0, 100)


def test_incommensurate_period():
    g = Grid.for_period(1.5, 16, 8)
    with pytest.raises(IncommensurateDomain):
        g.cells(1.0)


def test_identity_weight_is_flat_product():
    g = Grid(4.0, 64)
    ctx = WeightContext.of(g, Medium.homogeneous(period=1.0))
    rng = np.random.default_rng(1)
    a, b = _random_state(ctx, rng), _random_state(ctx, rng)
    flat = g.h * np.vdot(a.values, b.values)
    assert weighted_inner(a, b) == pytest.approx(flat, rel=1e-14)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_conjugate_symmetry_exact(seed):
    ctx = WeightContext.of(Grid.for_period(1.5, 8, 8), stack_a())
    rng = np.random.default_rng(seed)
    a, b = _random_state(ctx, rng), _random_state(ctx, rng)
    assert weighted_inner(a, b) == np.conj(weighted_inner(b, a))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_norm_equivalence(seed):
    med = stack_a()
    ctx = WeightContext.of(Grid.for_period(1.5, 8, 8), med)
    psi = _random_state(ctx, np.random.default_rng(seed))
    flat = ctx.grid.h * np.vdot(psi.values, psi.values).real
    w = med.weight
    assert flat / w.c1 * (1 - 1e-12) <= psi.norm() ** 2 <= flat / w.c0 * (1 + 1e-12)


def test_mixing_contexts_rejected():
    g = Grid.for_period(1.5, 8, 8)
    a = StateVector.zeros(WeightContext.of(g, stack_a()))
    b = StateVector.zeros(WeightContext.of(g, Medium.homogeneous(period=1.5)))
    with pytest.raises(ContextMismatch):
        weighted_inner(a, b)


def test_periodic_sampling_tiles_cells():
    g = Grid.for_period(1.5, 8, 16)
    w = g.sample_periodic(stack_a())
    assert np.array_equal(w[:16], w[16:32])


def test_junction_sampling_matches_media_far_away():
    left, right = stack_a(), Medium.homogeneous(eps=2.25, period=1.5)
    g = Grid.for_period(1.5, 16, 8)
    w = g.sample_junction(make_junction(left, right, "compact", 1.0))
    x = g.x
    assert np.array_equal(w[x <= -1.0], g.sample_periodic(left)[x <= -1.0])
    assert np.array_equal(w[x >= 1.0], g.sample_periodic(right)[x >= 1.0])


def test_snapshots(tmp_path):
    g = Grid(2.0, 8)
    ctx = WeightContext.of(g, Medium.homogeneous(period=0.5))
    psi = _random_state(ctx, np.random.default_rng(3))
    psi.write_json(tmp_path / "s.json")
    psi.write_csv(tmp_path / "s.csv")
    snap = json.loads((tmp_path / "s.json").read_text())
    assert sorted(snap) == ["phiE_im", "phiE_re", "phiH_im", "phiH_re", "x"]
    assert np.allclose(snap["phiH_im"], psi.values[:, 1].imag)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "x,phiE_re,phiE_im,phiH_re,phiH_im" and len(lines) == 9
    data = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert np.allclose(data[:, 1] + 1j * data[:, 2], psi.values[:, 0], rtol=1e-14)
