"""Junction maps between the pair of bulk spaces and the physical space,
finite-time wave-operator iterates, asymptotic velocities and time-domain
reflection/transmission.

A ``Scene`` fixes a junction system on a grid together with the three
weighted spaces (full, left bulk, right bulk), the grid Bloch bases of the two
bulk media and the discrete full operator.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional, Sequence

import numpy as np

from .bloch import BandStructure, GridBlochBasis, bloch_analyze
from .dynamics import (PropagatorConfig, Wavepacket, check_boundary, discretize, expectation,
                       make_wavepacket, propagate_free, propagate_full)
from .errors import GridMismatch, NonSeparation
from .grid import Grid, StateVector, WeightContext, weighted_inner
from .media import JunctionSystem, Medium, smoothstep

log = logging.getLogger(__name__)

ISOMETRIC_DEFECT = 0.02
NULL_NORM = 0.05
CHANNEL_GAP_PERIODS = 10
LEFT, RIGHT = "left", "right"


# ---------------------------------------------------------------------------
# cutoffs and the junction map

@dataclasses.dataclass(frozen=True, eq=False)
class CutoffPair:
    """``j_left`` = 1 on x <= -outer, 0 on x >= -inner; ``j_right`` mirrored."""

    grid: Grid
    j_left: np.ndarray
    j_right: np.ndarray

    @classmethod
    def on(cls, grid: Grid, inner: float = 0.5, outer: float = 1.0) -> "CutoffPair":
        x = grid.x
        width = outer - inner
        return cls(grid, smoothstep((-x - inner) / width), smoothstep((x - inner) / width))


@dataclasses.dataclass(frozen=True, eq=False)
class StatePair:
    """An element of the bulk pair space: left and right medium states."""

    left: StateVector
    right: StateVector

    def inner(self, other: "StatePair") -> complex:
        return weighted_inner(self.left, other.left) + weighted_inner(self.right, other.right)

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self).real, 0.0)))

    def __sub__(self, other):
        return StatePair(self.left - other.left, self.right - other.right)


def _same_grid(*grids) -> None:
    g0 = grids[0]
    if any(g != g0 for g in grids[1:]):
        raise GridMismatch("cutoffs and states live on different grids")


def apply_junction(cut: CutoffPair, pair: StatePair, context: WeightContext) -> StateVector:
    """``j_left phi_left + j_right phi_right`` as a state of the full space."""
    _same_grid(cut.grid, pair.left.grid, pair.right.grid, context.grid)
    vals = cut.j_left[:, None] * pair.left.values + cut.j_right[:, None] * pair.right.values
    return StateVector(vals, context)


def apply_junction_adjoint(cut: CutoffPair, phi: StateVector, left: WeightContext,
                           right: WeightContext) -> StatePair:
    """``(w_left w^{-1} j_left phi, w_right w^{-1} j_right phi)``."""
    _same_grid(cut.grid, phi.grid, left.grid, right.grid)
    u = np.einsum("iab,ib->ia", phi.context.winv, phi.values)
    a = np.einsum("iab,ib->ia", left.w, cut.j_left[:, None] * u)
    b = np.einsum("iab,ib->ia", right.w, cut.j_right[:, None] * u)
    return StatePair(StateVector(a, left), StateVector(b, right))


def interface_energy(cut: CutoffPair, context: WeightContext, pair: StatePair) -> dict:
    """Energy of ``J(pair)`` split into bulk parts and the interface term."""
    _same_grid(cut.grid, pair.left.grid, pair.right.grid, context.grid)
    h = cut.grid.h
    total = apply_junction(cut, pair, context)
    parts = {}
    interface = 0.0
    for name, st, j in ((LEFT, pair.left, cut.j_left), (RIGHT, pair.right, cut.j_right)):
        v = j[:, None] * st.values
        bulk = np.einsum("ia,iab,ib->i", v.conj(), st.context.winv, v).real
        full = np.einsum("ia,iab,ib->i", v.conj(), context.winv, v).real
        parts[name] = float(h * bulk.sum())
        interface += float(h * (full - bulk).sum())
    e_total = total.norm() ** 2
    return {"E_total": e_total, "E_left": parts[LEFT], "E_right": parts[RIGHT], "E_interface": interface}


# ---------------------------------------------------------------------------
# scenes

class Scene:
    """Junction system on a grid with its weighted spaces and bulk Bloch bases."""

    def __init__(self, sys: JunctionSystem, grid: Grid, cutoff: Optional[CutoffPair] = None):
        self.sys = sys
        self.grid = grid
        self.full = WeightContext.of(grid, sys)
        self.left_ctx = WeightContext.of(grid, sys.left)
        self.right_ctx = WeightContext.of(grid, sys.right)
        self.cut = cutoff if cutoff is not None else CutoffPair.on(grid)
        self.op = discretize(self.full, grid)
        self._bases = {}

    @classmethod
    def build(cls, sys: JunctionSystem, cells: int, points_per_cell: int) -> "Scene":
        p = max(sys.left.period, sys.right.period)
        return cls(sys, Grid.for_period(p, cells, points_per_cell))

    def medium(self, side: str) -> Medium:
        return self.sys.left if side == LEFT else self.sys.right

    def context(self, side: str) -> WeightContext:
        return self.left_ctx if side == LEFT else self.right_ctx

    def basis(self, side: str) -> GridBlochBasis:
        if side not in self._bases:
            self._bases[side] = GridBlochBasis(self.medium(side), self.grid)
        return self._bases[side]

    def pair(self, side: str, state: StateVector) -> StatePair:
        zero_l = StateVector.zeros(self.left_ctx)
        zero_r = StateVector.zeros(self.right_ctx)
        st = state.in_context(self.context(side))
        return StatePair(st, zero_r) if side == LEFT else StatePair(zero_l, st)

    def J(self, pair: StatePair) -> StateVector:
        return apply_junction(self.cut, pair, self.full)

    def J_adjoint(self, phi: StateVector) -> StatePair:
        return apply_junction_adjoint(self.cut, phi, self.left_ctx, self.right_ctx)

    def free(self, pair: StatePair, t: float, dt: Optional[float] = None, alarm: Optional[float] = None) -> StatePair:
        out = []
        for side, st in ((LEFT, pair.left), (RIGHT, pair.right)):
            if np.any(st.values):
                st = propagate_free(st, self.medium(side), t, self.basis(side), alarm, cayley_dt=dt)
            out.append(st)
        return StatePair(*out)


def packet_step(energy: float) -> float:
    """Crank-Nicolson step for a packet of typical energy ``energy``."""
    return float(min(0.5, 0.3 / max(abs(energy), 1e-3)))


def packet_width(sigma_k: float) -> float:
    """Standard deviation of the energy density of a Gaussian packet in x."""
    return 1.0 / (np.sqrt(2.0) * sigma_k)


# ---------------------------------------------------------------------------
# wave-operator iterates

@dataclasses.dataclass(frozen=True)
class MollerReport:
    direction: int
    schedule: tuple
    norms: tuple
    increments: tuple
    initial_norm: float
    final_norm: float
    defect: float
    energy_initial: Optional[float]
    energy_final: Optional[float]
    dt: float

    @property
    def increments_decrease(self) -> bool:
        inc = self.increments
        return len(inc) >= 2 and inc[-1] <= 0.5 * inc[0]

    def verdict(self, isometric: float = ISOMETRIC_DEFECT, null: float = NULL_NORM) -> str:
        if self.defect < isometric:
            return "ISOMETRIC"
        if self.final_norm < null:
            return "NULL"
        return "UNRESOLVED"

    def to_json(self) -> dict:
        return {
            "direction": "plus" if self.direction > 0 else "minus",
            "schedule": list(self.schedule),
            "norms": list(self.norms),
            "increments": list(self.increments),
            "final_norm": self.final_norm,
            "defect": self.defect,
            "verdict": self.verdict(),
        }


def default_schedule(velocity: float, sigma_k: float, halfwidth: float, dt: float, points: int = 5) -> tuple:
    """``T_0 2^i``; ``T_0`` lets the free packet centre clear the transition
    region by 2.5 packet widths."""
    t0 = (max(halfwidth, 1.0) + 2.5 * packet_width(sigma_k)) / abs(velocity)
    t0 = dt * np.ceil(t0 / dt)
    return tuple(float(t0 * 2 ** i) for i in range(points))


def moller_iterate(scene: Scene, pair: StatePair, direction: int, schedule: Sequence[float], dt: float,
                   increments: bool = True, keep_state: bool = True, alarm: float = 1e-4,
                   tol: float = 1e-12):
    """``W(T) = e^{iTM} J e^{-iTM_0}`` (direction +) or with ``T -> -T`` (direction -).

    Both evolutions use Crank-Nicolson phases of step ``dt``; times are
    rounded to multiples of ``dt``.  The norm of ``W(T)`` equals the norm of
    ``J e^{-iTM_0}`` exactly, so norms and the defect need no full evolution.
    Returns ``(report, final state or None)``.
    """
    d = 1 if direction > 0 else -1
    times = [dt * max(1, round(T / dt)) for T in schedule]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("schedule must be strictly increasing after rounding to the time step")
    cfg = PropagatorConfig(dt=dt, tol=tol, boundary_alarm=alarm)
    n0 = pair.norm()
    chis = []
    for T in times:
        chi = scene.J(scene.free(pair, d * T, dt, alarm))
        chis.append(chi)
    norms = [c.norm() for c in chis]
    incs = []
    if increments:
        for i in range(len(times) - 1):
            back = propagate_full(chis[i + 1], scene.op, -d * (times[i + 1] - times[i]), cfg)
            incs.append((back - chis[i]).norm())
    final = propagate_full(chis[-1], scene.op, -d * times[-1], cfg) if keep_state else None
    e0 = e1 = None
    if n0 > 0:
        e0 = sum(expectation(discretize(st.context, scene.grid), st) * st.norm() ** 2
                 for st in (pair.left, pair.right) if np.any(st.values)) / n0 ** 2
    if norms[-1] > NULL_NORM:
        e1 = expectation(scene.op, chis[-1])
    report = MollerReport(d, tuple(times), tuple(norms), tuple(incs), n0, norms[-1], abs(norms[-1] - n0),
                          e0, e1, dt)
    return report, final


@dataclasses.dataclass(frozen=True)
class InitialSetResult:
    side: str
    sign: int
    direction: int
    band: int
    k0: float
    final_norm: float
    defect: float
    verdict: str
    report: MollerReport


def _packet_for(scene: Scene, side: str, bs: BandStructure, sign: int, window, sigma_k: Optional[float],
                center_cells: int = 0) -> Wavepacket:
    medium = scene.medium(side)
    sigma_k = sigma_k if sigma_k is not None else 0.05 * np.pi / medium.period
    band, k0 = bs.find_mode(0.5 * (window[0] + window[1]), sign)
    return make_wavepacket(medium, bs, band, k0, sigma_k, sign, window, scene.grid, scene.basis(side),
                           center_cells=center_cells)


def initial_set_check(scene: Scene, side: str, sign: int, direction: int, window, bs: BandStructure,
                      sigma_k: Optional[float] = None, increments: bool = True, schedule=None,
                      isometric: float = ISOMETRIC_DEFECT, null: float = NULL_NORM) -> InitialSetResult:
    """Run the wave-operator iterate on a single-side packet and classify it."""
    wp = _packet_for(scene, side, bs, sign, window, sigma_k)
    dt = packet_step(max(abs(window[0]), abs(window[1])))
    if schedule is None:
        schedule = default_schedule(wp.mean_velocity, wp.sigma_k, scene.sys.transition_halfwidth, dt)
    rep, _ = moller_iterate(scene, scene.pair(side, wp.state), direction, schedule, dt,
                            increments=increments, keep_state=False)
    return InitialSetResult(side, sign, 1 if direction > 0 else -1, wp.band, wp.k0, rep.final_norm,
                            rep.defect, rep.verdict(isometric, null), rep)


EXPECTED_ISOMETRIC = frozenset({(LEFT, -1, 1), (RIGHT, 1, 1), (LEFT, 1, -1), (RIGHT, -1, -1)})


def dichotomy_matrix(scene: Scene, window, bands: dict, sigma_k: Optional[float] = None,
                     increments: bool = False) -> dict:
    """All 8 (side, velocity sign, direction) cells; ``bands`` maps side -> BandStructure."""
    out = {}
    for side in (LEFT, RIGHT):
        for sign in (-1, 1):
            for direction in (1, -1):
                out[(side, sign, direction)] = initial_set_check(
                    scene, side, sign, direction, window, bands[side], sigma_k, increments)
    return out


# ---------------------------------------------------------------------------
# asymptotic velocity

@dataclasses.dataclass(frozen=True)
class VelocityTrace:
    times: tuple
    values: tuple  # <Q>/t
    limit: float
    rms_values: tuple  # sqrt(<Q^2>)/t
    rms_limit: float
    bound: float

    @property
    def bounded(self) -> bool:
        return all(abs(v) <= 1.05 * self.bound for v in self.values)


def _fit_inverse_t(times, values) -> float:
    A = np.column_stack([np.ones(len(times)), 1.0 / np.asarray(times)])
    coef, *_ = np.linalg.lstsq(A, np.asarray(values), rcond=None)
    return float(coef[0])


def asymptotic_velocity(medium: Medium, state: StateVector, times: Sequence[float],
                        basis: Optional[GridBlochBasis] = None, alarm: float = 1e-4) -> VelocityTrace:
    """``<psi(t), Q psi(t)>_w / (t |psi|^2)`` under free evolution, extrapolated by ``a + b/t``."""
    basis = basis if basis is not None else GridBlochBasis(medium, state.grid)
    ex = bloch_analyze(state, medium, basis)
    propagate_free(state, medium, max(times), basis, alarm)  # orbit check up to the last time
    x = state.grid.x
    vals, rms = [], []
    for t in times:
        st = StateVector(basis.synthesize(ex.evolve(t).coeffs), state.context)
        check_boundary(st, alarm, f"free t={t:.4g}")
        rho = st.density()
        m = rho.sum()
        vals.append(float((x * rho).sum() / m / t))
        rms.append(float(np.sqrt((x * x * rho).sum() / m) / t))
    bound = float(np.abs(basis.velocities).max())
    return VelocityTrace(tuple(float(t) for t in times), tuple(vals), _fit_inverse_t(times, vals),
                         tuple(rms), _fit_inverse_t(times, rms), bound)


# ---------------------------------------------------------------------------
# time-domain scattering

@dataclasses.dataclass(frozen=True)
class ScatterReport:
    incident: dict
    R: float
    T: float
    residual: float
    flux_defect: float
    per_band: tuple
    time: float
    injected: float  # |J phi|^2 / |phi|^2 for the incident pair

    def to_json(self) -> dict:
        return {"R": self.R, "T": self.T, "residual": self.residual, "flux_defect": self.flux_defect,
                "per_band": [dict(e) for e in self.per_band], "time": self.time, "incident": dict(self.incident)}


def channel_masses(scene: Scene, state: StateVector, gap_periods: int = CHANNEL_GAP_PERIODS) -> dict:
    """Weighted masses of outgoing/incoming components on the two half-domains.

    Each half-domain starts ``gap_periods`` periods from the junction and is
    analyzed in its own medium's Bloch basis; branches are sorted by energy at
    every quasi-momentum and split by the sign of the group velocity.
    """
    p = max(scene.sys.left.period, scene.sys.right.period)
    cut = gap_periods * p
    x = scene.grid.x
    h = scene.grid.h
    total = state.norm() ** 2
    res = {"total": total, "per_band": []}
    masks = {LEFT: x < -cut, RIGHT: x >= cut}
    mid = ~(masks[LEFT] | masks[RIGHT])
    res["middle"] = float(h * state.density()[mid].sum())
    for side, outgoing in ((LEFT, -1), (RIGHT, 1)):
        windowed = state.with_values(np.where(masks[side][:, None], state.values, 0.0))
        ex = bloch_analyze(windowed, scene.medium(side), scene.basis(side))
        wts = ex.weights()
        sgn = np.sign(ex.basis.velocities)
        res[f"{side}_out"] = float(wts[sgn == outgoing].sum())
        res[f"{side}_in"] = float(wts[sgn != outgoing].sum())
        per = wts * (sgn == outgoing)
        for m in np.flatnonzero(per.sum(axis=0) > 1e-6 * total):
            res["per_band"].append({"side": side, "band": int(m), "mass": float(per[:, m].sum())})
    return res


def time_domain_scatter(scene: Scene, bs: BandStructure, window, side: str = LEFT,
                        sigma_k: Optional[float] = None, energy: Optional[float] = None,
                        max_time: Optional[float] = None, residual_tol: float = 1e-3,
                        dt: Optional[float] = None, alarm: float = 1e-4, tol: float = 1e-12) -> ScatterReport:
    """Send a packet from ``side`` towards the junction and measure R and T.

    ``bs`` is the band structure of the incident medium.  The packet is
    centred four widths plus the transition half-width away from the
    junction, moving towards it.
    """
    medium = scene.medium(side)
    sign = 1 if side == LEFT else -1
    sigma_k = sigma_k if sigma_k is not None else 0.05 * np.pi / medium.period
    lam0 = 0.5 * (window[0] + window[1]) if energy is None else energy
    band, k0 = bs.find_mode(lam0, sign)
    width = packet_width(sigma_k)
    p = medium.period
    offset = int(np.ceil((max(scene.sys.transition_halfwidth, 1.0) + 4 * width) / p))
    wp = make_wavepacket(medium, bs, band, k0, sigma_k, sign, window, scene.grid, scene.basis(side),
                         center_cells=-sign * offset)
    pair = scene.pair(side, wp.state)
    psi = scene.J(pair)
    injected = psi.norm() ** 2 / pair.norm() ** 2
    n0 = psi.norm() ** 2
    dt = dt if dt is not None else packet_step(max(abs(window[0]), abs(window[1])))
    v = abs(wp.mean_velocity)
    travel = offset * p + CHANNEL_GAP_PERIODS * p + 4 * width
    chunk = dt * np.ceil(travel / v / dt)
    max_time = max_time if max_time is not None else 6 * chunk
    cfg = PropagatorConfig(dt=dt, tol=tol, boundary_alarm=alarm)
    t = 0.0
    masses = None
    while t < max_time - 1e-12:
        step = min(chunk, max_time - t)
        psi = propagate_full(psi, scene.op, step, cfg)
        t += step
        masses = channel_masses(scene, psi)
        resid = (masses["middle"] + masses["left_in"] + masses["right_in"]) / n0
        log.debug("t=%.4g residual=%.3e", t, resid)
        if resid <= residual_tol:
            break
    R = masses["left_out"] / n0
    T = masses["right_out"] / n0
    residual = (masses["middle"] + masses["left_in"] + masses["right_in"]) / n0
    if side == RIGHT:
        R, T = T, R
    if residual > 0.1:
        raise NonSeparation(f"{residual:.3f} of the mass is still near the junction or incoming at t={t:.4g}")
    per_band = tuple(dict(e, mass=e["mass"] / n0) for e in masses["per_band"])
    incident = {"side": side, "band": int(band), "k0": float(k0), "sigma_k": float(sigma_k),
                "energy": wp.mean_energy}
    return ScatterReport(incident, float(R), float(T), float(residual),
                         float(abs(R + T + residual - 1.0)), per_band, float(t), float(injected))
