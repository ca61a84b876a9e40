"""Thresholds, band and gap bookkeeping, Mourre constants, resolvent decay
along imaginary quasi-momentum, and gap eigenvalues of junction operators."""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse.linalg as spla

from .bloch import BandStructure, GridBlochBasis, PlaneWaveFiber, solve_bands
from .dynamics import discretize
from .errors import (ConvergenceFailure, InsufficientBands, NoCommonGap, SingularFiber,
                     WindowMismatch, WindowTouchesThreshold)
from .grid import Grid, StateVector, WeightContext
from .media import JunctionSystem, Medium

THRESHOLD_TOL = 1e-9
K_BRACKET = 1e-10
MERGE_TOL = 1e-9
CURVATURE_STEP = 1e-3
LOCALIZATION_PERIODS = 20
LOCALIZATION_MASS = 0.99


# ---------------------------------------------------------------------------
# thresholds

@dataclasses.dataclass(frozen=True)
class Threshold:
    lam: float
    band: int
    k: float
    curvature: float
    slope: float


@dataclasses.dataclass(frozen=True)
class ThresholdSet:
    entries: tuple
    medium: str = ""

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries])

    def within(self, a: float, b: float, margin: float = 0.0) -> list:
        return [e for e in self.entries if a - margin <= e.lam <= b + margin]

    def to_json(self) -> list:
        return [{"lambda": e.lam, "band": e.band, "k": e.k, "curvature": e.curvature} for e in self.entries]


def _curvature(bs: BandStructure, n: int, k: float, h: float = CURVATURE_STEP) -> float:
    f = [bs.value(n, k + s * h) for s in (-2, -1, 0, 1, 2)]
    return abs((-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h))


def find_thresholds(bs: BandStructure, tol: float = THRESHOLD_TOL, window=None) -> ThresholdSet:
    """Critical points of every band: sign changes of the slope on the k-grid,
    exact zeros on the grid, and the symmetric points k = 0, +-pi/p."""
    if bs.velocities is None:
        raise ValueError("band structure has no velocities")
    p = bs.period
    kz = np.pi / p
    found = []

    def slope(n):
        return lambda k: bs.track(n, k)[1]

    for n in range(bs.n_bands):
        v = bs.velocities[:, n]
        cands = []
        for i in range(len(v) - 1):
            if v[i] == 0.0 or v[i + 1] == 0.0:
                continue
            if np.sign(v[i]) != np.sign(v[i + 1]):
                k = sopt.brentq(slope(n), bs.kgrid[i], bs.kgrid[i + 1], xtol=K_BRACKET, rtol=4 * np.finfo(float).eps)
                cands.append(k)
        cands.extend(bs.kgrid[np.abs(v) < tol])
        cands.extend([0.0, -kz, kz])
        for k in cands:
            lam, vel, _ = bs.track(n, float(k))
            if abs(vel) < tol:
                found.append((lam, n, float(k), vel))
    entries = []
    for lam, n, k, vel in sorted(found):
        kc = _canonical_k(k, p)
        if any(e.band == n and abs(e.lam - lam) < MERGE_TOL and abs(_canonical_k(e.k, p) - kc) < 1e-6 for e in entries):
            continue
        entries.append(Threshold(float(lam), n, k, _curvature(bs, n, k), float(vel)))
    if window is not None:
        entries = [e for e in entries if window[0] <= e.lam <= window[1]]
    entries.sort(key=lambda e: (e.lam, e.band, e.k))
    name = getattr(getattr(bs.fiber, "medium", None), "name", "") or ""
    return ThresholdSet(tuple(entries), name)


def _canonical_k(k: float, p: float) -> float:
    """Representative of k modulo 2 pi/p in (-pi/p, pi/p]."""
    g = 2 * np.pi / p
    r = -((-k + np.pi / p) % g) + np.pi / p
    return r if r > -np.pi / p + 1e-12 else r + g


# ---------------------------------------------------------------------------
# interval bookkeeping (closed intervals)

def merge_intervals(intervals, tol: float = MERGE_TOL) -> list:
    """Union of closed intervals; endpoints are copied from the inputs."""
    ivs = sorted((float(a), float(b)) for a, b in intervals if b >= a)
    out = []
    for a, b in ivs:
        if out and a <= out[-1][1] + tol:
            if b > out[-1][1]:
                out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return out


def complement(intervals, window, tol: float = MERGE_TOL) -> list:
    a, b = window
    out, cur = [], a
    for lo, hi in merge_intervals(intervals, tol):
        if lo > cur + tol:
            out.append((cur, lo))
        cur = max(cur, hi)
    if b > cur + tol:
        out.append((cur, b))
    return out


@dataclasses.dataclass(frozen=True)
class MediumSpectrum:
    window: tuple
    bands: tuple  # per analytic band (lo, hi) before clipping
    intervals: tuple  # merged and clipped to the window
    thresholds: ThresholdSet

    @property
    def gaps(self) -> list:
        return complement(self.intervals, self.window)


def _coverage(bs: BandStructure, window) -> None:
    a, b = window
    c = 0.5 * (a + b)
    for i in range(len(bs.kgrid)):
        rest = list(bs.spectra[i])
        for lam in bs.bands[i]:
            rest.pop(int(np.argmin(np.abs(np.asarray(rest) - lam))))
        rest = np.asarray(rest)
        below = rest[rest < c]
        above = rest[rest >= c]
        lo = below.max() if below.size else -np.inf
        hi = above.min() if above.size else np.inf
        if lo >= a or hi <= b:
            raise InsufficientBands(
                f"untracked eigenvalue in [{a:g}, {b:g}] at k={bs.kgrid[i]:.6g}; increase n_bands"
            )


def spectrum_of_medium(bs: BandStructure, window, thresholds: Optional[ThresholdSet] = None) -> MediumSpectrum:
    """Band ranges (grid extrema plus threshold values), clipped and merged."""
    a, b = map(float, window)
    _coverage(bs, (a, b))
    th = thresholds if thresholds is not None else find_thresholds(bs)
    bands = []
    for n in range(bs.n_bands):
        vals = list(bs.bands[:, n]) + [e.lam for e in th if e.band == n]
        bands.append((float(min(vals)), float(max(vals))))
    clipped = [(max(lo, a), min(hi, b)) for lo, hi in bands if hi >= a and lo <= b]
    return MediumSpectrum((a, b), tuple(bands), tuple(merge_intervals(clipped)), th)


@dataclasses.dataclass(frozen=True)
class SpectrumReport:
    window: tuple
    left: tuple
    right: tuple
    union: tuple
    gaps: dict
    common_gaps: tuple

    def to_json(self) -> dict:
        return {
            "window": list(self.window),
            "bands": [list(iv) for iv in self.union],
            "gaps": [list(iv) for iv in self.common_gaps],
            "common_gaps": [list(iv) for iv in self.common_gaps],
            "left": [list(iv) for iv in self.left],
            "right": [list(iv) for iv in self.right],
        }

    def common_gap_containing(self, a: float, b: float):
        for lo, hi in self.common_gaps:
            if lo <= a and b <= hi:
                return (lo, hi)
        return None


def essential_spectrum_union(left: MediumSpectrum, right: MediumSpectrum) -> SpectrumReport:
    if left.window != right.window:
        raise WindowMismatch(f"windows differ: {left.window} vs {right.window}")
    union = merge_intervals(list(left.intervals) + list(right.intervals))
    return SpectrumReport(
        window=left.window,
        left=left.intervals,
        right=right.intervals,
        union=tuple(union),
        gaps={"left": left.gaps, "right": right.gaps},
        common_gaps=tuple(complement(union, left.window)),
    )


# ---------------------------------------------------------------------------
# Mourre constant

@dataclasses.dataclass(frozen=True)
class MourreReport:
    window: tuple
    bands: tuple
    c_I: float
    band: Optional[int]
    k_min: Optional[float]

    def to_json(self) -> dict:
        c = self.c_I if math.isfinite(self.c_I) else None
        return {"a": self.window[0], "b": self.window[1], "c_I": c, "band": self.band,
                "k_min": self.k_min, "bands": list(self.bands)}


def mourre_constant(bs: BandStructure, window, thresholds: Optional[ThresholdSet] = None,
                    margin: float = 1e-6) -> MourreReport:
    """min |lam_n'(k)|^2 over all (n, k) with lam_n(k) in the window."""
    a, b = map(float, window)
    if not a <= b:
        raise ValueError("window must satisfy a <= b")
    th = thresholds if thresholds is not None else find_thresholds(bs)
    near = th.within(a, b, margin)
    if near:
        raise WindowTouchesThreshold(
            f"threshold {near[0].lam:.10g} (band {near[0].band}) lies within {margin:g} of [{a:g}, {b:g}]"
        )
    kg = bs.kgrid
    best = (math.inf, None, None)
    contributing = []

    def consider(n, k):
        nonlocal best
        lam, vel, _ = bs.track(n, k)
        if a - 1e-12 <= lam <= b + 1e-12 and vel * vel < best[0]:
            best = (vel * vel, n, float(k))

    for n in range(bs.n_bands):
        lam = bs.bands[:, n]
        v2 = bs.velocities[:, n] ** 2
        inside = (lam >= a) & (lam <= b)
        hit = bool(inside.any())
        for i in np.flatnonzero(inside):
            if v2[i] < best[0]:
                best = (float(v2[i]), n, float(kg[i]))
        for i in range(len(kg) - 1):
            for level in (a, b):
                if (lam[i] - level) * (lam[i + 1] - level) < 0:
                    hit = True
                    k = sopt.brentq(lambda k: bs.value(n, k) - level, kg[i], kg[i + 1], xtol=1e-13)
                    consider(n, k)
        # interior local minima of |slope| among in-window grid points
        for i in np.flatnonzero(inside):
            lo, hi = max(i - 1, 0), min(i + 1, len(kg) - 1)
            if v2[i] <= v2[lo] and v2[i] <= v2[hi] and hi > lo:
                res = sopt.minimize_scalar(lambda k: bs.track(n, k)[1] ** 2, bounds=(kg[lo], kg[hi]),
                                           method="bounded", options={"xatol": 1e-12})
                consider(n, float(res.x))
        if hit:
            contributing.append(n)
    c, n, k = best
    if contributing and not c > 0:
        raise WindowTouchesThreshold(f"vanishing slope inside [{a:g}, {b:g}] at band {n}, k={k}")
    return MourreReport((a, b), tuple(contributing), float(c), n, k)


# ---------------------------------------------------------------------------
# flat-band certificate

@dataclasses.dataclass(frozen=True)
class FlatBandCertificate:
    rho: tuple
    norms: tuple
    slope: float
    intercept: float

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.norms) < 0))

    def to_json(self) -> dict:
        return {"rho": list(self.rho), "norm": list(self.norms), "slope": self.slope, "intercept": self.intercept}


def flat_band_certificate(medium: Medium, N: int = 64, rhos: Sequence[float] = (10, 10 ** 1.5, 100, 10 ** 2.5, 1000),
                          fiber: Optional[PlaneWaveFiber] = None) -> FlatBandCertificate:
    """Weighted norm of the inverse fiber at imaginary quasi-momentum i*rho."""
    rhos = np.asarray(rhos, float)
    if np.any(rhos <= 0) or np.any(np.diff(rhos) <= 0):
        raise ValueError("rhos must be positive and increasing")
    fiber = fiber if fiber is not None else PlaneWaveFiber(medium, N)
    norms = []
    for rho in rhos:
        inv, smin = fiber.fiber_inverse_norm(1j * rho)
        scale = np.linalg.norm(fiber.H0, 2) + rho * np.linalg.norm(fiber.dH, 2)
        if smin <= 1e3 * np.finfo(float).eps * scale:
            raise SingularFiber(f"fiber at k=i*{rho:g} is numerically singular (sigma_min={smin:.3e})")
        norms.append(inv)
    slope, intercept = np.polyfit(np.log(rhos), np.log(norms), 1)
    return FlatBandCertificate(tuple(rhos.tolist()), tuple(float(x) for x in norms), float(slope), float(intercept))


# ---------------------------------------------------------------------------
# interface states

@dataclasses.dataclass(frozen=True)
class InterfaceState:
    lam: float
    decay_rate: float
    center: float
    mass_near_junction: float
    state: StateVector = dataclasses.field(repr=False, compare=False)


@dataclasses.dataclass(frozen=True)
class InterfaceStateReport:
    window: tuple
    states: tuple
    discarded: tuple  # eigenvalues in the window localized away from x = 0
    bulk: tuple  # eigenvalues inside the grid operator's bulk bands

    @property
    def eigenvalues(self) -> list:
        return [s.lam for s in self.states]

    def to_json(self) -> list:
        return [{"lambda": s.lam, "decay_rate": s.decay_rate, "center": s.center} for s in self.states]


def junction_spectrum(sys: JunctionSystem, window, N: int = 64, kpoints: int = 201, n_bands: int = 8) -> SpectrumReport:
    spans = []
    for med in (sys.left, sys.right):
        bs = solve_bands(med, np.linspace(-np.pi / med.period, np.pi / med.period, kpoints), N=N, n_bands=n_bands)
        spans.append(spectrum_of_medium(bs, window))
    return essential_spectrum_union(*spans)


def _circular_center(x: np.ndarray, rho: np.ndarray, L: float) -> float:
    z = np.sum(rho * np.exp(1j * np.pi * x / L))
    return float(L / np.pi * np.angle(z))


def _periodic_distance(x, c, L):
    d = np.abs(x - c) % (2 * L)
    return np.minimum(d, 2 * L - d)


def _decay_rate(x: np.ndarray, amp: np.ndarray, center: float, period: float, L: float) -> float:
    """Exponential rate of the cellwise amplitude envelope, fitted on both sides
    above the discretization floor (100x the smallest envelope value)."""
    rates = []
    for side in (-1, 1):
        d = side * (x - center)
        sel = (d > 2 * period) & (d < L)
        bins = np.floor(d[sel] / period)
        ub = np.unique(bins)
        if ub.size < 3:
            continue
        env = np.array([amp[sel][bins == u].max() for u in ub])
        keep = env > 100 * env.min()
        if keep.sum() < 3:
            continue
        slope = np.polyfit((ub[keep] + 0.5) * period, np.log(env[keep]), 1)[0]
        rates.append(-slope)
    return float(min(rates)) if rates else float("nan")


def grid_band_ranges(medium: Medium, grid: Grid) -> list:
    """Ranges of the sorted eigenvalue branches of the grid operator of a medium."""
    e = GridBlochBasis(medium, grid).energies
    return merge_intervals(zip(e.min(axis=0), e.max(axis=0)))


def interface_states(sys: JunctionSystem, window, grid: Grid, spectrum: Optional[SpectrumReport] = None,
                     n_eigs: int = 8, N: int = 64) -> InterfaceStateReport:
    """Gap eigenvalues of the junction operator localized at the physical junction.

    The domain is periodic, so a second junction sits at the wrap point; states
    whose mass is not concentrated within 20 periods of x = 0 are discarded.
    """
    a, b = map(float, window)
    if spectrum is None:
        spectrum = junction_spectrum(sys, (a - 1.0, b + 1.0), N=N)
    if spectrum.common_gap_containing(a, b) is None:
        raise NoCommonGap(f"[{a:g}, {b:g}] is not inside a common gap of the two media")
    op = discretize(sys, grid)
    H, S = op.symmetric_matrix()
    dim = H.shape[0]
    sigma = 0.5 * (a + b)
    k = min(n_eigs, dim - 2)
    while True:
        try:
            vals, vecs = spla.eigsh(H, k=k, sigma=sigma, which="LM", tol=1e-14, maxiter=10 * dim)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailure(f"shift-invert iteration stagnated: {exc}") from exc
        far = np.abs(vals - sigma).max()
        if far > 0.5 * (b - a) or k >= dim - 2:
            break
        k = min(2 * k, dim - 2)
    sel = (vals >= a) & (vals <= b)
    vals, vecs = vals[sel], vecs[:, sel]
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    bulk_ranges = merge_intervals(grid_band_ranges(sys.left, grid) + grid_band_ranges(sys.right, grid))
    ctx = WeightContext.of(grid, sys)
    x, L = grid.x, grid.half_length
    period = max(sys.left.period, sys.right.period)
    n = grid.n_points
    kept, discarded, bulk = [], [], []
    for lam, y in zip(vals, vecs.T):
        if any(lo <= lam <= hi for lo, hi in bulk_ranges):
            bulk.append(float(lam))
            continue
        psi = (S @ y) / np.sqrt(grid.h)
        st = StateVector(np.column_stack([psi[:n], psi[n:]]), ctx)
        rho = st.density()
        total = rho.sum()
        center = _circular_center(x, rho, L)
        near = rho[_periodic_distance(x, 0.0, L) <= LOCALIZATION_PERIODS * period].sum() / total
        around = rho[_periodic_distance(x, center, L) <= LOCALIZATION_PERIODS * period].sum() / total
        if near >= LOCALIZATION_MASS and around >= LOCALIZATION_MASS:
            rate = _decay_rate(x, np.sqrt(rho), center, period, L)
            kept.append(InterfaceState(float(lam), rate, center, float(near), st))
        else:
            discarded.append(float(lam))
    return InterfaceStateReport((a, b), tuple(kept), tuple(discarded), tuple(bulk))


def gap_eigenvalues_dense(sys: JunctionSystem, window, grid: Grid) -> np.ndarray:
    """All eigenvalues of the periodic-domain junction matrix in the window (dense check)."""
    H, _ = discretize(sys, grid).symmetric_matrix()
    return sla.eigh(H, eigvals_only=True, subset_by_value=tuple(window))
