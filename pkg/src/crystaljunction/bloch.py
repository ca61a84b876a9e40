"""Bloch-Floquet fibers, band structures and the discrete Bloch transform.

Two fiber discretizations are provided.

``PlaneWaveFiber``
    Galerkin discretization of ``w D(k)`` on one cell in a Fourier basis.  The
    eigenproblem ``D(k) u = lam w^{-1} u`` is reduced to a Hermitian matrix
    ``H(k) = S^H D(k) S`` with ``S S^H = W`` the inverse of the Gram matrix
    ``B = [w^{-1}]``.  For layered media the cell coordinate is stretched so
    that the map ``theta = g(xi)`` is flat at every interface; eigenfunctions
    (which have kinks there) become smooth in ``xi`` and the band error decays
    much faster than ``N^-3``.  ``D(k)`` then reads ``offdiag(K + k G)`` with
    ``G`` the Toeplitz matrix of ``g'``; without stretching ``G = I``.

``GridFiber``
    The exact fiber of the real-space operator ``W_h D_h`` (spectral
    derivative on a periodic grid).  The dynamics uses this one, so Bloch
    analysis, free propagation and the grid Hamiltonian agree to round-off.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (CholeskyFailure, IncommensurateDomain, LabelingAmbiguity,
                     MissingEigenvectors)
from .grid import Grid, StateVector, WeightContext
from .media import Medium

OVERLAP_THRESHOLD = 0.8
MAX_REFINE = 6
DEG_RTOL = 1e-8


def default_kgrid(period: float, n: int = 201) -> np.ndarray:
    return np.linspace(-np.pi / period, np.pi / period, n)


def fold_k(k, period):
    """Map quasi-momenta into [-pi/p, pi/p)."""
    g = 2 * np.pi / period
    return np.mod(np.asarray(k, dtype=float) + g / 2, g) - g / 2


def hermitian_eig(H: np.ndarray, dH: np.ndarray, deg_tol: Optional[float] = None):
    """Eigenpairs of ``H`` and Hellmann-Feynman slopes along ``dH``.

    Inside clusters of (near-)degenerate eigenvalues the basis is rotated to
    diagonalize ``dH``, which selects the analytic branches through a crossing
    and gives their individual slopes.
    """
    lam, Y = np.linalg.eigh(H)
    if deg_tol is None:
        deg_tol = DEG_RTOL * max(lam[-1] - lam[0], 1.0)
    vel = np.einsum("ij,ij->j", Y.conj(), dH @ Y).real
    starts = np.flatnonzero(np.diff(lam) >= deg_tol) + 1
    for block in np.split(np.arange(len(lam)), starts):
        if len(block) < 2:
            continue
        Yc = Y[:, block]
        P = Yc.conj().T @ dH @ Yc
        v, R = np.linalg.eigh(0.5 * (P + P.conj().T))
        Y[:, block] = Yc @ R
        vel[block] = v
    return lam, Y, vel


# ---------------------------------------------------------------------------
# plane-wave Galerkin fiber

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _stretch_prime(t):
    # derivative of t - sin(2 pi t) / (2 pi): vanishes to second order at t = 0, 1
    return 1.0 - np.cos(2 * np.pi * t)


class PlaneWaveFiber:
    """Fiber operators ``M(k) = w D(k)`` truncated to modes ``|n| <= N``."""

    def __init__(self, medium: Medium, N: int = 64, stretch: Optional[bool] = None):
        if N < 1:
            raise ValueError("N must be >= 1")
        self.medium = medium
        self.N = int(N)
        self.period = medium.period
        self.stretch = bool(medium.interfaces.size) if stretch is None else bool(stretch)
        n = 2 * self.N + 1
        self.modes = np.arange(-self.N, self.N + 1)
        gprime, winv = self._coefficients()
        G = _toeplitz(gprime, self.N)
        B = np.empty((2 * n, 2 * n), complex)
        for a in range(2):
            for b in range(2):
                B[a * n:(a + 1) * n, b * n:(b + 1) * n] = _toeplitz(winv[:, a, b], self.N)
        B = 0.5 * (B + B.conj().T)
        try:
            L = np.linalg.cholesky(B)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure(f"Gram matrix of w^-1 not positive definite at N={N}") from exc
        self.gram = B
        self._L = L
        K = np.diag(2 * np.pi * self.modes / self.period).astype(complex)
        self._K, self._G = K, G
        self.H0 = self._reduce(_offdiag(K))
        self.dH = self._reduce(_offdiag(G))

    @property
    def dim(self) -> int:
        return 2 * (2 * self.N + 1)

    def _reduce(self, A):
        X = sla.solve_triangular(self._L, A, lower=True)
        X = sla.solve_triangular(self._L, X.conj().T, lower=True).conj().T
        return X

    def _coefficients(self):
        """Fourier tables (m = -2N..2N) of g'(xi) and g'(xi) w^{-1}(g(xi))."""
        med, p, M = self.medium, self.period, 2 * self.N
        ms = np.arange(-M, M + 1)
        prof = med.profile
        if prof.kind == "layers":
            edges = prof.edges
            xs, ws, gp = [], [], []
            for a, b in zip(edges[:-1], edges[1:]):
                width = b - a
                nsub = int(np.ceil(2 * M * width / p)) + 4
                sub = np.linspace(0.0, 1.0, nsub + 1)
                t = ((sub[:-1, None] + sub[1:, None]) / 2 + (sub[1:, None] - sub[:-1, None]) / 2 * _GL_X).ravel()
                wt = (np.diff(sub)[:, None] / 2 * _GL_W).ravel() * width
                xs.append(a + width * t)
                ws.append(wt)
                gp.append(_stretch_prime(t) if self.stretch else np.ones_like(t))
            xi, wt, gp = map(np.concatenate, (xs, ws, gp))
            # interior theta samples keep the layer lookup unambiguous
            mid = 0.5 * (edges[:-1] + edges[1:])
            winv = np.repeat(prof.constitutive(mid), [len(x) for x in xs], axis=0)
        else:
            n = max(8 * (2 * self.N + 1), 2 * (2 * M + 1))
            xi = -p / 2 + p * np.arange(n) / n
            wt = np.full(n, p / n)
            gp = np.ones(n)
            winv = prof.constitutive(xi)
        phase = np.exp(-2j * np.pi * np.outer(ms, xi) / p) * (wt / p)
        g_hat = phase @ gp
        w_hat = np.einsum("mj,jab->mab", phase, gp[:, None, None] * winv)
        return g_hat, w_hat

    def hamiltonian(self, k) -> np.ndarray:
        """``H(k) = H0 + k dH``; Hermitian for real k."""
        H = self.H0 + k * self.dH
        if np.isrealobj(k) or np.imag(k) == 0:
            H = 0.5 * (H + H.conj().T)
        return H

    def eig(self, k: float):
        return hermitian_eig(self.hamiltonian(float(k)), self.dH)

    def generalized_pencil(self, k: float):
        """(D(k), B) with ``D(k) u = lam B u``, for brute-force cross-checks."""
        return _offdiag(self._K + k * self._G), self.gram

    def fiber_inverse_norm(self, k: complex) -> tuple[float, float]:
        """(weighted norm of ``M(k)^{-1}``, sigma_min of H(k)); the norm is 1/sigma_min."""
        s = np.linalg.svd(self.H0 + k * self.dH, compute_uv=False)
        return float(1.0 / s[-1]), float(s[-1])


def _toeplitz(c, N):
    # c indexed m = -2N..2N; T[i, j] = c[(n_i - n_j)]
    idx = np.arange(2 * N + 1)
    return c[(idx[:, None] - idx[None, :]) + 2 * N]


def _offdiag(A):
    n = A.shape[0]
    out = np.zeros((2 * n, 2 * n), complex)
    out[:n, n:] = A
    out[n:, :n] = A
    return out


# ---------------------------------------------------------------------------
# grid-consistent fiber


class GridFiber:
    """Fiber of the spectral real-space operator on one cell of ``grid``."""

    def __init__(self, medium: Medium, grid: Grid):
        self.medium = medium
        self.grid = grid
        self.period = medium.period
        self.n_cells = grid.cells(medium.period)
        nc = grid.points_per_cell(medium.period)
        self.n_points = nc
        self.points = grid.cell_points(medium.period)
        w = grid.sample_cell(medium)
        S = np.linalg.cholesky(w)  # pointwise, w_i = S_i S_i^H
        self.w = w
        self.S_point = S
        Sb = np.zeros((2 * nc, 2 * nc), complex)
        for a in range(2):
            for b in range(2):
                Sb[a * nc:(a + 1) * nc, b * nc:(b + 1) * nc] = np.diag(S[:, a, b])
        self.S = Sb
        self.dft = np.fft.fft(np.eye(nc), norm="ortho")
        self.cell_freq = 2 * np.pi * np.fft.fftfreq(nc, d=1.0 / nc) / self.period
        self.dH = self.S.conj().T @ _offdiag(np.eye(nc)) @ self.S
        self.dH = 0.5 * (self.dH + self.dH.conj().T)
        # k_j of the discrete transform, folded into [-pi/p, pi/p)
        j = np.arange(self.n_cells)
        j = np.where(j >= self.n_cells / 2, j - self.n_cells, j)
        self.kvals = 2 * np.pi * j / (self.n_cells * self.period)

    @property
    def dim(self) -> int:
        return 2 * self.n_points

    def symbol(self, k: float) -> np.ndarray:
        """Multipliers of -i d/dx on e^{ikx} x (cell mode n), aliased like the grid."""
        nyq = np.pi / self.grid.h
        return np.mod(k + self.cell_freq + nyq, 2 * nyq) - nyq

    def hamiltonian(self, k: float) -> np.ndarray:
        F = self.dft
        Dk = F.conj().T @ np.diag(self.symbol(k)) @ F
        H = self.S.conj().T @ _offdiag(Dk) @ self.S
        return 0.5 * (H + H.conj().T)

    def eig(self, k: float):
        return hermitian_eig(self.hamiltonian(k), self.dH)


# ---------------------------------------------------------------------------
# band structures


@dataclasses.dataclass(frozen=True, eq=False)
class BandStructure:
    kgrid: np.ndarray
    bands: np.ndarray  # (nk, nb)
    velocities: Optional[np.ndarray]  # (nk, nb)
    eigvecs: Optional[np.ndarray]  # (nk, dim, nb)
    overlaps: np.ndarray  # (nk, nb); row 0 is 1
    flagged: tuple  # ((k index, band), ...)
    spectra: np.ndarray  # (nk, dim) sorted eigenvalues of H(k)
    fiber: object
    threshold: float = OVERLAP_THRESHOLD

    @property
    def n_bands(self) -> int:
        return self.bands.shape[1]

    @property
    def period(self) -> float:
        return self.fiber.period

    def nearest_index(self, k: float) -> int:
        return int(np.argmin(np.abs(self.kgrid - k)))

    def track(self, n: int, k: float):
        """(lam, dlam/dk, eigvec) of analytic band ``n`` at an arbitrary k."""
        if self.eigvecs is None:
            raise MissingEigenvectors("band structure stored without eigenvectors")
        i = self.nearest_index(k)
        y = self.eigvecs[i, :, n]
        return _follow(self.fiber, self.kgrid[i], y, k, self.threshold, MAX_REFINE)

    def value(self, n: int, k: float) -> float:
        return self.track(n, k)[0]

    def find_mode(self, lam: float, sign: int, band: Optional[int] = None):
        """(band, k) on the grid whose value is closest to ``lam`` with slope sign ``sign``."""
        best = None
        cand = range(self.n_bands) if band is None else [band]
        for n in cand:
            ok = np.sign(self.velocities[:, n]) == sign
            if not np.any(ok):
                continue
            i = np.flatnonzero(ok)[np.argmin(np.abs(self.bands[ok, n] - lam))]
            err = abs(self.bands[i, n] - lam)
            if best is None or err < best[0]:
                best = (err, n, i)
        if best is None:
            raise ValueError(f"no band with velocity sign {sign}")
        _, n, i = best
        # refine k on the band by secant steps on lam_n(k) - lam
        k = self.kgrid[i]
        for _ in range(40):
            val, vel, _ = self.track(n, k)
            if abs(val - lam) < 1e-13 or vel == 0:
                break
            step = (lam - val) / vel
            k = float(np.clip(k + step, self.kgrid[0], self.kgrid[-1]))
        return n, k

    def rows(self):
        for i, k in enumerate(self.kgrid):
            for n in range(self.n_bands):
                v = np.nan if self.velocities is None else self.velocities[i, n]
                yield k, n, self.bands[i, n], v, self.overlaps[i, n]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("k,band,lambda,dlambda_dk,overlap\n")
            for k, n, lam, v, o in self.rows():
                fh.write(f"{k:.15g},{n},{lam:.15g},{v:.15g},{o:.15g}\n")


def _assign(Yprev, Y):
    """Greedy max-overlap matching of tracked columns to new eigenvectors."""
    O = np.abs(Yprev.conj().T @ Y)
    nb = O.shape[0]
    order = np.argsort(-O, axis=None, kind="stable")
    perm = -np.ones(nb, int)
    taken = np.zeros(O.shape[1], bool)
    left = nb
    for flat in order:
        b, j = divmod(int(flat), O.shape[1])
        if perm[b] < 0 and not taken[j]:
            perm[b] = j
            taken[j] = True
            left -= 1
            if left == 0:
                break
    return perm, O[np.arange(nb), perm]


def _match(fiber, ka, Ya, kb, eig_b, threshold, depth):
    """Labels at ``kb`` for columns ``Ya`` at ``ka``, bisecting when overlaps are poor."""
    perm, ov = _assign(Ya, eig_b[1])
    if ov.min() >= threshold or depth == 0:
        return perm, ov
    km = 0.5 * (ka + kb)
    eig_m = fiber.eig(km)
    pm, ovm = _match(fiber, ka, Ya, km, eig_m, threshold, depth - 1)
    perm2, ov2 = _match(fiber, km, eig_m[1][:, pm], kb, eig_b, threshold, depth - 1)
    return perm2, np.minimum(ovm, ov2)


def _follow(fiber, ka, y, k, threshold, depth):
    eig = fiber.eig(k)
    perm, ov = _match(fiber, ka, y[:, None], k, eig, threshold, depth)
    j = perm[0]
    return float(eig[0][j]), float(eig[2][j]), eig[1][:, j]


def _parallel_map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def solve_bands(medium: Medium, kgrid: Optional[Sequence[float]] = None, N: int = 64, n_bands: int = 8,
                fiber=None, threshold: float = OVERLAP_THRESHOLD, max_refine: int = MAX_REFINE,
                strict: bool = False, threads: int = 1) -> BandStructure:
    """Analytically labeled bands on ``kgrid``.

    Starts from the ``n_bands`` eigenvalues nearest zero at the first k-point
    and continues each branch by maximal eigenvector overlap.  Steps whose
    overlap stays below ``threshold`` after ``max_refine`` bisections are
    flagged (or raise :class:`LabelingAmbiguity` when ``strict``).
    """
    fiber = fiber if fiber is not None else PlaneWaveFiber(medium, N)
    kgrid = default_kgrid(medium.period) if kgrid is None else np.asarray(kgrid, dtype=float)
    if np.any(np.diff(kgrid) <= 0):
        raise ValueError("kgrid must be strictly increasing")
    if n_bands > fiber.dim:
        raise ValueError(f"n_bands={n_bands} exceeds fiber dimension {fiber.dim}")
    eigs = _parallel_map(fiber.eig, kgrid, threads)
    nk = len(kgrid)
    lam0 = eigs[0][0]
    pick = np.lexsort((lam0, np.abs(lam0)))[:n_bands]
    pick = np.sort(pick)
    cols = pick
    bands = np.empty((nk, n_bands))
    vels = np.empty((nk, n_bands))
    vecs = np.empty((nk, fiber.dim, n_bands), complex)
    overlaps = np.ones((nk, n_bands))
    flagged = []
    for i in range(nk):
        lam, Y, vel = eigs[i]
        if i > 0:
            cols, ov = _match(fiber, kgrid[i - 1], vecs[i - 1], kgrid[i], eigs[i], threshold, max_refine)
            overlaps[i] = ov
            for n in np.flatnonzero(ov < threshold):
                flagged.append((i, int(n)))
        bands[i] = lam[cols]
        vels[i] = vel[cols]
        vecs[i] = Y[:, cols]
    if strict and flagged:
        i, n = flagged[0]
        raise LabelingAmbiguity(f"band {n} continuity overlap {overlaps[i, n]:.3f} at k={kgrid[i]:.6g}")
    spectra = np.array([e[0] for e in eigs])
    return BandStructure(kgrid, bands, vels, vecs, overlaps, tuple(flagged), spectra, fiber, threshold)


def group_velocity(bs: BandStructure) -> np.ndarray:
    """Hellmann-Feynman slopes ``<v, dH v>`` with a degenerate-subspace fix."""
    if bs.eigvecs is None:
        raise MissingEigenvectors("group velocities need eigenvectors")
    dH = bs.fiber.dH
    vel = np.einsum("kin,kin->kn", bs.eigvecs.conj(), np.einsum("ij,kjn->kin", dH, bs.eigvecs, optimize=True)).real
    for i, k in enumerate(bs.kgrid):
        levels = bs.spectra[i]
        tol = DEG_RTOL * max(levels[-1] - levels[0], 1.0)
        for n in range(bs.n_bands):
            close = np.count_nonzero(np.abs(levels - bs.bands[i, n]) < tol)
            if close > 1:
                lam, Y, v = bs.fiber.eig(k)
                j = int(np.argmax(np.abs(Y.conj().T @ bs.eigvecs[i, :, n])))
                vel[i, n] = v[j]
    return vel


def eigenvalue_crosscheck(fiber: PlaneWaveFiber, k: float) -> float:
    """Max |eig H(k) - eig of the pencil D(k) u = lam B u| (brute force)."""
    D, B = fiber.generalized_pencil(k)
    ref = np.sort(sla.eigh(D, B, eigvals_only=True))
    return float(np.max(np.abs(np.sort(np.linalg.eigvalsh(fiber.hamiltonian(k))) - ref)))


# ---------------------------------------------------------------------------
# discrete Bloch transform on a grid


class GridBlochBasis:
    """Eigenbases of the grid fiber at every discrete k_j of a grid.

    Modes are ordered by eigenvalue at each k_j.  Eigenvectors ``vectors[j]``
    are cell samples (shape (2 n_points, n_modes), E block then H block)
    normalized in the weighted cell product ``h sum v^* w^{-1} v``.
    """

    def __init__(self, medium: Medium, grid: Grid, threads: int = 1):
        self.fiber = GridFiber(medium, grid)
        self.medium = medium
        self.grid = grid
        f = self.fiber
        eigs = _parallel_map(f.eig, f.kvals, threads)
        self.energies = np.array([e[0] for e in eigs])
        self.velocities = np.array([e[2] for e in eigs])
        self._reduced = np.array([e[1] for e in eigs])  # y vectors
        self.kvals = f.kvals

    @property
    def n_modes(self) -> int:
        return self.fiber.dim

    def vectors(self, j: int) -> np.ndarray:
        return self.fiber.S @ self._reduced[j] / np.sqrt(self.grid.h)

    def mode_index(self, j: int, lam: float, sign: int = 0) -> int:
        """Grid mode at k_j matching a band value ``lam`` (ties broken by slope sign)."""
        e = self.energies[j]
        order = np.argsort(np.abs(e - lam), kind="stable")
        if sign:
            gap = np.abs(e[order[1]] - e[order[0]]) if len(order) > 1 else np.inf
            if gap < 1e-6 and np.sign(self.velocities[j, order[0]]) != sign:
                return int(order[1])
        return int(order[0])

    # transforms ------------------------------------------------------

    def _phases(self):
        x0 = self.fiber.points
        return np.exp(-1j * np.outer(self.kvals, x0))  # (n_cells, n_points)

    def periodic_parts(self, values: np.ndarray) -> np.ndarray:
        """Bloch transform: (n_cells, n_points, 2) periodic parts at each k_j."""
        f = self.fiber
        v = values.reshape(f.n_cells, f.n_points, 2)
        vt = np.fft.fft(v, axis=0, norm="ortho")
        return vt * self._phases()[:, :, None]

    def from_periodic_parts(self, parts: np.ndarray) -> np.ndarray:
        f = self.fiber
        vt = parts * self._phases().conj()[:, :, None]
        return np.fft.ifft(vt, axis=0, norm="ortho").reshape(f.n_cells * f.n_points, 2)

    def analyze(self, values: np.ndarray) -> np.ndarray:
        f = self.fiber
        parts = self.periodic_parts(values)
        # S^{-1} pointwise, stacked as (E block, H block)
        z = np.linalg.solve(f.S_point[None], parts[..., None])[..., 0]
        zs = np.concatenate([z[:, :, 0], z[:, :, 1]], axis=1)
        return np.sqrt(self.grid.h) * np.einsum("jmn,jm->jn", self._reduced.conj(), zs)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        f = self.fiber
        zs = np.einsum("jmn,jn->jm", self._reduced, coeffs) / np.sqrt(self.grid.h)
        z = np.stack([zs[:, :f.n_points], zs[:, f.n_points:]], axis=-1)
        parts = np.einsum("iab,jib->jia", f.S_point, z)
        return self.from_periodic_parts(parts)


@dataclasses.dataclass(frozen=True, eq=False)
class BlochExpansion:
    """Coefficients ``c[j, m]`` on grid mode ``m`` at quasi-momentum ``k_j``."""

    coeffs: np.ndarray
    basis: GridBlochBasis

    @property
    def kvals(self) -> np.ndarray:
        return self.basis.kvals

    @property
    def energies(self) -> np.ndarray:
        return self.basis.energies

    @property
    def medium(self) -> Medium:
        return self.basis.medium

    def weights(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def total(self) -> float:
        return float(self.weights().sum())

    def mass_where(self, mask: np.ndarray) -> float:
        return float(self.weights()[mask].sum())

    def band_mask(self, bs: BandStructure, n: int) -> np.ndarray:
        """Grid modes identified with analytic band ``n`` of ``bs`` at every k_j."""
        mask = np.zeros(self.coeffs.shape, bool)
        for j, k in enumerate(self.kvals):
            lam, vel, _ = bs.track(n, k)
            mask[j, self.basis.mode_index(j, lam, int(np.sign(vel)))] = True
        return mask

    def evolve(self, t: float) -> "BlochExpansion":
        return BlochExpansion(self.coeffs * np.exp(-1j * self.energies * t), self.basis)


def _basis_for(medium: Medium, grid: Grid, basis: Optional[GridBlochBasis]) -> GridBlochBasis:
    if basis is None:
        return GridBlochBasis(medium, grid)
    if basis.medium is not medium or basis.grid != grid:
        raise IncommensurateDomain("Bloch basis was built for a different medium or grid")
    return basis


def bloch_analyze(state: StateVector, medium: Medium, basis: Optional[GridBlochBasis] = None) -> BlochExpansion:
    """Discrete Bloch transform followed by projection on fiber eigenvectors.

    The projection uses the medium's weighted cell product regardless of the
    state's own context (callers analyzing windowed states rely on this).
    """
    grid = state.grid
    grid.cells(medium.period)  # raises IncommensurateDomain
    basis = _basis_for(medium, grid, basis)
    return BlochExpansion(basis.analyze(state.values), basis)


def bloch_synthesize(expansion: BlochExpansion, context: Optional[WeightContext] = None) -> StateVector:
    basis = expansion.basis
    if context is None:
        context = WeightContext.of(basis.grid, basis.medium)
    elif context.grid != basis.grid:
        raise IncommensurateDomain("synthesis grid differs from the expansion grid")
    return StateVector(basis.synthesize(expansion.coeffs), context)
