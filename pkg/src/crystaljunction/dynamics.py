"""Real-space Hamiltonians on a periodic grid and their time evolution.

``M_h = W_h D_h`` uses the discrete Fourier derivative, which is exactly
Hermitian, so ``M_h`` is symmetric in the weighted product
``h sum phi^* w^{-1} psi``.  Crank-Nicolson (the Cayley transform of
``M_h``) is then exactly unitary in that product; the linear systems are
solved by GMRES preconditioned with a constant-weight operator that is
diagonal in Fourier space.

The domain is a circle: a junction scene has a second, artificial junction
at the wrap point.  Runs are guarded by a boundary-mass alarm on the outer
5 % of the domain.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.fft as sfft

from .bloch import BandStructure, BlochExpansion, GridBlochBasis, bloch_analyze, fold_k
from .errors import BoundaryContamination, ContextMismatch, SolverDivergence, WindowViolation
from .grid import Grid, StateVector, WeightContext, weighted_inner
from .media import Medium

log = logging.getLogger(__name__)


class DiscreteOperator:
    """``M_h = W_h D_h`` on a grid; ``kind`` is "full", "medium" or "custom"."""

    def __init__(self, context: WeightContext, kind: str = "full"):
        self.context = context
        self.grid = context.grid
        self.kind = kind
        self.kappa = self.grid.wavenumbers

    @property
    def w(self) -> np.ndarray:
        return self.context.w

    def derivative(self, values: np.ndarray) -> np.ndarray:
        """``D_h`` applied to (N, 2) samples."""
        f = sfft.fft(values, axis=0)
        f *= self.kappa[:, None]
        return sfft.ifft(f, axis=0)[:, ::-1]

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        return _pointwise(self.w, self.derivative(values))

    def apply(self, state: StateVector) -> StateVector:
        if not state.context.same_as(self.context):
            raise ContextMismatch("operator and state live in different weighted spaces")
        return state.with_values(self.apply_values(state.values))

    def __call__(self, state: StateVector) -> StateVector:
        return self.apply(state)

    def max_abs_eigenvalue(self) -> float:
        """Upper bound c1 * max|kappa| for the resolved spectrum."""
        c1 = float(np.linalg.eigvalsh(self.w).max())
        return c1 * float(np.abs(self.kappa).max())

    def symmetric_matrix(self):
        """Dense ``(H, S)`` with ``H = S^H D_h S`` Hermitian and ``psi = S y``.

        Unknowns are ordered (E_0..E_{N-1}, H_0..H_{N-1}).
        """
        n = self.grid.n_points
        P = sla.circulant(sfft.ifft(self.kappa))
        Sp = np.linalg.cholesky(self.w)
        S = np.zeros((2 * n, 2 * n), complex)
        H = np.zeros((2 * n, 2 * n), complex)
        for a in range(2):
            for b in range(2):
                S[a * n:(a + 1) * n, b * n:(b + 1) * n] = np.diag(Sp[:, a, b])
                # (S^H D S)_ab = S_0a^* P S_1b + S_1a^* P S_0b with diagonal blocks
                H[a * n:(a + 1) * n, b * n:(b + 1) * n] = (
                    Sp[:, 0, a].conj()[:, None] * P * Sp[:, 1, b][None, :]
                    + Sp[:, 1, a].conj()[:, None] * P * Sp[:, 0, b][None, :]
                )
        return 0.5 * (H + H.conj().T), S


def discretize(source, grid: Grid) -> DiscreteOperator:
    """Discrete Hamiltonian for a Medium, a JunctionSystem or a weight context."""
    if isinstance(source, WeightContext):
        return DiscreteOperator(source, "custom")
    kind = "medium" if isinstance(source, Medium) else "full"
    return DiscreteOperator(WeightContext.of(grid, source), kind)


def expectation(op: DiscreteOperator, state: StateVector) -> float:
    """``<psi, M psi>_w / <psi, psi>_w``."""
    return float(weighted_inner(state, op.apply(state)).real / weighted_inner(state, state).real)


@dataclasses.dataclass
class PropagatorConfig:
    dt: Optional[float] = None
    tol: float = 1e-12
    max_steps: int = 10 ** 7
    boundary_alarm: float = 1e-4
    check_every: int = 50
    restart: int = 40

    def step_for(self, op: DiscreteOperator) -> float:
        return self.dt if self.dt is not None else 0.05 / op.max_abs_eigenvalue()


def _pointwise(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply per-point 2x2 matrices m (N, 2, 2) to x (N, 2)."""
    out = np.empty_like(x)
    out[:, 0] = m[:, 0, 0] * x[:, 0] + m[:, 0, 1] * x[:, 1]
    out[:, 1] = m[:, 1, 0] * x[:, 0] + m[:, 1, 1] * x[:, 1]
    return out


def pgmres(matvec, precond, b: np.ndarray, x0: np.ndarray, rtol: float, restart: int = 40,
           max_restarts: int = 20):
    """Right-preconditioned GMRES(restart) on arrays of any shape.

    Returns (x, iterations).  Classical Gram-Schmidt with one conditional
    reorthogonalization pass; residuals tracked by Givens rotations.
    """
    shape = b.shape
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    target = rtol * bnorm
    x = x0.copy()
    its = 0
    for _ in range(max_restarts):
        r = (b - matvec(x)).ravel()
        beta = np.linalg.norm(r)
        if beta <= target:
            return x, its
        V = np.empty((restart + 1, r.size), complex)
        Z = np.empty((restart, r.size), complex)
        R = np.zeros((restart + 1, restart), complex)
        cs = np.zeros(restart)
        sn = np.zeros(restart, complex)
        g = np.zeros(restart + 1, complex)
        g[0] = beta
        V[0] = r / beta
        m = 0
        for k in range(restart):
            its += 1
            m = k + 1
            Z[k] = precond(V[k].reshape(shape)).ravel()
            w = matvec(Z[k].reshape(shape)).ravel()
            w0 = np.linalg.norm(w)
            h = (V[:m] @ w.conj()).conj()
            w -= h @ V[:m]
            hn = np.linalg.norm(w)
            if hn < 0.7 * w0:
                h2 = (V[:m] @ w.conj()).conj()
                w -= h2 @ V[:m]
                h += h2
                hn = np.linalg.norm(w)
            col = np.empty(m + 1, complex)
            col[:m] = h
            col[m] = hn
            for i in range(k):
                a, c = col[i], col[i + 1]
                col[i] = cs[i] * a + sn[i] * c
                col[i + 1] = -np.conj(sn[i]) * a + cs[i] * c
            a, c = col[k], col[k + 1]
            t = np.hypot(abs(a), abs(c))
            if a == 0:
                cs[k], sn[k] = 0.0, 1.0
            else:
                cs[k], sn[k] = abs(a) / t, (a / abs(a)) * np.conj(c) / t
            col[k] = cs[k] * a + sn[k] * c
            col[k + 1] = 0.0
            R[: m + 1, k] = col
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            if abs(g[k + 1]) <= 0.5 * target or hn == 0.0:
                break
            V[k + 1] = w / hn
        y = sla.solve_triangular(R[:m, :m], g[:m])
        x = x + (y @ Z[:m]).reshape(shape)
    r = b - matvec(x)
    if np.linalg.norm(r) <= target:
        return x, its
    raise SolverDivergence(f"GMRES stalled at relative residual {np.linalg.norm(r) / bnorm:.3e} (target {rtol:g})")


class CrankNicolson:
    """Cayley-transform stepper ``(1 + i dt/2 M) psi+ = (1 - i dt/2 M) psi``.

    The system is multiplied through by ``W^{-1}``; the preconditioner
    replaces ``W^{-1}`` by its grid average, which is diagonal in Fourier
    space.
    """

    def __init__(self, op: DiscreteOperator, dt: float, tol: float = 1e-12, restart: int = 40):
        self.op = op
        self.dt = float(dt)
        self.tol = tol
        self.restart = restart
        self.winv = op.context.winv
        self._tau = 0.5 * self.dt
        wbar = self.winv.mean(axis=0)
        kap = op.kappa
        blocks = np.empty((len(kap), 2, 2), complex)
        blocks[:, 0, 0] = wbar[0, 0]
        blocks[:, 1, 1] = wbar[1, 1]
        blocks[:, 0, 1] = wbar[0, 1] + 1j * self._tau * kap
        blocks[:, 1, 0] = wbar[1, 0] + 1j * self._tau * kap
        self._pinv = np.linalg.inv(blocks)
        self.iterations = 0

    def _matvec(self, x):
        return _pointwise(self.winv, x) + 1j * self._tau * self.op.derivative(x)

    def _precond(self, x):
        f = sfft.fft(x, axis=0)
        return sfft.ifft(_pointwise(self._pinv, f), axis=0)

    def step(self, values: np.ndarray, guess: Optional[np.ndarray] = None) -> np.ndarray:
        rhs = _pointwise(self.winv, values) - 1j * self._tau * self.op.derivative(values)
        x0 = values if guess is None else guess
        x, its = pgmres(self._matvec, self._precond, rhs, x0, self.tol, self.restart)
        self.iterations += its
        return x


def boundary_fraction(state: StateVector, fraction: float = 0.05) -> float:
    total = state.mass(np.ones(state.grid.n_points, bool))
    if total == 0:
        return 0.0
    return state.mass(state.grid.outer_mask(fraction)) / total


def check_boundary(state: StateVector, alarm: float, what: str = "state") -> None:
    frac = boundary_fraction(state)
    if frac > alarm:
        raise BoundaryContamination(f"{what}: {frac:.3e} of the weighted mass reached the outer 5% of the domain")


def propagate_full(state: StateVector, op: DiscreteOperator, t: float,
                   cfg: Optional[PropagatorConfig] = None, callback=None) -> StateVector:
    """``e^{-itM_h} psi`` by Crank-Nicolson; ``t`` may be negative.

    ``callback(step, time, values)`` is invoked after every step.
    """
    cfg = cfg or PropagatorConfig()
    if not state.context.same_as(op.context):
        raise ContextMismatch("state is not in the operator's weighted space")
    if t == 0 or not np.any(state.values):
        return state.with_values(state.values.copy())
    dt0 = cfg.step_for(op)
    nsteps = max(1, int(np.ceil(abs(t) / dt0 - 1e-9)))
    if nsteps > cfg.max_steps:
        raise SolverDivergence(f"{nsteps} steps exceed max_steps={cfg.max_steps}")
    dt = t / nsteps
    # wave speed is at most the largest eigenvalue of w; check often enough to see any crossing
    c1 = float(np.linalg.eigvalsh(op.context.w).max())
    every = max(1, min(cfg.check_every, int(0.05 * op.context.grid.half_length / (c1 * abs(dt)))))
    stepper = CrankNicolson(op, dt, cfg.tol, cfg.restart)
    v = state.values.copy()
    prev = None
    for n in range(1, nsteps + 1):
        new = stepper.step(v, None if prev is None else 2 * v - prev)
        prev, v = v, new
        if callback is not None:
            callback(n, n * dt, v)
        if n % every == 0 or n == nsteps:
            check_boundary(state.with_values(v), cfg.boundary_alarm, f"t={n * dt:.4g}")
    log.debug("CN: %d steps, %.1f GMRES iterations/step", nsteps, stepper.iterations / nsteps)
    return state.with_values(v)


def cayley_energy(lam, dt: float):
    """Energy whose exact phase equals one Crank-Nicolson step of size ``dt``."""
    return 2.0 / dt * np.arctan(0.5 * dt * np.asarray(lam))


def propagate_free(state: StateVector, medium: Medium, t: float, basis: Optional[GridBlochBasis] = None,
                   alarm: Optional[float] = None, cayley_dt: Optional[float] = None) -> StateVector:
    """Exact evolution under the periodic grid operator: Bloch phases e^{-i lam t}.

    With ``cayley_dt`` the phases are those of Crank-Nicolson with that step,
    i.e. the free counterpart of ``propagate_full`` at the same step size.
    """
    ex = bloch_analyze(state, medium, basis)
    lam = ex.energies if cayley_dt is None else cayley_energy(ex.energies, cayley_dt)

    def at(s):
        return StateVector(ex.basis.synthesize(ex.coeffs * np.exp(-1j * lam * s)), state.context)

    if alarm is not None:
        # intermediate checks: no occupied mode may cross the outer band unseen
        wts = ex.weights()
        occupied = wts > 1e-14 * max(wts.sum(), 1e-300)
        vmax = float(np.abs(ex.basis.velocities[occupied]).max()) if occupied.any() else 0.0
        band = 0.05 * state.grid.half_length
        n = int(np.ceil(abs(t) * vmax / band)) if vmax > 0 else 1
        for s in np.linspace(0.0, t, max(n, 1) + 1)[1:-1]:
            check_boundary(at(s), alarm, f"free t={s:.4g}")
    out = at(t)
    if alarm is not None:
        check_boundary(out, alarm, f"free t={t:.4g}")
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class Wavepacket:
    state: StateVector
    expansion: BlochExpansion
    band: int
    k0: float
    sigma_k: float
    sign: int
    window: tuple
    leakage: float
    mean_energy: float
    mean_velocity: float


def make_wavepacket(medium: Medium, bs: BandStructure, band: int, k0: float, sigma_k: float, sign: int,
                    window, grid: Grid, basis: Optional[GridBlochBasis] = None, center_cells: int = 0,
                    velocity_tol: float = 1e-6) -> Wavepacket:
    """Gaussian superposition of band ``band`` Bloch modes around ``k0``.

    The Gaussian is truncated to ``|k - k0| < 4 sigma_k``; every mode in the support must
    have energy in ``window`` and group velocity of sign ``sign``.  Mode
    phases follow parallel transport from ``k0`` so the packet is localized
    near cell ``center_cells``.
    """
    a, b = window
    p = medium.period
    basis = basis if basis is not None else GridBlochBasis(medium, grid)
    lam0, vel0, _ = bs.track(band, k0)
    if not (a <= lam0 <= b) or abs(vel0) <= velocity_tol or np.sign(vel0) != sign:
        raise WindowViolation(f"k0={k0:.6g}: lambda={lam0:.6g}, slope={vel0:.3g} violate window/sign")
    offsets = fold_k(basis.kvals - k0, p)
    # open truncation ball: a lattice point exactly on the radius is dropped
    support = np.flatnonzero(np.abs(offsets) < 4 * sigma_k * (1 - 1e-9))
    if support.size == 0:
        raise WindowViolation("no discrete quasi-momentum within 4 sigma_k of k0; refine the domain")
    coeffs = np.zeros((len(basis.kvals), basis.n_modes), complex)
    order = support[np.argsort(np.abs(offsets[support]), kind="stable")]
    chosen = {}
    for j in order:
        lam, vel, _ = bs.track(band, k0 + offsets[j])
        if not (a <= lam <= b) or abs(vel) <= velocity_tol or np.sign(vel) != sign:
            raise WindowViolation(
                f"support point k={k0 + offsets[j]:.6g} has lambda={lam:.6g}, slope={vel:.3g}: "
                f"crosses a threshold or leaves [{a:g}, {b:g}]"
            )
        chosen[j] = basis.mode_index(j, lam, sign)
    # parallel transport of phases outward from k0
    red = basis._reduced
    ref = {}
    for j in order:
        m = chosen[j]
        y = red[j][:, m]
        if ref:
            jn = min(ref, key=lambda i: abs(offsets[i] - offsets[j]))
            ov = np.vdot(ref[jn], y)
            y = y * np.exp(-1j * np.angle(ov))
        ref[j] = y
        coeffs[j, m] = np.exp(-offsets[j] ** 2 / (2 * sigma_k ** 2)) * np.exp(-1j * basis.kvals[j] * center_cells * p)
        coeffs[j, m] *= np.vdot(red[j][:, m], y)  # phase relative to the stored eigenvector
    coeffs /= np.linalg.norm(coeffs)
    ex = BlochExpansion(coeffs, basis)
    state = StateVector(basis.synthesize(coeffs), WeightContext.of(grid, medium))
    wts = ex.weights()
    outside = (basis.energies < a) | (basis.energies > b)
    return Wavepacket(
        state=state, expansion=ex, band=band, k0=float(k0), sigma_k=float(sigma_k), sign=int(sign),
        window=(float(a), float(b)), leakage=float(wts[outside].sum()),
        mean_energy=float((wts * basis.energies).sum()), mean_velocity=float((wts * basis.velocities).sum()),
    )
