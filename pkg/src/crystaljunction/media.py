"""Constitutive profiles, Maxwell weights, periodic media and junctions.

A medium is described by scalar permittivity ``eps``, permeability ``mu`` and
bi-anisotropic coupling ``chi``.  The Maxwell weight is the pointwise inverse
of the constitutive matrix ``[[eps, chi], [conj(chi), mu]]``; the Hamiltonian
is ``M = w D`` with ``D = [[0, P], [P, 0]]`` and ``P = -i d/dx``.

Periodic profiles live on the centred cell ``[-p/2, p/2]``; layered profiles
stack their layers left to right from ``-p/2`` and use left-closed intervals.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AssumptionViolated, NonPositiveDefinite, OutOfDomain

_EDGE_SNAP = 1e-12


def smoothstep(u):
    """C^2 monotone switch on [0, 1], clamped outside."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def japanese(x):
    """<x> = sqrt(1 + x^2)."""
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclasses.dataclass(frozen=True)
class Layer:
    d: float
    eps: float = 1.0
    mu: float = 1.0
    chi: complex = 0j


@dataclasses.dataclass(frozen=True, eq=False)
class ConstitutiveProfile:
    """Periodic (eps, mu, chi) on one cell.

    Exactly one representation is populated: ``layers`` (piecewise constant),
    or Fourier coefficients ``eps_hat``/``mu_hat``/``chi_hat`` indexed
    ``m = -M..M``.  Uniform samples are converted to Fourier coefficients by
    trigonometric interpolation, so ``kind == "samples"`` evaluates smoothly
    between the samples.
    """

    period: float
    kind: str
    layers: tuple = ()
    eps_hat: Optional[np.ndarray] = None
    mu_hat: Optional[np.ndarray] = None
    chi_hat: Optional[np.ndarray] = None

    @classmethod
    def from_layers(cls, layers: Sequence[Layer]) -> "ConstitutiveProfile":
        layers = tuple(Layer(float(l.d), float(l.eps), float(l.mu), complex(l.chi)) for l in layers)
        if not layers:
            raise ValueError("at least one layer required")
        if any(l.d <= 0 for l in layers):
            raise ValueError("layer thicknesses must be positive")
        prof = cls(period=float(sum(l.d for l in layers)), kind="layers", layers=layers)
        prof.check()
        return prof

    @classmethod
    def homogeneous(cls, eps=1.0, mu=1.0, chi=0j, period=1.0) -> "ConstitutiveProfile":
        return cls.from_layers([Layer(period, eps, mu, chi)])

    @classmethod
    def from_fourier(cls, period, eps_hat, mu_hat, chi_hat=None) -> "ConstitutiveProfile":
        eps_hat = np.asarray(eps_hat, dtype=complex)
        mu_hat = np.asarray(mu_hat, dtype=complex)
        chi_hat = np.zeros_like(eps_hat) if chi_hat is None else np.asarray(chi_hat, dtype=complex)
        size = max(len(eps_hat), len(mu_hat), len(chi_hat))
        if size % 2 == 0:
            raise ValueError("Fourier tables must have odd length (m = -M..M)")
        eps_hat, mu_hat, chi_hat = (_pad_centered(c, size) for c in (eps_hat, mu_hat, chi_hat))
        for name, c in (("eps", eps_hat), ("mu", mu_hat)):
            if not np.allclose(c, np.conj(c[::-1]), atol=1e-13):
                raise ValueError(f"{name} Fourier table does not describe a real function")
        prof = cls(period=float(period), kind="fourier", eps_hat=eps_hat, mu_hat=mu_hat, chi_hat=chi_hat)
        prof.check()
        return prof

    @classmethod
    def from_samples(cls, period, eps, mu, chi=None) -> "ConstitutiveProfile":
        eps = np.asarray(eps, dtype=float)
        mu = np.asarray(mu, dtype=float)
        chi = np.zeros(len(eps), complex) if chi is None else np.asarray(chi, dtype=complex)
        n = len(eps)
        if len(mu) != n or len(chi) != n or n < 1:
            raise ValueError("sample arrays must share one positive length")
        tables = [_samples_to_fourier(s) for s in (eps.astype(complex), mu.astype(complex), chi)]
        tables[0] = 0.5 * (tables[0] + np.conj(tables[0][::-1]))
        tables[1] = 0.5 * (tables[1] + np.conj(tables[1][::-1]))
        prof = cls(period=float(period), kind="samples", eps_hat=tables[0], mu_hat=tables[1], chi_hat=tables[2])
        prof.check()
        return prof

    # -- evaluation -----------------------------------------------------

    @property
    def edges(self) -> np.ndarray:
        """Layer boundaries in the centred cell (layers only)."""
        if self.kind != "layers":
            return np.array([-self.period / 2, self.period / 2])
        return -self.period / 2 + np.concatenate([[0.0], np.cumsum([l.d for l in self.layers])])

    def reduce(self, x) -> np.ndarray:
        p = self.period
        return np.mod(np.asarray(x, dtype=float) + p / 2, p) - p / 2

    def layer_index(self, x) -> np.ndarray:
        theta = self.reduce(x)
        edges = self.edges
        idx = np.searchsorted(edges, theta + _EDGE_SNAP * self.period, side="right") - 1
        return np.clip(idx, 0, len(self.layers) - 1)

    def evaluate(self, x):
        """Return (eps, mu, chi) arrays at the points ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "layers":
            idx = self.layer_index(x)
            eps = np.array([l.eps for l in self.layers])[idx]
            mu = np.array([l.mu for l in self.layers])[idx]
            chi = np.array([l.chi for l in self.layers], dtype=complex)[idx]
            return eps, mu, chi
        M = (len(self.eps_hat) - 1) // 2
        phase = np.exp(2j * np.pi * np.outer(self.reduce(x), np.arange(-M, M + 1)) / self.period)
        return (phase @ self.eps_hat).real, (phase @ self.mu_hat).real, phase @ self.chi_hat

    def constitutive(self, x) -> np.ndarray:
        """The matrix ``[[eps, chi], [conj(chi), mu]]`` (= w^{-1}) at ``x``."""
        eps, mu, chi = self.evaluate(x)
        out = np.empty((len(eps), 2, 2), complex)
        out[:, 0, 0] = eps
        out[:, 0, 1] = chi
        out[:, 1, 0] = np.conj(chi)
        out[:, 1, 1] = mu
        return out

    def cell_average(self, x, h: float):
        """(eps, mu, chi) averaged over ``[x - h/2, x + h/2]``, exactly."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = self.period
        if self.kind == "layers":
            vals = [np.array([getattr(l, f) for l in self.layers], dtype=complex) for f in ("eps", "mu", "chi")]
            edges = self.edges
            out = []
            for v in vals:
                cum = np.concatenate([[0.0], np.cumsum(v * np.diff(edges))])

                def prim(t):
                    n = np.floor((t + p / 2) / p)
                    r = t - n * p
                    return n * cum[-1] + np.interp(r, edges, cum.real) + 1j * np.interp(r, edges, cum.imag)

                out.append((prim(x + h / 2) - prim(x - h / 2)) / h)
            return out[0].real, out[1].real, out[2]
        M = (len(self.eps_hat) - 1) // 2
        m = np.arange(-M, M + 1)
        damp = np.sinc(m * h / p)
        phase = np.exp(2j * np.pi * np.outer(self.reduce(x), m) / p) * damp
        return (phase @ self.eps_hat).real, (phase @ self.mu_hat).real, phase @ self.chi_hat

    def check_points(self) -> np.ndarray:
        if self.kind == "layers":
            return 0.5 * (self.edges[:-1] + self.edges[1:])
        n = max(4096, 16 * len(self.eps_hat))
        return -self.period / 2 + self.period * np.arange(n) / n

    def check(self) -> None:
        xs = self.check_points()
        eps, mu, chi = self.evaluate(xs)
        det = eps * mu - np.abs(chi) ** 2
        bad = np.flatnonzero((eps <= 0) | (mu <= 0) | (det <= 0))
        if bad.size:
            i = int(bad[0])
            where = f"layer {i}" if self.kind == "layers" else f"x={xs[i]:.6g}"
            raise NonPositiveDefinite(
                f"constitutive matrix not positive definite at {where} "
                f"(eps={eps[i]:.6g}, mu={mu[i]:.6g}, eps*mu-|chi|^2={det[i]:.6g})"
            )


def _pad_centered(c, size):
    if len(c) == size:
        return c
    out = np.zeros(size, complex)
    off = (size - len(c)) // 2
    out[off:off + len(c)] = c
    return out


def _samples_to_fourier(s):
    # samples at theta_j = -p/2 + j p / n; returns coefficients m = -M..M
    n = len(s)
    c = np.fft.fft(s) / n
    M = (n - 1) // 2
    ms = np.arange(-M, M + 1)
    # shift the reference point from theta=0 to theta=-p/2: e^{-2 pi i m (-1/2)}
    return c[ms % n] * np.exp(1j * np.pi * ms)


def invert_hermitian_2x2(a: np.ndarray) -> np.ndarray:
    """Closed-form inverse of a stack of 2x2 Hermitian matrices."""
    det = (a[:, 0, 0] * a[:, 1, 1]).real - np.abs(a[:, 0, 1]) ** 2
    out = np.empty_like(a)
    out[:, 0, 0] = a[:, 1, 1] / det
    out[:, 1, 1] = a[:, 0, 0] / det
    out[:, 0, 1] = -a[:, 0, 1] / det
    out[:, 1, 0] = -a[:, 1, 0] / det
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class WeightField:
    """x -> 2x2 Hermitian weight with spectral bounds ``c0 <= w(x) <= c1``."""

    fn: Callable[[np.ndarray], np.ndarray]
    c0: float
    c1: float
    domain: tuple = (-np.inf, np.inf)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lo, hi = self.domain
        if np.any(x < lo) or np.any(x > hi):
            raise OutOfDomain(f"sample outside [{lo}, {hi}]")
        return self.fn(x)


def spectral_bounds(mats: np.ndarray) -> tuple[float, float]:
    ev = np.linalg.eigvalsh(mats)
    return float(ev.min()), float(ev.max())


def build_weight(profile: ConstitutiveProfile) -> WeightField:
    """Maxwell weight ``w = [[eps, chi], [chi*, mu]]^{-1}`` with tight bounds."""
    profile.check()

    def fn(x):
        return invert_hermitian_2x2(profile.constitutive(x))

    c0, c1 = spectral_bounds(fn(profile.check_points()))
    return WeightField(fn=fn, c0=c0, c1=c1)


def sample_weight(field: WeightField, grid) -> np.ndarray:
    return field(grid)


@dataclasses.dataclass(frozen=True, eq=False)
class Medium:
    """One periodic photonic crystal."""

    profile: ConstitutiveProfile
    name: str = ""

    @classmethod
    def layered(cls, layers, name="") -> "Medium":
        return cls(ConstitutiveProfile.from_layers(layers), name)

    @classmethod
    def homogeneous(cls, eps=1.0, mu=1.0, chi=0j, period=1.0, name="") -> "Medium":
        return cls(ConstitutiveProfile.homogeneous(eps, mu, chi, period), name)

    @property
    def period(self) -> float:
        return self.profile.period

    @property
    def cell(self) -> tuple[float, float]:
        return (-self.period / 2, self.period / 2)

    @property
    def weight(self) -> WeightField:
        w = self.__dict__.get("_weight")
        if w is None:
            w = build_weight(self.profile)
            object.__setattr__(self, "_weight", w)
        return w

    @property
    def is_homogeneous(self) -> bool:
        p = self.profile
        if p.kind == "layers":
            first = p.layers[0]
            return all((l.eps, l.mu, l.chi) == (first.eps, first.mu, first.chi) for l in p.layers)
        coeffs = np.stack([p.eps_hat, p.mu_hat, p.chi_hat])
        return bool(np.all(np.delete(coeffs, len(p.eps_hat) // 2, axis=1) == 0))

    @property
    def is_real(self) -> bool:
        """True for chi == 0 everywhere (isotropic, reciprocal)."""
        p = self.profile
        if p.kind == "layers":
            return all(l.chi == 0 for l in p.layers)
        return bool(np.all(p.chi_hat == 0))

    @property
    def interfaces(self) -> np.ndarray:
        """Cell points where the profile jumps; empty for smooth media."""
        p = self.profile
        if p.kind != "layers" or self.is_homogeneous:
            return np.empty(0)
        return p.edges[:-1].copy()

    def __call__(self, x) -> np.ndarray:
        return self.weight(x)

    def cell_weight(self, x, h: float) -> np.ndarray:
        """``w`` from the constitutive matrix averaged over ``[x - h/2, x + h/2]``."""
        eps, mu, chi = self.profile.cell_average(x, h)
        c = np.empty((len(eps), 2, 2), complex)
        c[:, 0, 0] = eps
        c[:, 0, 1] = chi
        c[:, 1, 0] = np.conj(chi)
        c[:, 1, 1] = mu
        return invert_hermitian_2x2(c)

    def fourier_coeffs(self, M: int, oversample: int = 8) -> np.ndarray:
        """Trapezoid-rule coefficients ``w_hat(m)``, m = -M..M, shape (2M+1, 2, 2)."""
        n = oversample * (2 * M + 1)
        theta = -self.period / 2 + self.period * np.arange(n) / n
        w = self.weight(theta)
        ms = np.arange(-M, M + 1)
        phase = np.exp(-2j * np.pi * np.outer(ms, theta) / self.period) / n
        return np.einsum("mj,jab->mab", phase, w)

    def __repr__(self):
        return f"Medium({self.name or self.profile.kind}, p={self.period:g})"


@dataclasses.dataclass(frozen=True, eq=False)
class JunctionSystem:
    """Two periodic media joined around x = 0.

    ``mode == "compact"``: ``w = (1-s) w_l + s w_r`` with ``s`` switching on
    ``[-X, X]`` (``X == 0`` is a sharp step, left-closed at 0).
    ``mode == "algebraic"``: ``s`` reaches 0/1 with ``<x>^{-1-epsilon}`` tails.
    ``custom`` replaces the interpolated weight outright (validation scenes).
    """

    left: Medium
    right: Medium
    mode: str = "compact"
    transition_halfwidth: float = 1.0
    decay_exponent: float = 1.0
    custom: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def switch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "compact":
            X = self.transition_halfwidth
            if X == 0:
                return (x >= 0).astype(float)
            return smoothstep((x + X) / (2 * X))
        tail = 0.5 * japanese(x) ** (-1.0 - self.decay_exponent)
        return np.where(x < 0, tail, 1.0 - tail)

    def weight(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.custom is not None:
            return self.custom(x)
        return self.blend(x, self.left(x), self.right(x))

    def blend(self, x, w_left, w_right) -> np.ndarray:
        """Combine pre-sampled media weights; lets callers control sampling."""
        s = self.switch(x)[:, None, None]
        out = (1.0 - s) * w_left + s * w_right
        # exact copies where the switch saturates
        out = np.where(s == 0.0, w_left, out)
        return np.where(s == 1.0, w_right, out)

    @property
    def c0(self) -> float:
        return min(self.left.weight.c0, self.right.weight.c0)

    @property
    def c1(self) -> float:
        return max(self.left.weight.c1, self.right.weight.c1)

    @property
    def full_weight(self) -> WeightField:
        return WeightField(fn=self.weight, c0=self.c0, c1=self.c1)


def make_junction(left: Medium, right: Medium, mode: str = "compact", halfwidth: float = 1.0,
                  epsilon: float = 1.0) -> JunctionSystem:
    if mode not in ("compact", "algebraic"):
        raise ValueError(f"unknown junction mode {mode!r}")
    if halfwidth < 0 or epsilon <= 0:
        raise ValueError("halfwidth must be >= 0 and epsilon > 0")
    left.weight, right.weight  # validates both media
    return JunctionSystem(left, right, mode, float(halfwidth), float(epsilon))


def _envelope_slope(r, diff, nbins=12):
    """Least-squares slope of log(max diff per log-bin) against log(r)."""
    keep = diff > 0
    if np.count_nonzero(keep) < 2:
        return None
    lr, ld = np.log(r[keep]), np.log(diff[keep])
    if lr.max() - lr.min() < 1e-12:
        return None
    bins = np.linspace(lr.min(), lr.max(), nbins + 1)
    which = np.clip(np.digitize(lr, bins) - 1, 0, nbins - 1)
    xs, ys = [], []
    for b in range(nbins):
        sel = which == b
        if np.any(sel):
            j = np.argmax(ld[sel])
            xs.append(lr[sel][j])
            ys.append(ld[sel][j])
    if len(xs) < 2:
        return None
    return float(np.polyfit(xs, ys, 1)[0])


def validate_asymptotics(sys: JunctionSystem, xs, tail_start: Optional[float] = None,
                         slope_tol: float = 0.1) -> dict:
    """Smallest constants C with ||w - w_side|| <= C <x>^{-1-eps} on ``xs``.

    Slopes are fitted on the upper envelope of the tail samples
    (|x| >= ``tail_start``, default: beyond the transition region), since for
    periodic media the difference oscillates within each period.
    """
    xs = np.asarray(xs, dtype=float)
    eps = sys.decay_exponent
    if tail_start is None:
        tail_start = max(2.0, 2.0 * sys.transition_halfwidth) if sys.mode == "compact" else 2.0
    w = sys.weight(xs)
    report = {"decay_exponent": eps}
    for side, sel, ref in (("left", xs < 0, sys.left), ("right", xs > 0, sys.right)):
        x = xs[sel]
        diff = np.linalg.norm(w[sel] - ref(x), ord=2, axis=(1, 2)) if x.size else np.empty(0)
        r = japanese(x)
        C = float(np.max(diff * r ** (1 + eps))) if x.size else 0.0
        tail = np.abs(x) >= tail_start
        slope = _envelope_slope(r[tail], diff[tail]) if np.any(tail) else None
        if slope is not None and slope > -(1 + eps) + slope_tol:
            raise AssumptionViolated(
                f"{side} tail decays with fitted slope {slope:.3f}, slower than -(1+eps) = {-(1 + eps):.3f}"
            )
        report[f"C_{side}"] = C
        report[f"slope_{side}"] = slope
    return report
