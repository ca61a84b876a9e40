"""Transfer-matrix reference for layered media without bi-anisotropy.

Inside a homogeneous layer the system ``D phi = lam w^{-1} phi`` reads
``phi_E' = i lam mu phi_H`` and ``phi_H' = i lam eps phi_E``, so one layer of
thickness ``d`` propagates ``(phi_E, phi_H)`` by

    [[cos δ, i sin δ / q], [i q sin δ, cos δ]],   δ = lam n d,
    n = sqrt(eps mu),  q = sqrt(eps / mu).

Bloch waves satisfy ``cos(k p) = tr T(lam) / 2``; the energy flux of a
solution is ``2 Re(conj(phi_E) phi_H)``.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import GapOnEitherSide
from .media import Medium


@dataclasses.dataclass(frozen=True)
class LayerStack:
    thickness: tuple
    eps: tuple
    mu: tuple

    def __post_init__(self):
        if not (len(self.thickness) == len(self.eps) == len(self.mu)) or not self.thickness:
            raise ValueError("layer tables must be non-empty and of equal length")
        if min(self.thickness) <= 0 or min(self.eps) <= 0 or min(self.mu) <= 0:
            raise ValueError("thicknesses, eps and mu must be positive")

    @classmethod
    def of(cls, layers: Sequence) -> "LayerStack":
        """From (d, eps, mu) triples or :class:`~crystaljunction.media.Layer` objects."""
        rows = [(l.d, l.eps, l.mu) if hasattr(l, "d") else tuple(l) for l in layers]
        d, e, m = zip(*rows)
        return cls(tuple(map(float, d)), tuple(map(float, e)), tuple(map(float, m)))

    @classmethod
    def from_medium(cls, medium: Medium) -> "LayerStack":
        prof = medium.profile
        if prof.kind != "layers" or not medium.is_real:
            raise ValueError("the oracle covers layered media with chi = 0 only")
        return cls.of(prof.layers)

    @property
    def period(self) -> float:
        return float(sum(self.thickness))

    @property
    def index(self) -> np.ndarray:
        return np.sqrt(np.multiply(self.eps, self.mu))

    @property
    def impedance(self) -> np.ndarray:
        return np.sqrt(np.divide(self.eps, self.mu))

    def scaled(self, factor: float) -> "LayerStack":
        return LayerStack(tuple(factor * d for d in self.thickness), self.eps, self.mu)


@dataclasses.dataclass(frozen=True)
class Uniform:
    eps: float = 1.0
    mu: float = 1.0

    @property
    def impedance(self) -> float:
        return float(np.sqrt(self.eps / self.mu))


def _layer_matrix(delta, q):
    c, s = np.cos(delta), np.sin(delta)
    return np.array([[c, 1j * s / q], [1j * q * s, c]])


def layer_monodromy(stack: LayerStack, lam: float) -> np.ndarray:
    """One-period transfer matrix; the first (leftmost) layer acts first."""
    T = np.eye(2, dtype=complex)
    for d, n, q in zip(stack.thickness, stack.index, stack.impedance):
        T = _layer_matrix(lam * n * d, q) @ T
    return T


def half_trace(stack: LayerStack, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    out = np.array([0.5 * np.trace(layer_monodromy(stack, l)).real for l in lam.ravel()])
    return out.reshape(lam.shape)


def half_trace_derivative(stack: LayerStack, lam: float) -> float:
    """d/dlam of tr T(lam) / 2 by the product rule."""
    mats, ders = [], []
    for d, n, q in zip(stack.thickness, stack.index, stack.impedance):
        delta = lam * n * d
        mats.append(_layer_matrix(delta, q))
        c, s = np.cos(delta), np.sin(delta)
        ders.append(n * d * np.array([[-s, 1j * c / q], [1j * q * c, -s]]))
    total = np.zeros((2, 2), complex)
    for i in range(len(mats)):
        T = np.eye(2, dtype=complex)
        for j in range(len(mats)):
            T = (ders[j] if j == i else mats[j]) @ T
        total += T
    return 0.5 * np.trace(total).real


def dispersion_oracle(stack: LayerStack, lam: float) -> dict:
    c = float(half_trace(stack, lam))
    if abs(c) <= 1.0:
        return {"type": "band", "k": float(np.arccos(c) / stack.period), "half_trace": c}
    return {"type": "gap", "bloch_factor": float(abs(c) - np.sqrt(c * c - 1.0)), "half_trace": c}


def oracle_velocity(stack: LayerStack, lam: float) -> float:
    """|dlam/dk| on the band through ``lam`` (inside a band)."""
    c = float(half_trace(stack, lam))
    dc = half_trace_derivative(stack, lam)
    return float(stack.period * np.sqrt(max(1.0 - c * c, 0.0)) / abs(dc))


def gap_edges(stack: LayerStack, window, n_samples: int = 20001, xtol: float = 1e-12) -> dict:
    """Roots of |tr T / 2| = 1 in ``window``.

    Returns ``{"edges": [...], "tangencies": [...]}``: genuine band edges
    (sign change of |c| - 1) and points where |c| touches 1 without crossing.
    """
    a, b = map(float, window)
    lam = np.linspace(a, b, n_samples)
    f = np.abs(half_trace(stack, lam)) - 1.0
    g = lambda l: abs(float(half_trace(stack, l))) - 1.0
    edges = []
    for i in np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0):
        edges.append(brentq(g, lam[i], lam[i + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))
    edges += [float(lam[i]) for i in np.flatnonzero(f == 0.0)
              if 0 < i < len(lam) - 1 and np.sign(f[i - 1]) * np.sign(f[i + 1]) < 0]
    tangencies = []
    for i in range(1, len(lam) - 1):
        if f[i] >= f[i - 1] and f[i] >= f[i + 1] and -1e-4 < f[i] <= 0.0:
            res = minimize_scalar(lambda l: -g(l), bounds=(lam[i - 1], lam[i + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            if abs(g(res.x)) < 1e-9:
                tangencies.append(float(res.x))
    return {"edges": sorted(edges), "tangencies": tangencies}


Side = Union[LayerStack, Uniform]


def _modes(side: Side, lam: float):
    """Right- and left-going modes at the interface, unit |flux| when propagating.

    Returns (right_mode, left_mode, propagating, bloch_factor).
    """
    if isinstance(side, Uniform):
        q = side.impedance
        s = np.sqrt(2 * q)
        return np.array([1, q]) / s, np.array([1, -q]) / s, True, 1.0
    T = layer_monodromy(side, lam)
    c = 0.5 * np.trace(T).real
    mu, V = np.linalg.eig(T)
    if abs(c) < 1.0:
        flux = np.array([2 * np.real(np.conj(V[0, i]) * V[1, i]) for i in range(2)])
        V = V / np.sqrt(np.abs(flux))
        r, l = (0, 1) if flux[0] > 0 else (1, 0)
        return V[:, r], V[:, l], True, 1.0
    # evanescent: |mu| < 1 decays to the right over one period
    dec, grow = (0, 1) if abs(mu[0]) < abs(mu[1]) else (1, 0)
    V = V / np.linalg.norm(V, axis=0)
    factor = float(min(abs(mu[0]), abs(mu[1])))
    return V[:, dec], V[:, grow], False, factor


def oracle_scatter(left: Side, right: Side, lam: float) -> dict:
    """Reflection/transmission at a single interface at x = 0.

    Stacks begin (right side) or end (left side) at the interface with a full
    period.  ``R = |r|^2`` and ``T = |t|^2`` use flux-normalized modes.
    """
    inc, refl, prop_left, _ = _modes(left, lam)
    if not prop_left:
        raise GapOnEitherSide(f"lambda={lam:g} lies in a gap of the left side: no incident wave")
    trans, _, prop_right, factor = _modes(right, lam)
    A = np.column_stack([refl, -trans])
    r, t = np.linalg.solve(A, -inc)
    if not prop_right:
        return {"r": complex(r), "t": complex(t), "R": 1.0, "T": 0.0, "propagating": False,
                "bloch_factor": factor}
    R, T = float(abs(r) ** 2), float(abs(t) ** 2)
    if abs(R + T - 1.0) > 1e-10:
        raise ArithmeticError(f"flux not conserved: R + T - 1 = {R + T - 1:.3e}")
    return {"r": complex(r), "t": complex(t), "R": R, "T": T, "propagating": True, "bloch_factor": 1.0}


def dispersion_rows(stack: LayerStack, lambdas) -> list:
    rows = []
    for lam in lambdas:
        d = dispersion_oracle(stack, float(lam))
        val = d["k"] if d["type"] == "band" else d["bloch_factor"]
        rows.append((float(lam), d["type"], val))
    return rows
