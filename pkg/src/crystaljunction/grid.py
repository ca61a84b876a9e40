"""Periodic real-space grids, weight contexts and states in weighted spaces."""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .errors import ContextMismatch, IncommensurateDomain
from .media import JunctionSystem, Medium, invert_hermitian_2x2

_COMMENSURATE_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class Grid:
    """Uniform periodic grid ``x_i = -L + i h`` on ``[-L, L)``."""

    half_length: float
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two, got {n}")
        if self.half_length <= 0:
            raise ValueError("half_length must be positive")

    @classmethod
    def for_period(cls, period: float, cells: int, points_per_cell: int) -> "Grid":
        return cls(0.5 * cells * period, cells * points_per_cell)

    @property
    def length(self) -> float:
        return 2.0 * self.half_length

    @property
    def h(self) -> float:
        return self.length / self.n_points

    @property
    def x(self) -> np.ndarray:
        return -self.half_length + self.h * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular frequencies of the DFT modes, numpy ordering."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.h)

    def cells(self, period: float) -> int:
        r = self.length / period
        if abs(r - round(r)) > _COMMENSURATE_TOL * max(1.0, r) or round(r) < 1:
            raise IncommensurateDomain(f"domain length {self.length:g} is not a multiple of period {period:g}")
        r = int(round(r))
        if self.n_points % r:
            raise IncommensurateDomain(f"{self.n_points} points do not split evenly into {r} cells")
        return r

    def points_per_cell(self, period: float) -> int:
        return self.n_points // self.cells(period)

    def cell_points(self, period: float) -> np.ndarray:
        return self.x[: self.points_per_cell(period)]

    def sample_cell(self, medium: Medium) -> np.ndarray:
        """Weight at the points of one cell: inverse of the constitutive
        matrix averaged over each grid cell [x - h/2, x + h/2]."""
        return medium.cell_weight(self.cell_points(medium.period), self.h)

    def sample_periodic(self, medium: Medium) -> np.ndarray:
        """Cell samples tiled over the domain (exact periodicity)."""
        return np.tile(self.sample_cell(medium), (self.cells(medium.period), 1, 1))

    def sample_junction(self, sys: JunctionSystem) -> np.ndarray:
        x = self.x
        if sys.custom is not None:
            return sys.custom(x)
        return sys.blend(x, self.sample_periodic(sys.left), self.sample_periodic(sys.right))

    def outer_mask(self, fraction: float = 0.05) -> np.ndarray:
        return np.abs(self.x) >= (1.0 - fraction) * self.half_length


@dataclasses.dataclass(frozen=True, eq=False)
class WeightContext:
    """Sampled weight defining the product <a, w^{-1} b> on a grid."""

    grid: Grid
    w: np.ndarray
    label: str = ""

    @classmethod
    def of(cls, grid: Grid, source, label: str = "") -> "WeightContext":
        if isinstance(source, Medium):
            w = grid.sample_periodic(source)
            label = label or f"medium:{source.name or id(source)}"
        elif isinstance(source, JunctionSystem):
            w = grid.sample_junction(source)
            label = label or "junction"
        else:
            w = np.asarray(source, dtype=complex)
        return cls(grid, w, label)

    @property
    def winv(self) -> np.ndarray:
        val = self.__dict__.get("_winv")
        if val is None:
            val = invert_hermitian_2x2(self.w)
            object.__setattr__(self, "_winv", val)
        return val

    def same_as(self, other: "WeightContext") -> bool:
        return self is other or (self.grid == other.grid and np.array_equal(self.w, other.w))


@dataclasses.dataclass(frozen=True, eq=False)
class StateVector:
    """C^2-valued samples (columns phi_E, phi_H) in a weighted space."""

    values: np.ndarray
    context: WeightContext

    def __post_init__(self):
        if self.values.shape != (self.grid.n_points, 2):
            raise ValueError(f"values must have shape ({self.grid.n_points}, 2)")

    @classmethod
    def zeros(cls, context: WeightContext) -> "StateVector":
        return cls(np.zeros((context.grid.n_points, 2), complex), context)

    @property
    def grid(self) -> Grid:
        return self.context.grid

    def with_values(self, values) -> "StateVector":
        return StateVector(np.asarray(values, dtype=complex), self.context)

    def in_context(self, context: WeightContext) -> "StateVector":
        if context.grid != self.grid:
            raise ContextMismatch("grids differ")
        return StateVector(self.values, context)

    def norm(self) -> float:
        return float(np.sqrt(max(weighted_inner(self, self).real, 0.0)))

    def density(self) -> np.ndarray:
        """Pointwise weighted energy density phi^* w^{-1} phi."""
        v = self.values
        return np.einsum("ia,iab,ib->i", v.conj(), self.context.winv, v).real

    def mass(self, mask) -> float:
        return float(self.grid.h * self.density()[mask].sum())

    def center(self) -> float:
        rho = self.density()
        return float((self.grid.x * rho).sum() / rho.sum())

    def __add__(self, other):
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def snapshot(self) -> dict:
        v = self.values
        return {
            "x": self.grid.x.tolist(),
            "phiE_re": v[:, 0].real.tolist(),
            "phiE_im": v[:, 0].imag.tolist(),
            "phiH_re": v[:, 1].real.tolist(),
            "phiH_im": v[:, 1].imag.tolist(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    def write_csv(self, path) -> None:
        v = self.values
        data = np.column_stack([self.grid.x, v[:, 0].real, v[:, 0].imag, v[:, 1].real, v[:, 1].imag])
        np.savetxt(path, data, delimiter=",", fmt="%.15g",
                   header="x,phiE_re,phiE_im,phiH_re,phiH_im", comments="")


def _check_same(a: StateVector, b: StateVector) -> None:
    if not a.context.same_as(b.context):
        raise ContextMismatch(f"states live in different spaces ({a.context.label!r} vs {b.context.label!r})")


def weighted_inner(a: StateVector, b: StateVector) -> complex:
    """h * sum_i <a_i, w_i^{-1} b_i>, conjugate-linear in ``a``."""
    _check_same(a, b)
    m = a.context.winv
    ar, ai = a.values.real, a.values.imag
    br, bi = b.values.real, b.values.imag

    def prod(i, j):
        # conj(a_i) b_j in real arithmetic; swapping a and b conjugates it exactly
        return ar[:, i] * br[:, j] + ai[:, i] * bi[:, j], ar[:, i] * bi[:, j] - ai[:, i] * br[:, j]

    (d0r, d0i), (d1r, d1i) = prod(0, 0), prod(1, 1)
    (pr, pi), (qr, qi) = prod(0, 1), prod(1, 0)
    e, mu = m[:, 0, 0].real, m[:, 1, 1].real
    cr, ci = m[:, 0, 1].real, m[:, 0, 1].imag
    re = e * d0r + mu * d1r + (cr * (pr + qr) - ci * (pi - qi))
    im = e * d0i + mu * d1i + (cr * (pi + qi) + ci * (pr - qr))
    h = a.grid.h
    return complex(h * np.sum(re), h * np.sum(im))
