"""Brownian-sheet sampling and diagnostics.

A Brownian sheet assigns an independent Normal(0, |A|) value to every
rectangle ``A`` of a disjoint family. The solvers only ever need the
per-bin normalized increment ``sqrt(dt) * eta``; the full lattice surface is
built here for diagnostics and plotting.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UsageError
from .rng import STREAM_SHEET, path_generator


@dataclass
class SheetSampler:
    """Seeded source of sheet increments.

    ``widths`` are the lattice spacings per axis, used by ``cell_area``.
    Children from :meth:`spawn` are independent and keyed by index.
    """

    rng_seed: int
    dimension: int = 2
    widths: tuple = (1.0, 1.0)
    _path: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise UsageError("dimension must be >= 1")
        self.widths = tuple(float(w) for w in self.widths)
        if len(self.widths) != self.dimension or any(w <= 0 for w in self.widths):
            raise UsageError(f"need {self.dimension} positive widths, got {self.widths}")
        self._gen = path_generator(int(self.rng_seed), self._path, STREAM_SHEET)

    @property
    def cell_area(self) -> float:
        return float(np.prod(self.widths))

    def spawn(self, index: int) -> "SheetSampler":
        return SheetSampler(self.rng_seed, self.dimension, self.widths, _path=int(index) + 1)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def rectangle_increment(self, area: float, size=None):
        """W(A) = sqrt(|A|) eta."""
        if not area > 0:
            raise UsageError(f"rectangle area must be positive, got {area}")
        return np.sqrt(area) * self.normal(size)

    def wiener_increment(self, bin_measure: float, dt: float, size=None):
        """Normalized per-bin increment sqrt(dt) eta.

        The bin measure only enters through the rate it multiplies, so it
        is validated but does not scale the draw.
        """
        if not bin_measure > 0 or not dt > 0:
            raise UsageError(f"bin_measure and dt must be positive, got {bin_measure}, {dt}")
        return np.sqrt(dt) * self.normal(size)

    def wiener_product_increment(self, area: float, size=None):
        """Product W1(dx) W2(dt) of two independent Wiener increments with dx*dt = area.

        Its second moment matches W(A) but its fourth moment is 9|A|^2.
        """
        if not area > 0:
            raise UsageError(f"rectangle area must be positive, got {area}")
        a = self.normal(size)
        b = self.normal(size)
        return np.sqrt(area) * a * b


@dataclass
class SheetSurface:
    """Cumulative sheet values ``w[i, j] = W(x[i], t[j])`` on a lattice."""

    x: np.ndarray
    t: np.ndarray
    w: np.ndarray

    def rectangle(self, ia: int, ib: int, jc: int, jd: int) -> float:
        """Increment over [x[ia], x[ib]] x [t[jc], t[jd]]."""
        w = self.w
        return w[ib, jd] - w[ib, jc] - w[ia, jd] + w[ia, jc]

    def rows(self):
        for i, xi in enumerate(self.x):
            for j, tj in enumerate(self.t):
                yield xi, tj, self.w[i, j]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["x", "t", "w"])
            for row in self.rows():
                out.writerow([f"{v:.17g}" for v in row])
        return path


def sample_surface(sampler: SheetSampler, nx: int, nt: int, extent_x: float, extent_t: float) -> SheetSurface:
    """Cumulative double sum of independent Normal(0, cell area) draws."""
    if nx < 1 or nt < 1:
        raise UsageError("nx and nt must be >= 1")
    dx, dt = extent_x / nx, extent_t / nt
    cells = sampler.rectangle_increment(dx * dt, size=(nx, nt))
    w = np.zeros((nx + 1, nt + 1))
    w[1:, 1:] = cells.cumsum(axis=0).cumsum(axis=1)
    return SheetSurface(np.linspace(0.0, extent_x, nx + 1), np.linspace(0.0, extent_t, nt + 1), w)


def moment_ratios(samples: np.ndarray, area: float, kurtosis: float = 3.0) -> tuple:
    """Return (E[W^2]/|A|, E[W^4]/(kurtosis |A|^2)) from raw samples."""
    s = np.asarray(samples, dtype=float)
    return float(np.mean(s**2) / area), float(np.mean(s**4) / (kurtosis * area**2))
