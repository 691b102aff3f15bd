"""Mean and variance shifts of a capture-only population under a change in capture rate.

Each energy bin behaves as a pure-death process with time-varying rate
``lambda_k(t) = v sigma_c(E_k, t)``. Writing ``L(E, t)`` for the integrated
rate, the bin moments are

    mean     = n0 exp(-L)
    variance = n0 exp(-2L) * int_0^t lambda(s) exp(L(s)) ds
             = n0 (exp(-L) - exp(-2L))

The quadrature routines evaluate the middle form directly; the last form is
used by the tests as an independent check.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson, quad, simpson, solve_ivp
from scipy.interpolate import RegularGridInterpolator

from .errors import UsageError

RateFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def constant_rate(value: float) -> RateFn:
    def rate(E, t):
        return np.full(np.broadcast(E, t).shape, float(value))
    return rate


def tabulated_rate(E, t, values) -> RateFn:
    """Bilinear interpolation of ``values[i, j]`` at ``(E[i], t[j])``.

    Points outside the table take the nearest edge value.
    """
    E, t = np.asarray(E, float), np.asarray(t, float)
    values = np.asarray(values, float)
    if np.any(values < 0):
        raise UsageError("tabulated capture rates must be non-negative")
    interp = RegularGridInterpolator((E, t), values, bounds_error=False, fill_value=None)

    def rate(Eq, tq):
        Eq, tq = np.broadcast_arrays(np.asarray(Eq, float), np.asarray(tq, float))
        pts = np.stack([np.clip(Eq, E[0], E[-1]), np.clip(tq, t[0], t[-1])], axis=-1)
        return interp(pts)
    return rate


def read_rate_csv(path) -> RateFn:
    """Load an ``E,t,rate`` table laid out on a full rectangular grid."""
    rows = []
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["E", "t", "rate"]:
            raise UsageError(f"{path}: expected header E,t,rate")
        for r in reader:
            rows.append((float(r["E"]), float(r["t"]), float(r["rate"])))
    if not rows:
        raise UsageError(f"{path}: empty rate table")
    data = np.array(rows)
    E = np.unique(data[:, 0])
    t = np.unique(data[:, 1])
    if len(data) != E.size * t.size:
        raise UsageError(f"{path}: rows do not form a full E x t grid")
    values = np.full((E.size, t.size), np.nan)
    values[np.searchsorted(E, data[:, 0]), np.searchsorted(t, data[:, 1])] = data[:, 2]
    if np.isnan(values).any():
        raise UsageError(f"{path}: duplicate (E, t) rows")
    return tabulated_rate(E, t, values)


@dataclass
class CaptureHistory:
    """Capture rates ``v sigma_c(E, t)`` before and after a perturbation.

    ``initial_density`` is N(E, 0) per unit energy on ``[0, E_max]``;
    ``n_bins`` sets the bin width used by :func:`bin_moments`.
    """

    rate: RateFn
    perturbed_rate: RateFn
    initial_density: Callable[[np.ndarray], np.ndarray]
    E_max: float
    n_bins: int = 1

    def __post_init__(self):
        if self.E_max <= 0 or self.n_bins < 1:
            raise UsageError("E_max must be positive and n_bins >= 1")

    @property
    def dE(self) -> float:
        return self.E_max / self.n_bins

    def scaled(self, factor: float) -> "CaptureHistory":
        f = self.initial_density
        return CaptureHistory(self.rate, self.perturbed_rate, lambda E: factor * f(E), self.E_max, self.n_bins)


def _checked(values):
    values = np.asarray(values, float)
    if np.any(values < 0):
        raise UsageError(f"capture rate must be non-negative (min {values.min():.3g})")
    return values


def bin_moments(hist: CaptureHistory, k: int, t: float, perturbed: bool = False, rtol: float = 1e-12):
    """Mean and second moment of bin ``k`` at time ``t`` from the moment ODEs."""
    if t < 0:
        raise UsageError("t must be non-negative")
    if not 0 <= k < hist.n_bins:
        raise UsageError(f"bin {k} outside 0..{hist.n_bins - 1}")
    E_k = k * hist.dE
    n0 = quad(lambda e: float(hist.initial_density(np.asarray(e))), E_k, E_k + hist.dE, epsabs=0.0, epsrel=1e-13)[0]
    if t == 0:
        return n0, n0 * n0
    fn = hist.perturbed_rate if perturbed else hist.rate

    def rhs(s, y):
        lam = float(_checked(fn(np.asarray(E_k), np.asarray(s))))
        return [-lam * y[0], -2.0 * lam * y[1] + lam * y[0]]

    _checked(fn(np.full(65, E_k), np.linspace(0.0, t, 65)))
    sol = solve_ivp(rhs, (0.0, t), [n0, n0 * n0], method="DOP853", rtol=rtol, atol=1e-14 * max(1.0, n0 * n0))
    if not sol.success:
        raise RuntimeError(f"moment integration failed: {sol.message}")
    mean, second = sol.y[:, -1]
    return float(mean), float(second)


def bin_variance(hist: CaptureHistory, k: int, t: float, perturbed: bool = False) -> float:
    mean, second = bin_moments(hist, k, t, perturbed)
    return second - mean * mean


@dataclass(frozen=True)
class Quadrature:
    """Composite Simpson meshes: ``n_E`` intervals in energy, ``n_t`` in time."""

    n_E: int = 200
    n_t: int = 200

    def __post_init__(self):
        if self.n_E < 2 or self.n_t < 2:
            raise UsageError("quadrature needs at least 2 intervals per axis")


def _meshes(hist, t, quad_cfg):
    E = np.linspace(0.0, hist.E_max, quad_cfg.n_E + 1)
    s = np.linspace(0.0, t, quad_cfg.n_t + 1)
    return E, s


def _terms(hist, fn, E, s):
    """Per-energy survival factor exp(-L(t)) and variance factor at the final time."""
    lam = np.broadcast_to(_checked(fn(E[:, None], s[None, :])), (E.size, s.size))
    L = cumulative_simpson(lam, x=s, axis=1, initial=0.0)
    survive = np.exp(-L[:, -1])
    inner = simpson(lam * np.exp(L), x=s, axis=1)
    return survive, np.exp(-2.0 * L[:, -1]) * inner


def delta_mean(hist: CaptureHistory, t: float, quad_cfg: Quadrature = Quadrature()) -> float:
    """E[n + dn](t) - E[n](t) integrated over energy."""
    if t < 0:
        raise UsageError("t must be non-negative")
    if t == 0:
        return 0.0
    E, s = _meshes(hist, t, quad_cfg)
    N0 = np.asarray(hist.initial_density(E), float)
    new, _ = _terms(hist, hist.perturbed_rate, E, s)
    old, _ = _terms(hist, hist.rate, E, s)
    return float(simpson(N0 * new, x=E) - simpson(N0 * old, x=E))


def delta_variance(hist: CaptureHistory, t: float, quad_cfg: Quadrature = Quadrature()) -> float:
    """Var[n + dn](t) - Var[n](t) integrated over energy."""
    if t < 0:
        raise UsageError("t must be non-negative")
    if t == 0:
        return 0.0
    E, s = _meshes(hist, t, quad_cfg)
    N0 = np.asarray(hist.initial_density(E), float)
    _, new = _terms(hist, hist.perturbed_rate, E, s)
    _, old = _terms(hist, hist.rate, E, s)
    return float(simpson(N0 * new, x=E) - simpson(N0 * old, x=E))


def perturbation_table(hist: CaptureHistory, times, quad_cfg: Quadrature = Quadrature()):
    """Rows of (t, delta_mean, delta_variance)."""
    return [(float(t), delta_mean(hist, t, quad_cfg), delta_variance(hist, t, quad_cfg)) for t in times]


def pure_death_variance(n0, lam, t):
    """Exact variance of a pure-death chain with constant rate."""
    p = np.exp(-lam * t)
    return n0 * p * (1.0 - p)
