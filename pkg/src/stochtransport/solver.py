"""Euler-Maruyama time stepping of the stochastic difference systems.

Three steppers share one clamping policy. Square-root arguments always use
``max(n, 0)``. What happens to a count that is negative after an update is
selected by ``clamp``:

* ``"retain"`` (default) keeps it; the drift stays linear in ``n`` so the
  ensemble mean follows the noise-free recursion exactly;
* ``"zero"`` sets it to 0, which adds mass wherever counts are tiny
  (ahead of a streaming front) and biases leakage upward.

Either way the number of negative packets and their total negative mass are
logged in ``clamp_count`` / ``clamp_deficit``. Leakage and capture tallies
are the drift's own outflow terms evaluated on the stored counts, so they
balance the population update exactly; under ``"retain"`` a single step's
tally can therefore be slightly negative. The steppers are:

* :func:`step_general` -- every packet of a full phase-space model;
* :func:`run_slab` -- mono-energetic slab with isotropic scattering;
* :func:`run_energy` -- homogeneous medium resolved in energy only.

Passing ``noise=False`` (or calling :func:`run_deterministic`) drops every
Gaussian term and leaves the expected-value recursion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import SimulationError, UsageError
from .model import (
    Boundary,
    MaterialModel,
    PhaseSpaceGrid,
    PopulationState,
    _inflow_rates,
    check_cfl,
    drift_vector,
    streaming_rates,
    transfer_rates,
)
from .rng import STREAM_SDE, path_generator

SeedLike = Union[int, np.random.Generator, None]


def _rng(seed: SeedLike, stream: int = STREAM_SDE) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return path_generator(0 if seed is None else int(seed), 0, stream)


def _n_steps(t_end: float, dt: float) -> int:
    k = int(round(t_end / dt))
    if k < 1 or abs(k * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise UsageError(f"t_end={t_end} is not a positive multiple of dt={dt}")
    return k


CLAMP_POLICIES = ("retain", "zero")


def _clamp_negative(n: np.ndarray, policy: str = "retain") -> tuple:
    neg = n < 0
    if not neg.any():
        return 0, 0.0
    deficit = float(-n[neg].sum())
    count = int(neg.sum())
    if policy == "zero":
        n[neg] = 0.0
    return count, deficit


def _check_policy(policy):
    if policy not in CLAMP_POLICIES:
        raise UsageError(f"clamp policy must be one of {CLAMP_POLICIES}")


def _check_finite(n: np.ndarray, t: float, where: str):
    if not np.all(np.isfinite(n)):
        bad = np.argwhere(~np.isfinite(n))[:5].tolist()
        raise SimulationError(f"{where}: non-finite packet counts at t={t:.6g}, first indices {bad}")


@dataclass
class PathResult:
    """Time series of one sample path.

    Every series has one value per record time, starting with ``t = 0``.
    Per-step quantities (leakage, capture rates) are stored at the end of the
    step they describe, so their ``t = 0`` entry is 0.
    """

    times: np.ndarray
    series: dict
    method: str
    seed: Optional[int] = None
    clamp_count: int = 0
    clamp_deficit: float = 0.0
    snapshots: dict = field(default_factory=dict)

    def window_mean(self, name: str, t0: float, t1: float) -> float:
        """Mean of a per-step rate over steps ending in ``(t0, t1]``."""
        eps = 1e-9 * max(1.0, abs(t1))
        sel = (self.times > t0 + eps) & (self.times <= t1 + eps)
        if not sel.any():
            raise UsageError(f"no record times in ({t0}, {t1}]")
        return float(self.series[name][sel].mean())

    def final(self, name: str) -> float:
        return float(self.series[name][-1])

    def at(self, name: str, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        return float(self.series[name][k])


# ---------------------------------------------------------------- general phase space

def step_general(
    state: PopulationState,
    mat: MaterialModel,
    grid: PhaseSpaceGrid,
    dt: float,
    noise: Optional[np.random.Generator] = None,
    boundary: Optional[Boundary] = None,
    clamp: str = "retain",
) -> PopulationState:
    """Advance every packet by one Euler-Maruyama step.

    ``noise`` is the Gaussian source; ``None`` gives the expected-value step.
    The variable for transfer ``a -> b`` enters packet ``a`` with weight
    ``-1/c_hat_a`` and packet ``b`` with ``+1``.
    """
    boundary = boundary or Boundary()
    _check_policy(clamp)
    check_cfl(grid, mat.speed, dt)
    n = state.n
    if n.shape != grid.shape:
        raise UsageError(f"state shape {n.shape} does not match grid {grid.shape}")
    drift = drift_vector(state, mat, grid, boundary)
    _, leak = streaming_rates(n, grid, mat.speed, boundary)
    new = n + drift * dt
    if noise is not None:
        nc = np.maximum(n, 0.0)
        cells = grid.cell_shape
        nb = grid.n_bins
        R = transfer_rates(n, mat, grid) * dt
        Z = np.sqrt(R) * noise.standard_normal(cells + (nb, nb))
        tr = Z.sum(axis=-2) - Z.sum(axis=-1) / mat.c_hat
        v = mat.speed[None, None, None, None, None, :]
        cap = np.sqrt(v * mat.sigma_capture[:, :, :, None, None, :] * nc * dt)
        q = mat.source_at(state.t)[:, :, :, None, None, :] * grid.cell_volume * grid.bin_measure
        src = np.broadcast_to(np.sqrt(q * dt), grid.shape)
        eta_c = noise.standard_normal(grid.shape)
        eta_q = noise.standard_normal(grid.shape)
        new = new + tr.reshape(grid.shape) - cap * eta_c + src * eta_q
    _check_finite(new, state.t, "step_general")
    count, deficit = _clamp_negative(new, clamp)
    tallies = {}
    for face, rate in leak.items():
        tallies[f"leak_{face}"] = rate * dt
        tallies[f"cum_leak_{face}"] = state.tallies.get(f"cum_leak_{face}", 0.0) + rate * dt
    tallies["capture"] = float(
        (mat.speed[None, None, None, None, None, :] * mat.sigma_capture[:, :, :, None, None, :] * n).sum() * dt
    )
    return PopulationState(
        new, state.t + dt, tallies, state.clamp_count + count, state.clamp_deficit + deficit
    )


@dataclass(eq=False)
class GeneralProblem:
    """A full phase-space problem for :func:`run_general`."""

    grid: PhaseSpaceGrid
    material: MaterialModel
    n0: np.ndarray
    dt: float
    t_end: float
    boundary: Boundary = field(default_factory=Boundary)
    window: Optional[tuple] = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        self.n0 = np.broadcast_to(np.asarray(self.n0, float), self.grid.shape).copy()
        if np.any(self.n0 < 0):
            raise UsageError("initial counts must be non-negative")
        check_cfl(self.grid, self.material.speed, self.dt)
        _n_steps(self.t_end, self.dt)


def run_general(prob: GeneralProblem, seed: SeedLike = 0, noise: bool = True, clamp: str = "retain") -> PathResult:
    rng = _rng(seed) if noise else None
    K = _n_steps(prob.t_end, prob.dt)
    state = PopulationState(prob.n0.copy(), 0.0)
    times = np.arange(K + 1) * prob.dt
    names = ("population", "left_leakage", "right_leakage", "capture_rate")
    series = {k: np.zeros(K + 1) for k in names}
    series["population"][0] = state.n.sum()
    snaps = _snapshot_plan(prob.snapshot_times, prob.dt, K)
    for k in range(K):
        state.t = k * prob.dt
        state = step_general(state, prob.material, prob.grid, prob.dt, rng, prob.boundary, clamp)
        series["population"][k + 1] = state.n.sum()
        series["left_leakage"][k + 1] = state.tallies["leak_x_lo"] / prob.dt
        series["right_leakage"][k + 1] = state.tallies["leak_x_hi"] / prob.dt
        series["capture_rate"][k + 1] = state.tallies["capture"] / prob.dt
        if k + 1 in snaps:
            snaps[k + 1] = state.n.copy()
    return PathResult(
        times, series, "sde" if noise else "deterministic", _seed_of(seed),
        state.clamp_count, state.clamp_deficit, _snapshots_out(snaps, prob.dt),
    )


def _snapshot_plan(times, dt, K) -> dict:
    plan = {}
    for t in times:
        k = int(round(t / dt))
        if not 0 <= k <= K:
            raise UsageError(f"snapshot time {t} outside [0, t_end]")
        plan[k] = None
    return plan


def _snapshots_out(plan, dt) -> dict:
    return {k * dt: v for k, v in plan.items() if v is not None}


def _seed_of(seed) -> Optional[int]:
    return int(seed) if isinstance(seed, (int, np.integer)) else None


# ---------------------------------------------------------------- slab

@dataclass(eq=False)
class SlabProblem:
    """Mono-energetic slab ``0 <= x <= x_max`` with isotropic scattering.

    ``influx`` neutrons per unit time enter at ``x = 0``, spread evenly over
    the ``J/2`` bins with ``mu > 0``, while ``t_on <= t < t_off``. Both faces
    are vacuum. ``mc_dt`` is only used by the Monte Carlo reference.
    """

    I: int
    J: int
    v: float
    sigma_s: object
    sigma_c: object
    influx: float
    t_on: float
    t_off: float
    dt: float
    t_end: float
    x_max: float = 1.0
    window: tuple = (49.0, 50.0)
    mc_dt: Optional[float] = None
    n0: object = 0.0
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.I < 1 or self.J < 2 or self.J % 2:
            raise UsageError("slab needs I >= 1 and an even J >= 2")
        if self.v <= 0 or self.x_max <= 0 or self.dt <= 0:
            raise UsageError("v, x_max and dt must be positive")
        self.sigma_s = np.broadcast_to(np.asarray(self.sigma_s, float), (self.I,)).copy()
        self.sigma_c = np.broadcast_to(np.asarray(self.sigma_c, float), (self.I,)).copy()
        if np.any(self.sigma_s < 0) or np.any(self.sigma_c < 0) or self.influx < 0:
            raise UsageError("cross sections and influx must be non-negative")
        self.n0 = np.broadcast_to(np.asarray(self.n0, float), (self.I, self.J)).copy()
        if self.v * self.dt / self.dx > 1.0 + 1e-12:
            raise UsageError(f"CFL violated: v dt / dx = {self.v * self.dt / self.dx:.4g} > 1")
        _n_steps(self.t_end, self.dt)

    @property
    def dx(self) -> float:
        return self.x_max / self.I

    @property
    def dmu(self) -> float:
        return 2.0 / self.J

    def mu(self) -> np.ndarray:
        return -1.0 + (np.arange(self.J) + 0.5) * self.dmu

    def to_general(self) -> GeneralProblem:
        """The same problem expressed for :func:`step_general` (one group, one phi bin)."""
        grid = PhaseSpaceGrid(I=self.I, L=self.J, G=1, x_max=self.x_max, E_max=1.0)
        st = (self.sigma_s + self.sigma_c)[:, None, None, None]
        sc = self.sigma_c[:, None, None, None]
        scatter = self.sigma_s[:, None, None, None, None]
        mat = MaterialModel.isotropic(grid, st, sc, scatter, [self.v])
        inflow = np.full((1, 1, self.J, 1, 1), self.influx / (self.J / 2))
        boundary = Boundary(inflow=inflow, inflow_window=(self.t_on, self.t_off))
        n0 = self.n0.reshape(self.I, 1, 1, self.J, 1, 1)
        return GeneralProblem(grid, mat, n0, self.dt, self.t_end, boundary, self.window)


def run_slab(prob: SlabProblem, seed: SeedLike = 0, noise: bool = True, clamp: str = "retain") -> PathResult:
    """Sample path of the upwind slab scheme.

    Recorded series: ``left_leakage`` and ``right_leakage`` (outflow through
    each face per unit time), ``capture_rate``, ``population``.
    """
    _check_policy(clamp)
    rng = _rng(seed) if noise else None
    K = _n_steps(prob.t_end, prob.dt)
    I, J, v, dt = prob.I, prob.J, prob.v, prob.dt
    mu = prob.mu()
    pos = mu > 0
    c = np.abs(mu) * v * dt / prob.dx  # (J,)
    ss = prob.sigma_s[:, None]
    sc = prob.sigma_c[:, None]
    removal = v * (ss + sc) * dt
    scat = 0.5 * ss * v * prob.dmu * dt  # per-source-bin weight
    inject = prob.influx * dt / (J / 2)

    n = prob.n0.copy()
    times = np.arange(K + 1) * dt
    series = {k: np.zeros(K + 1) for k in ("left_leakage", "right_leakage", "capture_rate", "population")}
    series["population"][0] = n.sum()
    snaps = _snapshot_plan(prob.snapshot_times, dt, K)
    clamps, deficit = 0, 0.0
    zero_row = np.zeros((1, J))
    for k in range(K):
        t = k * dt
        up = np.where(pos, np.vstack([zero_row, n[:-1]]), np.vstack([n[1:], zero_row]))
        new = n + c * (up - n) - removal * n + scat * n.sum(axis=1, keepdims=True)
        if noise:
            nc = np.maximum(n, 0.0)
            eta_c = rng.standard_normal((I, J))
            eta_tr = rng.standard_normal((I, J, J))
            Z = np.sqrt(scat * nc)[:, :, None] * eta_tr  # Z[i, j, m]: transfer j -> m
            new -= np.sqrt(v * sc * nc * dt) * eta_c
            new += Z.sum(axis=1) - Z.sum(axis=2)
        if prob.t_on <= t < prob.t_off:
            new[0, pos] += inject
        # tallies are the drift's own outflow terms, so they balance the update exactly
        series["left_leakage"][k + 1] = (c[~pos] * n[0, ~pos]).sum() / dt
        series["right_leakage"][k + 1] = (c[pos] * n[-1, pos]).sum() / dt
        series["capture_rate"][k + 1] = (v * sc * n).sum()
        _check_finite(new, t, "run_slab")
        cc, dd = _clamp_negative(new, clamp)
        clamps += cc
        deficit += dd
        n = new
        series["population"][k + 1] = n.sum()
        if k + 1 in snaps:
            snaps[k + 1] = n.copy()
    return PathResult(times, series, "sde" if noise else "deterministic", _seed_of(seed),
                      clamps, deficit, _snapshots_out(snaps, dt))


# ---------------------------------------------------------------- energy groups

@dataclass(eq=False)
class EnergyProblem:
    """Homogeneous, reflected medium resolved into ``G`` equal energy groups.

    vsigma, vsigma_c : (G,) speed times total / capture cross section
    kernel : (G, G), ``kernel[g', g]`` = v' sigma' f(E' -> E) per unit energy
    q : (G,) source per unit energy and time (deterministic)
    n0 : (G,) initial counts per group
    Band observables sum groups whose midpoint lies below / above ``band_split``.
    """

    G: int
    E_max: float
    vsigma: object
    vsigma_c: object
    kernel: object
    q: object
    n0: object
    dt: float
    t_end: float
    band_split: float
    mc_dt: Optional[float] = None
    snapshot_times: tuple = ()

    def __post_init__(self):
        G = self.G
        if G < 1 or self.E_max <= 0 or self.dt <= 0:
            raise UsageError("need G >= 1, E_max > 0, dt > 0")
        for name in ("vsigma", "vsigma_c", "q", "n0"):
            setattr(self, name, np.broadcast_to(np.asarray(getattr(self, name), float), (G,)).copy())
        self.kernel = np.broadcast_to(np.asarray(self.kernel, float), (G, G)).copy()
        for name in ("vsigma", "vsigma_c", "q", "n0", "kernel"):
            if np.any(getattr(self, name) < 0):
                raise UsageError(f"{name} must be non-negative")
        if np.any(self.vsigma_c > self.vsigma + 1e-12):
            raise UsageError("vsigma_c exceeds vsigma")
        _n_steps(self.t_end, self.dt)

    @property
    def dE(self) -> float:
        return self.E_max / self.G

    def band_masks(self) -> tuple:
        mid = (np.arange(self.G) + 0.5) * self.dE
        return mid < self.band_split, mid >= self.band_split

    def to_general(self) -> GeneralProblem:
        """Same drift as a one-cell, one-direction model (the source there is Poisson)."""
        G = self.G
        grid = PhaseSpaceGrid(I=1, L=1, G=G, x_max=1.0, E_max=self.E_max)
        speed = np.ones(G)
        transfer = self.kernel / (speed[:, None] * 4.0 * np.pi)
        Q = self.q / (grid.cell_volume * 4.0 * np.pi)
        mat = MaterialModel(grid, self.vsigma / speed, self.vsigma_c / speed, transfer, speed, Q)
        b = Boundary(x=("reflecting", "reflecting"))
        return GeneralProblem(grid, mat, self.n0.reshape(grid.shape), self.dt, self.t_end, b)


def run_energy(prob: EnergyProblem, seed: SeedLike = 0, noise: bool = True, clamp: str = "retain") -> PathResult:
    """Sample path of the energy-group scheme; records ``n_low``, ``n_high``, ``population``."""
    _check_policy(clamp)
    rng = _rng(seed) if noise else None
    K = _n_steps(prob.t_end, prob.dt)
    dt, dE = prob.dt, prob.dE
    low, high = prob.band_masks()
    source = prob.q * dE * dt
    removal = prob.vsigma * dt
    inscatter = prob.kernel.T * dE * dt  # [g, g'] weight on n_{g'}
    tr_rate = prob.kernel * dE * dt  # [g, g'] per neutron in g
    n = prob.n0.copy()
    times = np.arange(K + 1) * dt
    series = {k: np.zeros(K + 1) for k in ("n_low", "n_high", "population")}
    snaps = _snapshot_plan(prob.snapshot_times, dt, K)
    clamps, deficit = 0, 0.0

    def record(k):
        series["n_low"][k] = n[low].sum()
        series["n_high"][k] = n[high].sum()
        series["population"][k] = n.sum()

    record(0)
    for k in range(K):
        new = n + source - removal * n + inscatter @ n
        if noise:
            nc = np.maximum(n, 0.0)
            eta_c = rng.standard_normal(prob.G)
            eta_tr = rng.standard_normal((prob.G, prob.G))
            Z = np.sqrt(tr_rate * nc[:, None]) * eta_tr  # Z[g, g']: transfer g -> g'
            new += -np.sqrt(prob.vsigma_c * nc * dt) * eta_c - Z.sum(axis=1) + Z.sum(axis=0)
        _check_finite(new, k * dt, "run_energy")
        cc, dd = _clamp_negative(new, clamp)
        clamps += cc
        deficit += dd
        n = new
        record(k + 1)
        if k + 1 in snaps:
            snaps[k + 1] = n.copy()
    return PathResult(times, series, "sde" if noise else "deterministic", _seed_of(seed),
                      clamps, deficit, _snapshots_out(snaps, dt))


def run_deterministic(prob) -> PathResult:
    """Noise-free run of any problem type; the result does not depend on a seed."""
    if isinstance(prob, SlabProblem):
        return run_slab(prob, None, noise=False)
    if isinstance(prob, EnergyProblem):
        return run_energy(prob, None, noise=False)
    if isinstance(prob, GeneralProblem):
        return run_general(prob, None, noise=False)
    raise UsageError(f"unsupported problem type {type(prob).__name__}")


# ---------------------------------------------------------------- benchmark problems

def slab_benchmark(**overrides) -> SlabProblem:
    """Slab leakage benchmark: 1000 n/s enter a unit slab on [0, 50]."""
    params = dict(I=80, J=40, v=0.1, sigma_s=5.0, sigma_c=0.10, influx=1000.0, t_on=0.0, t_off=50.0,
                  dt=0.125, t_end=100.0, x_max=1.0, window=(49.0, 50.0), mc_dt=0.1)
    params.update(overrides)
    return SlabProblem(**params)


def energy_benchmark(**overrides) -> EnergyProblem:
    """Slowing-down benchmark on [0, 20] eV: 400 neutrons start in the upper half."""
    G = overrides.pop("G", 20)
    E_max = 20.0
    mid = (np.arange(G) + 0.5) * E_max / G
    hi = mid >= 10.0
    kernel = np.where(hi[:, None], 0.045, 0.0) * np.ones((G, G))
    params = dict(G=G, E_max=E_max, vsigma=np.ones(G), vsigma_c=np.where(hi, 0.1, 1.0), kernel=kernel,
                  q=np.where(hi, 22.0, 0.0), n0=np.where(hi, 400.0 / hi.sum(), 0.0), dt=0.02, t_end=2.0,
                  band_split=10.0, mc_dt=0.02)
    params.update(overrides)
    return EnergyProblem(**params)
