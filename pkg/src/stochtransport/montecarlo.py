"""Reference Monte Carlo simulators with fixed time steps.

Both simulators check every neutron once per step with a single uniform draw
against a cumulative event table, so at most one event happens per neutron
per step. They share no kernels with :mod:`stochtransport.solver` and draw
from a separate RNG stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .rng import STREAM_MC, path_generator
from .solver import EnergyProblem, PathResult, SlabProblem, _snapshot_plan, _snapshots_out


def _mc_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return path_generator(int(seed), 0, STREAM_MC)


def _steps(t_end, dt):
    k = int(round(t_end / dt))
    if k < 1 or abs(k * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise UsageError(f"t_end={t_end} is not a positive multiple of mc_dt={dt}")
    return k


@dataclass
class ParticleBank:
    """Live particles of the slab simulation, stored column-wise."""

    x: np.ndarray = field(default_factory=lambda: np.empty(0))
    mu: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self):
        return self.x.size

    def add(self, x, mu):
        self.x = np.concatenate([self.x, x])
        self.mu = np.concatenate([self.mu, mu])

    def keep(self, mask):
        self.x = self.x[mask]
        self.mu = self.mu[mask]


@dataclass
class GroupPopulation:
    """Integer neutron counts per energy group plus the fractional source carry."""

    counts: np.ndarray
    carry: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise UsageError("group counts must be non-negative")


def mc_slab_run(prob: SlabProblem, seed=0, mc_dt=None) -> PathResult:
    """Analog particle tracking for the slab benchmark.

    Per step: ``influx * mc_dt`` particles (fraction carried over) enter at
    ``x = 0`` with ``mu`` uniform on (0, 1]. One draw per particle selects
    capture (probability ``v sigma_c dt``), isotropic scatter
    (``v sigma_s dt``) or nothing. The event is placed at a uniform fraction
    of the step: the particle flies to that point, and is captured or
    re-directed there, then a scattered particle flies the rest of the step.
    Particles leaving ``[0, x_max]`` are tallied as leakage; a particle that
    leaves before its event point never undergoes the event.
    """
    dt = mc_dt if mc_dt is not None else prob.mc_dt
    if dt is None or dt <= 0:
        raise UsageError("mc_slab_run needs a positive mc_dt")
    rng = _mc_rng(seed)
    K = _steps(prob.t_end, dt)
    edges = np.linspace(0.0, prob.x_max, prob.I + 1)
    p_c = prob.v * prob.sigma_c * dt
    p_s = prob.v * prob.sigma_s * dt
    if np.any(p_c + p_s >= 1.0):
        raise UsageError(f"v sigma_total mc_dt = {np.max(p_c + p_s):.3g} must be < 1")
    uniform_medium = np.all(p_c == p_c[0]) and np.all(p_s == p_s[0])

    bank = ParticleBank()
    if np.any(prob.n0 > 0):
        # initial counts are rounded per (cell, mu-bin) and placed uniformly inside the bin
        counts = np.rint(prob.n0).astype(int)
        for (i, j), c in np.ndenumerate(counts):
            if c:
                x = edges[i] + rng.random(c) * (edges[i + 1] - edges[i])
                mu = -1.0 + (j + rng.random(c)) * prob.dmu
                bank.add(x, mu)

    times = np.arange(K + 1) * dt
    series = {k: np.zeros(K + 1) for k in ("left_leakage", "right_leakage", "capture_rate", "population")}
    series["population"][0] = len(bank)
    carry = 0.0
    for k in range(K):
        t = k * dt
        if prob.t_on <= t < prob.t_off:
            carry += prob.influx * dt
            m = int(np.floor(carry + 1e-9))
            carry -= m
            if m:
                bank.add(np.zeros(m), 1.0 - rng.random(m))
        N = len(bank)
        u = rng.random(N)
        if uniform_medium:
            pc, ps = p_c[0], p_s[0]
        else:
            cell = np.minimum((bank.x / prob.x_max * prob.I).astype(int), prob.I - 1)
            pc, ps = p_c[cell], p_s[cell]
        event = u < pc + ps
        # an event happens at a uniform point inside the step
        frac = np.where(event, rng.random(N), 1.0)
        bank.x = bank.x + frac * bank.mu * prob.v * dt
        left = bank.x < 0.0
        right = bank.x > prob.x_max
        inside = ~(left | right)
        captured = inside & (u < pc)
        scattered = inside & event & ~captured
        n_sc = int(scattered.sum())
        if n_sc:
            bank.mu[scattered] = rng.uniform(-1.0, 1.0, n_sc)
            bank.x[scattered] += (1.0 - frac[scattered]) * bank.mu[scattered] * prob.v * dt
            left |= scattered & (bank.x < 0.0)
            right |= scattered & (bank.x > prob.x_max)
        series["left_leakage"][k + 1] = left.sum() / dt
        series["right_leakage"][k + 1] = right.sum() / dt
        series["capture_rate"][k + 1] = captured.sum() / dt
        bank.keep(~(left | right | captured))
        series["population"][k + 1] = len(bank)
    return PathResult(times, series, "mc", int(seed) if not isinstance(seed, np.random.Generator) else None)


def _energy_setup(prob: EnergyProblem, mc_dt):
    dt = mc_dt if mc_dt is not None else prob.mc_dt
    if dt is None or dt <= 0:
        raise UsageError("Monte Carlo energy runs need a positive mc_dt")
    K = _steps(prob.t_end, dt)
    p_c = prob.vsigma_c * dt
    p_tr = prob.kernel * prob.dE * dt  # [g, g']
    p_total = p_c + p_tr.sum(axis=1)
    if np.any(p_total >= 1.0):
        raise UsageError(f"per-step event probability {p_total.max():.3g} must be < 1")
    table = np.clip(np.column_stack([p_c, p_tr, 1.0 - p_total]), 0.0, 1.0)  # (G, G + 2)
    n0 = np.rint(prob.n0)
    if np.any(np.abs(n0 - prob.n0) > 1e-9):
        raise UsageError("Monte Carlo needs integer initial group counts")
    return dt, K, table, n0.astype(np.int64), prob.q * prob.dE * dt


def _energy_step(pop: GroupPopulation, table, add, rng):
    """Advance one step; ``pop.counts`` may carry leading replica axes."""
    G = table.shape[0]
    outcome = rng.multinomial(pop.counts, table)  # (..., G, G + 2)
    moved = outcome[..., 1:G + 1]
    counts = pop.counts - outcome[..., 0] - moved.sum(axis=-1) + moved.sum(axis=-2)
    pop.carry += add
    whole = np.floor(pop.carry + 1e-9)
    pop.carry -= whole
    pop.counts = counts + whole.astype(np.int64)


def mc_energy_run(prob: EnergyProblem, seed=0, mc_dt=None) -> PathResult:
    """Population bookkeeping for the energy-group benchmark.

    Per step, the neutrons of group ``g`` are split by one categorical draw
    each into capture (``v sigma_c dt``), transfer to ``g'``
    (``kernel[g, g'] dE dt``) or nothing; the split of all ``n_g`` draws is
    taken as one multinomial sample. Source neutrons are added
    deterministically through a fractional carry per group.
    """
    dt, K, table, n0, add = _energy_setup(prob, mc_dt)
    rng = _mc_rng(seed)
    pop = GroupPopulation(n0, np.zeros(prob.G))
    low, high = prob.band_masks()
    times = np.arange(K + 1) * dt
    series = {k: np.zeros(K + 1) for k in ("n_low", "n_high", "population")}
    snaps = _snapshot_plan(prob.snapshot_times, dt, K)

    def record(k):
        series["n_low"][k] = pop.counts[low].sum()
        series["n_high"][k] = pop.counts[high].sum()
        series["population"][k] = pop.counts.sum()

    record(0)
    for k in range(K):
        _energy_step(pop, table, add, rng)
        record(k + 1)
        if k + 1 in snaps:
            snaps[k + 1] = pop.counts.copy()
    seed_out = int(seed) if not isinstance(seed, np.random.Generator) else None
    return PathResult(times, series, "mc", seed_out, snapshots=_snapshots_out(snaps, dt))


def mc_energy_replicas(prob: EnergyProblem, seed, replicas: int, mc_dt=None) -> np.ndarray:
    """Final group counts ``(replicas, G)`` of independent runs advanced together.

    Same per-step rule as :func:`mc_energy_run`; useful when many cheap runs
    are needed (distribution checks).
    """
    if replicas < 1:
        raise UsageError("replicas must be >= 1")
    dt, K, table, n0, add = _energy_setup(prob, mc_dt)
    rng = _mc_rng(seed)
    pop = GroupPopulation(np.tile(n0, (replicas, 1)), np.zeros(prob.G))
    for _ in range(K):
        _energy_step(pop, table, add, rng)
    return pop.counts
