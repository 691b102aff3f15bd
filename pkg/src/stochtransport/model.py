"""Phase-space data model and the change-table construction of the drift and noise.

A *packet* is one bin ``(i, j, k, l, m, g)``: spatial cell ``(i, j, k)``,
direction bin ``(l, m)`` in ``(mu, phi)`` and energy group ``g``. Packet
counts are stored as arrays of shape ``(I, Jy, Kz, L, M, G)``.

Within a cell the ``(l, m, g)`` indices are flattened into a single *bin*
index ``b`` (C order, ``g`` fastest); the transfer kernel is stored densely as
``transfer[i, j, k, b_from, b_to]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SimulationError, UsageError

KINDS = ("capture", "transfer_out", "transfer_in", "source", "stream")
BOUNDARY_KINDS = ("vacuum", "reflecting")


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform discretization of position, direction and energy.

    ``Jy`` or ``Kz`` equal to 1 collapses that spatial axis: no streaming is
    computed along it, as for a medium uniform in that direction with
    reflecting side faces.
    """

    I: int
    L: int
    G: int
    x_max: float
    E_max: float
    Jy: int = 1
    Kz: int = 1
    M: int = 1
    y_max: float = 1.0
    z_max: float = 1.0

    def __post_init__(self):
        for name in ("I", "Jy", "Kz", "L", "M", "G"):
            if int(getattr(self, name)) < 1:
                raise UsageError(f"{name} must be >= 1")
        for name in ("x_max", "y_max", "z_max", "E_max"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be > 0")

    @property
    def dx(self) -> float:
        return self.x_max / self.I

    @property
    def dy(self) -> float:
        return self.y_max / self.Jy

    @property
    def dz(self) -> float:
        return self.z_max / self.Kz

    @property
    def dmu(self) -> float:
        return 2.0 / self.L

    @property
    def dphi(self) -> float:
        return 2.0 * np.pi / self.M

    @property
    def dE(self) -> float:
        return self.E_max / self.G

    @property
    def shape(self) -> tuple:
        return (self.I, self.Jy, self.Kz, self.L, self.M, self.G)

    @property
    def cell_shape(self) -> tuple:
        return (self.I, self.Jy, self.Kz)

    @property
    def n_bins(self) -> int:
        return self.L * self.M * self.G

    @property
    def n_packets(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def bin_measure(self) -> float:
        """Delta-mu * Delta-phi * Delta-E of one (direction, energy) bin."""
        return self.dmu * self.dphi * self.dE

    # Edge coordinates, x_i = (i - 1) dx for i = 1..I+1 (returned 0-based).
    def x_edges(self) -> np.ndarray:
        return np.arange(self.I + 1) * self.dx

    def y_edges(self) -> np.ndarray:
        return np.arange(self.Jy + 1) * self.dy

    def z_edges(self) -> np.ndarray:
        return np.arange(self.Kz + 1) * self.dz

    def mu_edges(self) -> np.ndarray:
        return -1.0 + np.arange(self.L + 1) * self.dmu

    def phi_edges(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dphi

    def energy_edges(self) -> np.ndarray:
        return np.arange(self.G + 1) * self.dE

    def mu_mid(self) -> np.ndarray:
        return -1.0 + (np.arange(self.L) + 0.5) * self.dmu

    def phi_mid(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.dphi

    def energy_mid(self) -> np.ndarray:
        return (np.arange(self.G) + 0.5) * self.dE

    def direction_cosines(self) -> tuple:
        """(mu_x, mu_y, mu_z), each of shape (L, M), at bin midpoints."""
        mu = self.mu_mid()[:, None]
        phi = self.phi_mid()[None, :]
        s = np.sqrt(1.0 - mu**2)
        mu_x = np.broadcast_to(mu, (self.L, self.M)).copy()
        return mu_x, s * np.cos(phi), s * np.sin(phi)

    def bin_index(self, l: int, m: int, g: int) -> int:
        return int(np.ravel_multi_index((l, m, g), (self.L, self.M, self.G)))

    def bin_coords(self, b: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(b, (self.L, self.M, self.G)))

    def packet_index(self, cell: tuple, l: int, m: int, g: int) -> int:
        return int(np.ravel_multi_index(tuple(cell) + (l, m, g), self.shape))

    def check_packet(self, cell, dir, group) -> tuple:
        cell = tuple(int(c) for c in cell)
        if len(cell) != 3:
            raise UsageError("cell must be an (i, j, k) triple")
        dir = tuple(int(d) for d in (dir if np.ndim(dir) else (dir, 0)))
        idx = cell + dir + (int(group),)
        for v, n in zip(idx, self.shape):
            if not 0 <= v < n:
                raise UsageError(f"packet index {idx} out of range for grid {self.shape}")
        return cell, dir, int(group)


@dataclass(frozen=True)
class Boundary:
    """Face conditions plus an optional deterministic inflow at x = 0.

    ``inflow`` is a rate (neutrons per unit time) for each x = 0 face packet,
    shape ``(Jy, Kz, L, M, G)``; it is only applied to directions with
    ``mu > 0`` and while ``inflow_window[0] <= t < inflow_window[1]``.
    """

    x: tuple = ("vacuum", "vacuum")
    y: tuple = ("reflecting", "reflecting")
    z: tuple = ("reflecting", "reflecting")
    inflow: Optional[np.ndarray] = None
    inflow_window: tuple = (0.0, np.inf)

    def __post_init__(self):
        for axis in (self.x, self.y, self.z):
            if len(axis) != 2 or any(b not in BOUNDARY_KINDS for b in axis):
                raise UsageError(f"boundary kinds must be pairs from {BOUNDARY_KINDS}, got {axis}")

    def inflow_active(self, t: float) -> bool:
        return self.inflow is not None and self.inflow_window[0] <= t < self.inflow_window[1]


@dataclass
class MaterialModel:
    """Cross sections, transfer kernel, speeds and source on a grid.

    sigma_total, sigma_capture : (I, Jy, Kz, G), 1/length
    transfer : (I, Jy, Kz, nb, nb); ``transfer[..., b', b]`` is
        sigma(E') f(mu', phi', E' -> mu, phi, E) per unit (mu, phi, E)
    speed : (G,)
    source : (I, Jy, Kz, G) per unit volume, solid angle, energy and time,
        or a callable ``t -> array`` of that shape.

    ``c_hat`` is always derived from the kernel: it is never an input.
    """

    grid: PhaseSpaceGrid
    sigma_total: np.ndarray
    sigma_capture: np.ndarray
    transfer: np.ndarray
    speed: np.ndarray
    source: object = 0.0
    conservative: bool = False
    conservation_tol: float = 1e-9
    sigma_hat: np.ndarray = field(init=False, repr=False)
    c_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = self.grid
        cs = grid.cell_shape + (grid.G,)
        nb = grid.n_bins
        self.sigma_total = np.broadcast_to(np.asarray(self.sigma_total, float), cs).copy()
        self.sigma_capture = np.broadcast_to(np.asarray(self.sigma_capture, float), cs).copy()
        self.transfer = np.broadcast_to(np.asarray(self.transfer, float), grid.cell_shape + (nb, nb)).copy()
        self.speed = np.broadcast_to(np.asarray(self.speed, float), (grid.G,)).copy()
        if not callable(self.source):
            self.source = np.broadcast_to(np.asarray(self.source, float), cs).copy()
            if np.any(self.source < 0):
                raise UsageError("source must be non-negative")
        if np.any(self.speed <= 0):
            raise UsageError("speeds must be positive")
        if np.any(self.sigma_capture < 0) or np.any(self.transfer < 0):
            raise UsageError("cross sections and kernel must be non-negative")
        if np.any(self.sigma_capture > self.sigma_total + 1e-15):
            raise UsageError("sigma_capture exceeds sigma_total")
        self.sigma_hat = np.maximum(self.sigma_total - self.sigma_capture, 0.0)

        emitted = self.transfer.sum(axis=-1) * grid.bin_measure  # (cells, nb_from)
        sh = self.sigma_hat_bins()
        if np.any((sh <= 0) & (emitted > 0)):
            raise UsageError("transfer kernel is nonzero where sigma_total == sigma_capture")
        with np.errstate(invalid="ignore", divide="ignore"):
            c_hat = np.where(sh > 0, emitted / np.where(sh > 0, sh, 1.0), 1.0)
        # c_hat = 1 where no non-capture collisions occur (no transfer events to scale).
        self.c_hat = np.where(emitted > 0, c_hat, 1.0)

        if self.conservative:
            report = verify_conservation(self, grid, tol=self.conservation_tol)
            if not report.ok:
                raise UsageError(f"kernel is not conservative: max residual {report.max_abs:.3e}")

    def sigma_hat_bins(self) -> np.ndarray:
        """sigma_hat expanded to (I, Jy, Kz, nb)."""
        g = self.grid
        return np.broadcast_to(self.sigma_hat[..., None, None, :], g.cell_shape + (g.L, g.M, g.G)).reshape(
            g.cell_shape + (g.n_bins,)
        )

    def speed_bins(self) -> np.ndarray:
        g = self.grid
        return np.broadcast_to(self.speed, (g.L, g.M, g.G)).reshape(-1)

    def source_at(self, t: float) -> np.ndarray:
        q = self.source(t) if callable(self.source) else self.source
        return np.broadcast_to(np.asarray(q, float), self.grid.cell_shape + (self.grid.G,))

    def c_hat_packets(self) -> np.ndarray:
        return self.c_hat.reshape(self.grid.shape)

    @classmethod
    def isotropic(cls, grid, sigma_total, sigma_capture, scatter, speed, source=0.0, conservative=False):
        """Build a model whose kernel is isotropic in direction.

        ``scatter[g', g]`` (or ``scatter[i, j, k, g', g]``) is the macroscopic
        cross section for producing a group-``g`` neutron from a group-``g'``
        collision, integrated over outgoing directions, so that
        ``sigma' f = scatter[g', g] / (4 pi dE)``.
        """
        scatter = np.asarray(scatter, float)
        S = np.broadcast_to(scatter, grid.cell_shape + (grid.G, grid.G))
        dense = S[..., None, None, :, None, None, :] / (4.0 * np.pi * grid.dE)
        dense = np.broadcast_to(
            dense, grid.cell_shape + (grid.L, grid.M, grid.G, grid.L, grid.M, grid.G)
        ).reshape(grid.cell_shape + (grid.n_bins, grid.n_bins))
        return cls(grid, sigma_total, sigma_capture, dense, speed, source, conservative=conservative)


@dataclass
class PopulationState:
    """Packet counts at one time plus running tallies.

    ``tallies`` holds per-face leakage counts from the last step
    (``leak_x_lo`` ...), their cumulative totals (``cum_leak_x_lo`` ...) and
    the captured count of the last step (deterministic part).
    """

    n: np.ndarray
    t: float = 0.0
    tallies: dict = field(default_factory=dict)
    clamp_count: int = 0
    clamp_deficit: float = 0.0

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        if not np.all(np.isfinite(self.n)):
            raise UsageError("population contains non-finite values")

    def copy(self) -> "PopulationState":
        return PopulationState(self.n.copy(), self.t, dict(self.tallies), self.clamp_count, self.clamp_deficit)


@dataclass(frozen=True)
class ChangeEntry:
    """One row of the per-packet change table.

    For stochastic kinds, ``rate`` is the probability per unit time and
    ``delta`` the change in this packet's count. Stream entries are
    deterministic: ``rate`` is 1 and ``delta`` is the flow per unit time.
    ``partner`` is the (dir, group) bin at the other end of a transfer.
    """

    delta: float
    rate: float
    kind: str
    partner: Optional[tuple] = None

    @property
    def stochastic(self) -> bool:
        return self.kind != "stream"


class ChangeTable(list):
    """List of ChangeEntry with a flag recording that a negative count was clamped."""

    clamped: bool = False


def _clamp(n):
    return np.maximum(n, 0.0)


# ---------------------------------------------------------------- streaming

def _mirror_index(grid: PhaseSpaceGrid, axis: str) -> tuple:
    """Index arrays (l, m) of the reflected direction for each (l, m)."""
    L, M = grid.L, grid.M
    l_idx = np.arange(L)[:, None] * np.ones((1, M), int)
    m_idx = np.ones((L, 1), int) * np.arange(M)[None, :]
    if axis == "x":
        return L - 1 - l_idx, m_idx
    if M % 2:
        raise UsageError("reflecting y/z faces on an active axis require an even number of phi bins")
    if axis == "y":
        return l_idx, (M // 2 - 1 - m_idx) % M
    return l_idx, M - 1 - m_idx


def _axis_cosines(grid: PhaseSpaceGrid):
    mu_x, mu_y, mu_z = grid.direction_cosines()
    out = []
    for ax, cos, count, width, spatial_axis in (
        ("x", mu_x, grid.I, grid.dx, 0),
        ("y", mu_y, grid.Jy, grid.dy, 1),
        ("z", mu_z, grid.Kz, grid.dz, 2),
    ):
        active = ax == "x" or count > 1
        out.append((ax, cos, active, width, spatial_axis))
    return out


def _axis_inflow(n, grid, speed, boundary, ax, cos, width, sa):
    """Upwind inflow rate into each packet along one axis, and |c| per packet."""
    c = cos[None, None, None, :, :, None] * speed[None, None, None, None, None, :] / width
    lo_kind, hi_kind = getattr(boundary, ax)
    first = np.take(n, [0], axis=sa)
    last = np.take(n, [n.shape[sa] - 1], axis=sa)
    if "reflecting" in (lo_kind, hi_kind):
        li, mi = _mirror_index(grid, ax)
    ghost_lo = first[:, :, :, li, mi, :] if lo_kind == "reflecting" else np.zeros_like(first)
    ghost_hi = last[:, :, :, li, mi, :] if hi_kind == "reflecting" else np.zeros_like(last)
    from_lo = np.concatenate([ghost_lo, np.delete(n, n.shape[sa] - 1, axis=sa)], axis=sa)
    from_hi = np.concatenate([np.delete(n, 0, axis=sa), ghost_hi], axis=sa)
    return np.abs(c) * np.where(c > 0, from_lo, from_hi), c


def streaming_rates(n: np.ndarray, grid: PhaseSpaceGrid, speed: np.ndarray, boundary: Boundary):
    """Upwind streaming d n/dt for every packet and outflow rates through each face.

    Returns ``(dndt, leak)`` where ``leak`` maps ``'x_lo'``, ``'x_hi'``, ...
    to neutrons per unit time leaving through vacuum faces.
    """
    dndt = np.zeros_like(n)
    leak = {}
    for ax, cos, active, width, sa in _axis_cosines(grid):
        if not active:
            leak[f"{ax}_lo"] = leak[f"{ax}_hi"] = 0.0
            continue
        inflow, c = _axis_inflow(n, grid, speed, boundary, ax, cos, width, sa)
        dndt += inflow - np.abs(c) * n
        cb = np.broadcast_to(c, n.shape)
        lo_out = np.take(np.where(cb < 0, -cb * n, 0.0), [0], axis=sa)
        hi_out = np.take(np.where(cb > 0, cb * n, 0.0), [n.shape[sa] - 1], axis=sa)
        lo_kind, hi_kind = getattr(boundary, ax)
        leak[f"{ax}_lo"] = float(lo_out.sum()) if lo_kind == "vacuum" else 0.0
        leak[f"{ax}_hi"] = float(hi_out.sum()) if hi_kind == "vacuum" else 0.0
    return dndt, leak


def _inflow_rates(grid: PhaseSpaceGrid, boundary: Boundary, t: float) -> np.ndarray:
    rates = np.zeros(grid.shape)
    if boundary.inflow_active(t):
        q = np.broadcast_to(np.asarray(boundary.inflow, float), (grid.Jy, grid.Kz, grid.L, grid.M, grid.G))
        pos = (grid.direction_cosines()[0] > 0)[None, None, :, :, None]
        rates[0] = np.where(pos, q, 0.0)
    return rates


def check_cfl(grid: PhaseSpaceGrid, speed: np.ndarray, dt: float) -> float:
    """Largest v |mu_axis| dt / width over active axes; raises if above 1."""
    worst = 0.0
    for ax, cos, active, width, _ in _axis_cosines(grid):
        if active:
            worst = max(worst, float(np.max(np.abs(cos)) * np.max(speed) * dt / width))
    if worst > 1.0 + 1e-12:
        raise UsageError(f"CFL violated: v |mu| dt / dx = {worst:.4g} > 1")
    return worst


# ---------------------------------------------------------------- change table

def change_table(state, mat: MaterialModel, grid: PhaseSpaceGrid, cell, dir, group, boundary=None) -> ChangeTable:
    """All changes that can alter packet ``(cell, dir, group)`` in a short interval.

    Entries with a structurally zero coefficient (no capture cross section,
    zero kernel element, zero source) are omitted; entries that vanish only
    because the counts are zero are kept with rate 0.
    """
    boundary = boundary or Boundary()
    cell, (l, m), g = grid.check_packet(cell, dir, group)
    n_all = np.asarray(state.n, float)
    if not np.all(np.isfinite(n_all)):
        raise UsageError("state is not finite")
    table = ChangeTable()
    table.clamped = bool(np.any(n_all < 0))
    nc = _clamp(n_all)
    v = mat.speed
    n = nc[cell + (l, m, g)]

    # six face terms: (in, out) per axis, zero on collapsed axes
    mu_x = grid.direction_cosines()[0]
    pk = cell + (l, m, g)
    for ax, cos, active, width, sa in _axis_cosines(grid):
        if not active:
            table += [ChangeEntry(0.0, 1.0, "stream"), ChangeEntry(0.0, 1.0, "stream")]
            continue
        inflow, c = _axis_inflow(n_all, grid, v, boundary, ax, cos, width, sa)
        in_rate = float(inflow[pk])
        if ax == "x" and boundary.inflow_active(state.t) and cell[0] == 0 and mu_x[l, m] > 0:
            q = np.broadcast_to(np.asarray(boundary.inflow, float), (grid.Jy, grid.Kz, grid.L, grid.M, grid.G))
            in_rate += float(q[cell[1], cell[2], l, m, g])
        out_rate = -float(np.broadcast_to(np.abs(c), grid.shape)[pk] * n_all[pk])
        table += [ChangeEntry(in_rate, 1.0, "stream"), ChangeEntry(out_rate, 1.0, "stream")]

    if mat.sigma_capture[cell + (g,)] > 0:
        table.append(ChangeEntry(-1.0, float(v[g] * mat.sigma_capture[cell + (g,)] * n), "capture"))
    Q = mat.source_at(state.t)[cell + (g,)]
    if Q > 0:
        table.append(ChangeEntry(1.0, float(Q * grid.cell_volume * grid.bin_measure), "source"))

    b = grid.bin_index(l, m, g)
    T = mat.transfer[cell]
    c_hat = mat.c_hat[cell + (b,)]
    vb = mat.speed_bins()
    nb_cell = nc[cell].reshape(-1)
    for b2 in np.nonzero(T[b])[0]:
        rate = vb[b] * T[b, b2] * n * grid.bin_measure
        table.append(ChangeEntry(-1.0 / c_hat, float(rate), "transfer_out", grid.bin_coords(b2)))
    for b2 in np.nonzero(T[:, b])[0]:
        rate = vb[b2] * T[b2, b] * nb_cell[b2] * grid.bin_measure
        table.append(ChangeEntry(1.0, float(rate), "transfer_in", grid.bin_coords(b2)))
    return table


# ---------------------------------------------------------------- drift and noise

def transfer_rates(n: np.ndarray, mat: MaterialModel, grid: PhaseSpaceGrid, clamp: bool = True) -> np.ndarray:
    """Per-unit-time transfer rates ``R[i, j, k, b_from, b_to]`` (on ``max(n, 0)`` by default)."""
    ncell = (_clamp(n) if clamp else np.asarray(n, float)).reshape(grid.cell_shape + (grid.n_bins,))
    vb = mat.speed_bins()
    return (vb * ncell)[..., :, None] * mat.transfer * grid.bin_measure


def drift_vector(state, mat: MaterialModel, grid: PhaseSpaceGrid, boundary=None) -> np.ndarray:
    """Expected rate of change of every packet count (shape ``grid.shape``).

    Linear in the raw counts. For non-negative states it equals the sum of
    ``rate * delta`` over :func:`change_table`, whose rates use ``max(n, 0)``.
    """
    boundary = boundary or Boundary()
    n = np.asarray(state.n, float)
    stream, _ = streaming_rates(n, grid, mat.speed, boundary)
    v = mat.speed[None, None, None, None, None, :]
    capture = v * mat.sigma_capture[:, :, :, None, None, :] * n
    R = transfer_rates(n, mat, grid, clamp=False)
    c_hat = mat.c_hat
    out = (R.sum(axis=-1) / c_hat).reshape(grid.shape)
    inn = R.sum(axis=-2).reshape(grid.shape)
    Q = mat.source_at(state.t)[:, :, :, None, None, :] * grid.cell_volume * grid.bin_measure
    Q = np.broadcast_to(Q, grid.shape)
    return stream + _inflow_rates(grid, boundary, state.t) - capture - out + inn + Q


@dataclass
class NoiseMatrix:
    """Noise coefficients ``C`` (packets x stochastic changes) with their sources.

    ``lambdas[i, j]`` is the change of packet ``i`` caused by change ``j``,
    ``rates[j]`` its probability per unit time, and ``C = lambdas * sqrt(rates)``.
    """

    C: np.ndarray
    lambdas: np.ndarray
    rates: np.ndarray
    kinds: list


def noise_amplitudes(state, mat: MaterialModel, grid: PhaseSpaceGrid) -> NoiseMatrix:
    """Dense coefficient matrix of every stochastic change for a small model.

    Transfer ``a -> b`` is one change moving ``-1/c_hat`` at ``a`` and ``+1``
    at ``b`` (both at ``a`` for self-transfer), which is how the same Gaussian
    variable enters the transfer-out and transfer-in sums.
    """
    n = np.asarray(state.n, float)
    if not np.all(np.isfinite(n)):
        raise UsageError("state is not finite")
    nc = _clamp(n)
    N = grid.n_packets
    cols_lam, rates, kinds = [], [], []
    v = mat.speed
    Q = mat.source_at(state.t)
    for idx in np.ndindex(*grid.shape):
        cell, g = idx[:3], idx[5]
        p = grid.packet_index(cell, idx[3], idx[4], g)
        sc = mat.sigma_capture[cell + (g,)]
        if sc > 0:
            lam = np.zeros(N)
            lam[p] = -1.0
            cols_lam.append(lam)
            rates.append(v[g] * sc * nc[idx])
            kinds.append("capture")
        if Q[cell + (g,)] > 0:
            lam = np.zeros(N)
            lam[p] = 1.0
            cols_lam.append(lam)
            rates.append(Q[cell + (g,)] * grid.cell_volume * grid.bin_measure)
            kinds.append("source")
    R = transfer_rates(n, mat, grid)
    for cell in np.ndindex(*grid.cell_shape):
        T = mat.transfer[cell]
        for b_from, b_to in zip(*np.nonzero(T)):
            lam = np.zeros(N)
            pa = grid.packet_index(cell, *grid.bin_coords(b_from))
            pb = grid.packet_index(cell, *grid.bin_coords(b_to))
            lam[pa] -= 1.0 / mat.c_hat[cell + (b_from,)]
            lam[pb] += 1.0
            cols_lam.append(lam)
            rates.append(R[cell + (b_from, b_to)])
            kinds.append("transfer")
    lambdas = np.array(cols_lam).T if cols_lam else np.zeros((N, 0))
    rates = np.asarray(rates, float)
    if np.any(rates < 0):
        raise SimulationError("negative change rate after clamping")
    return NoiseMatrix(lambdas * np.sqrt(rates)[None, :], lambdas, rates, kinds)


# ---------------------------------------------------------------- conservation

@dataclass
class ConservationReport:
    residuals: np.ndarray  # (I, Jy, Kz, nb_from)
    tol: float

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0

    @property
    def ok(self) -> bool:
        return self.max_abs <= self.tol

    @property
    def flagged(self) -> np.ndarray:
        return np.argwhere(np.abs(self.residuals) > self.tol)


def verify_conservation(mat: MaterialModel, grid: PhaseSpaceGrid, tol: float = 1e-9) -> ConservationReport:
    """Residual ``v sigma - (v sigma_c + sum v sigma' f dmu dphi dE)`` per incoming bin."""
    vb = mat.speed_bins()
    def bins(a):
        return np.broadcast_to(a[..., None, None, :], grid.cell_shape + (grid.L, grid.M, grid.G)).reshape(
            grid.cell_shape + (grid.n_bins,)
        )
    total = vb * bins(mat.sigma_total)
    capture = vb * bins(mat.sigma_capture)
    emitted = vb * mat.transfer.sum(axis=-1) * grid.bin_measure
    return ConservationReport(total - (capture + emitted), tol)
