from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings

from conftest import random_models, small_model
from stochtransport.errors import UsageError
from stochtransport.model import (
    Boundary,
    MaterialModel,
    PhaseSpaceGrid,
    PopulationState,
    change_table,
    drift_vector,
    noise_amplitudes,
    verify_conservation,
)
from stochtransport.solver import energy_benchmark


def stochastic(table):
    return [e for e in table if e.stochastic]


# ---------------------------------------------------------------- grid

def test_grid_widths_and_edges():
    g = PhaseSpaceGrid(I=4, L=6, G=5, x_max=2.0, E_max=10.0, M=3)
    assert g.dx == 0.5 and g.dmu == pytest.approx(2 / 6) and g.dE == 2.0
    assert g.dphi == pytest.approx(2 * np.pi / 3)
    np.testing.assert_array_equal(g.x_edges(), np.arange(5) * 0.5)
    assert g.shape == (4, 1, 1, 6, 3, 5)
    assert g.n_packets == 4 * 6 * 3 * 5


def test_grid_rejects_bad_counts():
    with pytest.raises(UsageError):
        PhaseSpaceGrid(I=0, L=2, G=1, x_max=1.0, E_max=1.0)
    with pytest.raises(UsageError):
        PhaseSpaceGrid(I=2, L=2, G=1, x_max=-1.0, E_max=1.0)


def test_bin_index_round_trip():
    g = PhaseSpaceGrid(I=1, L=4, G=3, M=2, x_max=1.0, E_max=3.0)
    for b in range(g.n_bins):
        assert g.bin_index(*g.bin_coords(b)) == b


def test_packet_index_out_of_range():
    grid, mat = small_model()
    state = PopulationState(np.ones(grid.shape))
    with pytest.raises(UsageError):
        change_table(state, mat, grid, (1, 0, 0), (0, 0), 0)


# ---------------------------------------------------------------- change table

def test_capture_only_single_entry():
    grid, mat = small_model(sigma_t=0.1, sigma_c=0.1)
    state = PopulationState(np.ones(grid.shape))
    table = change_table(state, mat, grid, (0, 0, 0), (0, 0), 0)
    st = stochastic(table)
    assert len(st) == 1
    assert st[0].delta == -1.0 and st[0].rate == pytest.approx(0.1)
    assert sum(not e.stochastic for e in table) == 6


def test_high_band_capture_rate():
    prob = energy_benchmark()
    gen = prob.to_general()
    n = np.zeros(gen.grid.shape)
    g_hi = 15
    n[..., g_hi] = 400.0
    table = change_table(PopulationState(n), gen.material, gen.grid, (0, 0, 0), (0, 0), g_hi)
    cap = [e for e in table if e.kind == "capture"]
    assert cap[0].rate == pytest.approx(40.0)


def test_empty_state_only_source_rates():
    grid, mat = small_model(G=2, E_max=2.0, sigma_t=1.0, sigma_c=0.2, scatter=[[0.3, 0.5], [0.0, 0.8]], source=2.0)
    state = PopulationState(np.zeros(grid.shape))
    for g in range(2):
        for e in stochastic(change_table(state, mat, grid, (0, 0, 0), (0, 0), g)):
            if e.kind == "source":
                assert e.rate > 0
            else:
                assert e.rate == 0.0


def test_negative_count_is_clamped_and_flagged():
    grid, mat = small_model()
    state = PopulationState(np.full(grid.shape, -3.0))
    table = change_table(state, mat, grid, (0, 0, 0), (0, 0), 0)
    assert table.clamped
    assert all(e.rate >= 0 for e in stochastic(table))


@settings(max_examples=40, deadline=None)
@given(random_models())
def test_rates_match_printed_probabilities(model):
    grid, mat, state = model
    n = state.n
    v = mat.speed
    for idx in np.ndindex(*grid.shape):
        cell, l, m, g = idx[:3], idx[3], idx[4], idx[5]
        table = change_table(state, mat, grid, cell, (l, m), g)
        cap = sum(e.rate for e in table if e.kind == "capture")
        assert cap == pytest.approx(v[g] * mat.sigma_capture[cell + (g,)] * n[idx], rel=1e-12, abs=1e-15)
        out = sum(e.rate for e in table if e.kind == "transfer_out")
        # sigma_hat f_hat summed over outgoing bins is c_hat sigma_hat
        b = grid.bin_index(l, m, g)
        expected = v[g] * mat.transfer[cell][b].sum() * grid.bin_measure * n[idx]
        assert out == pytest.approx(expected, rel=1e-12, abs=1e-12)
        src = sum(e.rate for e in table if e.kind == "source")
        assert src == pytest.approx(mat.source[cell + (g,)] * grid.cell_volume * grid.bin_measure, rel=1e-12)


# ---------------------------------------------------------------- drift

def brute_drift(state, mat, grid, boundary=None):
    out = np.zeros(grid.shape)
    for idx in np.ndindex(*grid.shape):
        table = change_table(state, mat, grid, idx[:3], (idx[3], idx[4]), idx[5], boundary)
        out[idx] = sum(e.rate * e.delta for e in table)
    return out


def test_capture_only_drift():
    grid, mat = small_model(sigma_t=0.1, sigma_c=0.1)
    d = drift_vector(PopulationState(np.ones(grid.shape)), mat, grid)
    assert d.item() == pytest.approx(-0.1)


def test_pure_streaming_uniform_interior_drift_zero():
    grid = PhaseSpaceGrid(I=6, L=4, G=1, x_max=1.0, E_max=1.0)
    mat = MaterialModel.isotropic(grid, 0.0, 0.0, 0.0, 1.0)
    d = drift_vector(PopulationState(np.full(grid.shape, 7.0)), mat, grid)
    np.testing.assert_allclose(d[1:-1], 0.0, atol=1e-12)


def test_energy_band_equilibrium_drift():
    prob = energy_benchmark()
    gen = prob.to_general()
    low, high = prob.band_masks()
    n = np.zeros(prob.G)
    n[high] = 40.0
    n[low] = 18.0
    d = drift_vector(PopulationState(n.reshape(gen.grid.shape)), gen.material, gen.grid, gen.boundary).reshape(-1)
    assert d[low].sum() == pytest.approx(0.45 * 400 - 1.0 * 180, abs=1e-10)
    assert d[high].sum() == pytest.approx(0.0, abs=1e-10)
    assert d[low].sum() == pytest.approx(0.0, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(random_models())
def test_drift_matches_change_table(model):
    grid, mat, state = model
    for boundary in (Boundary(), Boundary(x=("reflecting", "vacuum"))):
        np.testing.assert_allclose(
            drift_vector(state, mat, grid, boundary), brute_drift(state, mat, grid, boundary), rtol=1e-12, atol=1e-10
        )


def test_drift_with_inflow_matches_change_table():
    grid = PhaseSpaceGrid(I=3, L=4, G=1, x_max=1.0, E_max=1.0)
    mat = MaterialModel.isotropic(grid, 2.0, 0.5, 1.5, 1.0)
    inflow = np.full((1, 1, 4, 1, 1), 10.0)
    b = Boundary(inflow=inflow, inflow_window=(0.0, 1.0))
    state = PopulationState(np.random.default_rng(0).uniform(0, 5, grid.shape))
    np.testing.assert_allclose(drift_vector(state, mat, grid, b), brute_drift(state, mat, grid, b), atol=1e-12)


# ---------------------------------------------------------------- noise

def test_capture_only_amplitude():
    grid, mat = small_model(sigma_t=0.25, sigma_c=0.25)
    nm = noise_amplitudes(PopulationState(np.full(grid.shape, 4.0)), mat, grid)
    assert nm.C.shape == (1, 1)
    assert nm.C[0, 0] == pytest.approx(-1.0)


def test_transfer_pair_shares_one_column():
    grid = PhaseSpaceGrid(I=1, L=1, G=2, x_max=1.0, E_max=2.0)
    S = np.array([[0.0, 0.6], [0.0, 0.0]])
    mat = MaterialModel.isotropic(grid, [0.8, 0.1], [0.1, 0.1], S, 1.0)
    n = np.array([5.0, 2.0]).reshape(grid.shape)
    nm = noise_amplitudes(PopulationState(n), mat, grid)
    col = [j for j, k in enumerate(nm.kinds) if k == "transfer"]
    assert len(col) == 1
    c_hat = mat.c_hat.reshape(-1)[0]
    r = 0.6 * 5.0
    np.testing.assert_allclose(nm.C[:, col[0]], [-np.sqrt(r) / c_hat, np.sqrt(r)])


def test_empty_state_no_noise():
    grid, mat = small_model(G=2, E_max=2.0, sigma_t=1.0, sigma_c=0.2, scatter=[[0.3, 0.5], [0.0, 0.8]])
    nm = noise_amplitudes(PopulationState(np.zeros(grid.shape)), mat, grid)
    np.testing.assert_array_equal(nm.C, 0.0)


def covariance_from_tables(state, mat, grid):
    """V assembled entry by entry from change tables (transfers matched by partner)."""
    changes = defaultdict(dict)
    rates = {}
    N = grid.n_packets
    for idx in np.ndindex(*grid.shape):
        cell, l, m, g = idx[:3], idx[3], idx[4], idx[5]
        p = grid.packet_index(cell, l, m, g)
        for e in stochastic(change_table(state, mat, grid, cell, (l, m), g)):
            if e.kind in ("capture", "source"):
                key = (e.kind, p)
            else:
                q = grid.packet_index(cell, *e.partner)
                key = ("transfer", p, q) if e.kind == "transfer_out" else ("transfer", q, p)
            changes[key][p] = changes[key].get(p, 0.0) + e.delta
            rates.setdefault(key, e.rate)
            assert rates[key] == pytest.approx(e.rate, rel=1e-14, abs=1e-300)
    V = np.zeros((N, N))
    for key, lam in changes.items():
        vec = np.zeros(N)
        for p, d in lam.items():
            vec[p] += d
        V += rates[key] * np.outer(vec, vec)
    return V


@settings(max_examples=40, deadline=None)
@given(random_models(max_packets=6))
def test_c_ct_equals_v(model):
    grid, mat, state = model
    nm = noise_amplitudes(state, mat, grid)
    V = covariance_from_tables(state, mat, grid)
    np.testing.assert_allclose(nm.C @ nm.C.T, V, atol=1e-12 * max(1.0, np.abs(V).max()))


@settings(max_examples=25, deadline=None)
@given(random_models())
def test_doubling_counts_scales_drift_and_noise(model):
    grid, mat, state = model
    # source-free so drift is linear rather than affine
    mat = MaterialModel(grid, mat.sigma_total, mat.sigma_capture, mat.transfer, mat.speed, 0.0)
    d1 = drift_vector(state, mat, grid)
    d2 = drift_vector(PopulationState(2 * state.n), mat, grid)
    np.testing.assert_allclose(d2, 2 * d1, rtol=1e-12, atol=1e-12)
    c1 = noise_amplitudes(state, mat, grid).C
    c2 = noise_amplitudes(PopulationState(2 * state.n), mat, grid).C
    np.testing.assert_allclose(c2, np.sqrt(2) * c1, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- conservation

def energy_material(kernel_scale=1.0):
    prob = energy_benchmark()
    gen = prob.to_general()
    m = gen.material
    return gen.grid, MaterialModel(gen.grid, m.sigma_total, m.sigma_capture, m.transfer * kernel_scale, m.speed)


def test_energy_material_is_conservative_in_high_band():
    grid, mat = energy_material()
    report = verify_conservation(mat, grid)
    res = report.residuals.reshape(-1)
    mid = grid.energy_mid()
    np.testing.assert_allclose(res[mid >= 10], 0.0, atol=1e-12)


def test_pure_absorber_residual_zero():
    grid, mat = small_model(G=3, E_max=3.0, sigma_t=[0.7, 1.1, 2.0], sigma_c=[0.7, 1.1, 2.0])
    assert verify_conservation(mat, grid).max_abs == 0.0


def test_scaled_kernel_residual():
    grid, mat = energy_material(1.01)
    res = verify_conservation(mat, grid).residuals.reshape(-1)
    mid = grid.energy_mid()
    # 1.0 - (0.1 + 1.01 * 0.9)
    np.testing.assert_allclose(res[mid >= 10], -0.009, atol=1e-12)
    assert abs(res[mid >= 10]).max() == pytest.approx(0.009)
    assert not verify_conservation(mat, grid).ok


def test_conservative_flag_rejects_inconsistent_kernel():
    grid = PhaseSpaceGrid(I=1, L=1, G=1, x_max=1.0, E_max=1.0)
    MaterialModel.isotropic(grid, 1.0, 0.2, 0.8, 1.0, conservative=True)
    with pytest.raises(UsageError):
        MaterialModel.isotropic(grid, 1.0, 0.2, 0.7, 1.0, conservative=True)


def test_c_hat_recomputed_from_kernel():
    grid = PhaseSpaceGrid(I=1, L=2, G=2, x_max=1.0, E_max=2.0)
    S = np.array([[0.5, 0.7], [0.0, 0.9]])
    mat = MaterialModel.isotropic(grid, [1.0, 1.0], [0.2, 0.4], S, [1.0, 2.0])
    sh = mat.sigma_hat_bins().reshape(-1)
    emitted = mat.transfer[0, 0, 0].sum(axis=1) * grid.bin_measure
    np.testing.assert_allclose(mat.c_hat.reshape(-1), emitted / sh, rtol=1e-12)
    # group 0: (0.5 + 0.7) / 0.8, group 1: 0.9 / 0.6
    np.testing.assert_allclose(mat.c_hat.reshape(2, 2)[:, 0], 1.5)
