import numpy as np
import pytest

from stochtransport.errors import UsageError
from stochtransport.montecarlo import GroupPopulation, mc_energy_replicas, mc_energy_run, mc_slab_run
from stochtransport.rng import STREAM_MC, path_generator
from stochtransport.solver import EnergyProblem, SlabProblem, energy_benchmark


def capture_only(n0, rate, t_end, dt):
    return EnergyProblem(G=1, E_max=1.0, vsigma=rate, vsigma_c=rate, kernel=0.0, q=0.0, n0=n0, dt=dt,
                         t_end=t_end, band_split=0.5, mc_dt=dt)


def slab(**kw):
    params = dict(I=10, J=4, v=1.0, sigma_s=2.0, sigma_c=0.5, influx=100.0, t_on=0.0, t_off=3.0,
                  dt=0.05, t_end=5.0, window=(4.0, 5.0), mc_dt=0.05)
    params.update(kw)
    return SlabProblem(**params)


def test_pure_capture_mean():
    surv = mc_energy_replicas(capture_only(1000, 1.0, 1.0, 0.001), 3, 1000)[:, 0]
    se = surv.std(ddof=1) / np.sqrt(surv.size)
    assert abs(surv.mean() - 1000 * np.exp(-1.0)) < 3 * se


@pytest.mark.parametrize("lam_t", [0.5, 1.0, 2.0])
def test_pure_death_variance_oracle(lam_t):
    n0, lam, dt = 200, 1.0, 0.005
    surv = mc_energy_replicas(capture_only(n0, lam, lam_t / lam, dt), 5, 10_000)[:, 0]
    p = np.exp(-lam * lam_t)
    assert np.var(surv, ddof=1) == pytest.approx(n0 * p * (1 - p), rel=0.05)


def test_replicas_follow_the_single_run_rule():
    prob = energy_benchmark()
    batch = mc_energy_replicas(prob, 11, 300)
    low, high = prob.band_masks()
    singles = np.array([[r.final("n_low"), r.final("n_high")]
                        for r in (mc_energy_run(prob, path_generator(11, i, STREAM_MC)) for i in range(300))])
    for k, mask in enumerate((low, high)):
        b = batch[:, mask].sum(axis=1)
        se = np.sqrt(b.var(ddof=1) / b.size + singles[:, k].var(ddof=1) / len(singles))
        assert abs(b.mean() - singles[:, k].mean()) < 4 * se


def test_zero_rates_constant_population():
    prob = EnergyProblem(G=3, E_max=3.0, vsigma=0.0, vsigma_c=0.0, kernel=0.0, q=0.0, n0=[5, 0, 7],
                         dt=0.1, t_end=2.0, band_split=1.5, mc_dt=0.1)
    res = mc_energy_run(prob, 1)
    assert np.all(res.series["population"] == 12)


def test_energy_counts_are_nonnegative_integers():
    res = mc_energy_run(energy_benchmark(), 2)
    for name in ("n_low", "n_high"):
        s = res.series[name]
        assert np.all(s >= 0) and np.all(s == np.round(s))


def test_energy_source_carry_is_deterministic():
    prob = EnergyProblem(G=1, E_max=1.0, vsigma=0.0, vsigma_c=0.0, kernel=0.0, q=0.3, n0=0, dt=1.0,
                         t_end=10.0, band_split=0.5, mc_dt=1.0)
    res = mc_energy_run(prob, 0)
    np.testing.assert_array_equal(res.series["population"], np.floor(0.3 * np.arange(11) + 1e-9))


def test_energy_rejects_fractional_counts_and_large_steps():
    with pytest.raises(UsageError):
        mc_energy_run(energy_benchmark(n0=np.full(20, 0.5)), 0)
    with pytest.raises(UsageError):
        mc_energy_run(capture_only(10, 1.0, 2.0, 1.0), 0)
    with pytest.raises(UsageError):
        GroupPopulation(np.array([-1]), np.zeros(1))


def test_ballistic_slab():
    prob = slab(sigma_s=0.0, sigma_c=0.0, t_off=1.0, t_end=4.0, mc_dt=0.01)
    res = mc_slab_run(prob, 4)
    s = res.series
    assert np.all(s["left_leakage"] == 0.0)
    injected = 100.0 * 1.0
    # slow particles (small mu) may still be inside at t_end
    assert (s["right_leakage"] * 0.01).sum() + s["population"][-1] == pytest.approx(injected)
    # nobody exits before the fastest transit time x_max / v
    t = res.times
    assert np.all(s["right_leakage"][t < 1.0 - 1e-9] == 0.0)


def test_no_influx_no_tallies():
    res = mc_slab_run(slab(influx=0.0), 5)
    for s in res.series.values():
        assert np.all(s == 0.0)


def test_slab_particle_balance():
    prob = slab(t_off=5.0)
    res = mc_slab_run(prob, 6)
    s, dt = res.series, prob.mc_dt
    out = (s["left_leakage"] + s["right_leakage"] + s["capture_rate"]) * dt
    injected = 100.0 * 5.0
    assert out.sum() + s["population"][-1] == pytest.approx(injected)
    assert np.all(s["left_leakage"] >= 0) and np.all(s["right_leakage"] >= 0)


def test_slab_step_too_large():
    with pytest.raises(UsageError):
        mc_slab_run(slab(mc_dt=0.5), 0)
    with pytest.raises(UsageError):
        mc_slab_run(slab(mc_dt=None), 0)


def test_mc_reproducible_and_stream_independent():
    prob = slab()
    a = mc_slab_run(prob, 7)
    b = mc_slab_run(prob, 7)
    np.testing.assert_array_equal(a.series["left_leakage"], b.series["left_leakage"])
    assert a.method == "mc"


def test_mc_slab_mean_tracks_deterministic():
    from stochtransport.solver import run_deterministic
    prob = slab(t_off=5.0, mc_dt=0.01, dt=0.01)
    ref = run_deterministic(slab(t_off=5.0, I=80, J=40, dt=0.01)).window_mean("left_leakage", 4.0, 5.0)
    vals = [mc_slab_run(prob, path_generator(9, i, STREAM_MC)).window_mean("left_leakage", 4.0, 5.0)
            for i in range(200)]
    se = np.std(vals, ddof=1) / np.sqrt(len(vals))
    assert abs(np.mean(vals) - ref) < max(4 * se, 0.03 * ref)
