import numpy as np
import pytest

from ionheat.bath import BathParams, bath_propagate
from ionheat.fock import OutOfRangeError, double_thermal_from_levels, fock_state, ground_state, thermal_distribution
from ionheat.physics import DEFAULT_LASER, DEFAULT_TRAP, YB171, LaserConfig, mhz
from ionheat.qtt import (
    ContinuousSource, DiscreteSource, KickSizeError, _emission_projection, continuous_kick, discrete_kick,
    ensemble_average, make_rng, run_trajectory, simulate_alpha_sq,
)
from ionheat.scattering import ScatterModel, effective_coefficients, linear_heating_rate, scattering_rate

MODEL = ScatterModel(YB171, DEFAULT_LASER)
OMEGA, MASS = DEFAULT_TRAP.secular_frequency, YB171.mass


def test_continuous_kick_zero_noise():
    k = continuous_kick(make_rng(1), 0.0, 1e-6, OMEGA, MASS, size=100)
    assert np.all(k == 0)


def test_continuous_kick_variance():
    src = ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP)
    k = continuous_kick(make_rng(2), src.spectral_density, 1e-6, OMEGA, MASS, size=10**6)
    a2 = np.abs(k) ** 2
    assert abs(a2.mean() - 770e-6) < 3 * a2.std() / 1e3
    assert abs(k.mean()) < 5 * np.sqrt(770e-6 / 1e6)


def test_kick_smallness_enforced():
    with pytest.raises(KickSizeError):
        ContinuousSource.from_heating_rate(2e4, YB171, DEFAULT_TRAP, step=1e-6)


def test_emission_isotropy():
    p = _emission_projection(make_rng(3), 10**6, "isotropic")
    m = np.mean(p**2)
    se = np.std(p**2) / 1e3
    assert abs(m - 1 / 3) < 3 * se
    assert np.all(_emission_projection(make_rng(3), 10, "none") == 0)


def test_discrete_kick_mean_square_on_resonance():
    rng = make_rng(4)
    src = DiscreteSource(MODEL, DEFAULT_TRAP)
    ks = np.array([discrete_kick(rng, MODEL, DEFAULT_TRAP, 5.0, 1e-7 * i) for i in range(200000)])
    expect = (0.25 + 1 / 3) * src.kick_scale**2
    assert np.mean(np.abs(ks) ** 2) == pytest.approx(expect, rel=0.01)


def test_discrete_kick_no_momentum_transfer():
    m = ScatterModel(YB171, LaserConfig(absorption_geometry=0.0))
    assert discrete_kick(make_rng(5), m, DEFAULT_TRAP, 3.0, 1e-6, emission="none") == 0


@pytest.mark.parametrize("n_eff", [0.0, 5.0, 20.0])
def test_per_scatter_energy_matches_closed_form(n_eff):
    # on resonance the Doppler term vanishes and the exact and linearised forms coincide
    rng = make_rng(6)
    src = DiscreteSource(MODEL, DEFAULT_TRAP)
    ks = np.array([discrete_kick(rng, MODEL, DEFAULT_TRAP, n_eff, 0.0) for i in range(100000)])
    mc = np.mean(np.abs(ks) ** 2)
    c = effective_coefficients(MODEL)
    closed = (c.recoil + c.doppler * n_eff * DEFAULT_TRAP.phonon_energy) / DEFAULT_TRAP.phonon_energy
    assert mc == pytest.approx(closed, rel=0.01)


def test_zero_noise_trajectory():
    src = ContinuousSource(YB171, DEFAULT_TRAP, 0.0)
    tr = run_trajectory(ground_state(), src, 1e-3, [0, 5e-4, 1e-3], seed=7)
    assert np.all(tr.alpha == 0)


def test_trajectory_reproducible_and_accounting():
    src = DiscreteSource(MODEL.with_detuning(mhz(-5)), DEFAULT_TRAP)
    a = run_trajectory(thermal_distribution(0.4), src, 20e-6, np.linspace(0, 20e-6, 5), seed=(9, 3), record_events=True)
    b = run_trajectory(thermal_distribution(0.4), src, 20e-6, np.linspace(0, 20e-6, 5), seed=(9, 3), record_events=True)
    np.testing.assert_array_equal(a.alpha, b.alpha)
    np.testing.assert_allclose(a.n_eff, a.n_init + np.abs(a.alpha) ** 2, rtol=1e-10)
    assert np.all(np.diff(a.event_times) > 0)
    np.testing.assert_allclose(np.sum(a.kicks), a.alpha[-1], rtol=1e-10)


def test_poisson_event_counts():
    src = DiscreteSource(MODEL, DEFAULT_TRAP)
    t = 10e-6
    _, counts = simulate_alpha_sq(ground_state(), src, [t], 2000, 11)
    expect = src.event_rate * t
    assert abs(counts.mean() - expect) < 3 * np.sqrt(expect / 2000)


def test_single_zero_noise_ensemble():
    init = thermal_distribution(0.8, 60)
    res = ensemble_average(init, ContinuousSource(YB171, DEFAULT_TRAP, 0.0), [0, 1e-4], 1, 0, n_out=20)
    for p in res.populations:
        np.testing.assert_allclose(p, init.probabilities[:20], atol=1e-14)


def test_continuous_matches_bath_statistically():
    # z-scores of the trajectory mean against the exact bath populations
    src = ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP)
    t = np.linspace(0, 8e-3, 9)[1:]
    ref = np.array([bath_propagate(ground_state(), BathParams(770.0, ti)).probabilities[:2] for ti in t])
    z = []
    for seed in range(8):
        res = ensemble_average(ground_state(), src, t, 1000, seed, n_out=2)
        z.append((res.populations - ref) / res.population_se)
    z = np.array(z)
    assert np.abs(z).max() < 4.5
    # per seed the 16 z-values are strongly correlated, so test the seed means
    seed_means = z.mean(axis=(1, 2))
    assert abs(seed_means.mean()) < 3 * seed_means.std(ddof=1) / np.sqrt(seed_means.size) + 0.1


def test_continuous_slope_regression():
    src = ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP)
    t = np.linspace(0, 4e-3, 9)
    slopes = np.array([np.polyfit(t, simulate_alpha_sq(ground_state(), src, t, 4000, s)[0].mean(axis=0), 1)[0] for s in range(10)])
    # one 4000-trajectory slope has about 1.4 % spread, so 2 % holds for most seeds but not all
    assert np.mean(np.abs(slopes / 770.0 - 1) < 0.02) >= 0.6
    assert slopes.mean() == pytest.approx(770.0, rel=0.01)


def test_discrete_slope():
    src = DiscreteSource(MODEL, DEFAULT_TRAP)
    t = np.linspace(0, 20e-6, 5)
    res = ensemble_average(ground_state(), src, t, 2000, 23, n_out=2)
    slope = np.polyfit(t, res.nbar, 1)[0]
    assert slope == pytest.approx(linear_heating_rate(MODEL, DEFAULT_TRAP), rel=0.05)


def test_worker_independence():
    src = DiscreteSource(MODEL.with_detuning(mhz(-3)), DEFAULT_TRAP,
                         background=ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP))
    t = np.linspace(0, 20e-6, 3)
    a = ensemble_average(double_thermal_from_levels(0.9, 0.08), src, t, 200, 5, n_out=5, workers=1)
    b = ensemble_average(double_thermal_from_levels(0.9, 0.08), src, t, 200, 5, n_out=5, workers=3)
    np.testing.assert_array_equal(a.alpha_sq, b.alpha_sq)
    np.testing.assert_array_equal(a.populations, b.populations)


def test_zero_rate_discrete_equals_background():
    bg = ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP)
    dark = ScatterModel(YB171, LaserConfig(saturation=0.0))
    t = np.linspace(0, 50e-6, 6)
    a = ensemble_average(ground_state(), bg, t, 100, 8, n_out=3)
    b = ensemble_average(ground_state(), DiscreteSource(dark, DEFAULT_TRAP, background=bg), t, 100, 8, n_out=3)
    np.testing.assert_array_equal(a.alpha_sq, b.alpha_sq)


def test_truncation_flag():
    src = ContinuousSource.from_heating_rate(770.0, YB171, DEFAULT_TRAP)
    res = ensemble_average(fock_state(3, 40), src, [0, 8e-3], 50, 1, n_out=4)
    assert any(f.startswith("truncation_deficit") for f in res.flags)


def test_blue_runaway_raises_instead_of_nan():
    model = ScatterModel(YB171, DEFAULT_LASER).with_detuning(mhz(9))
    t = np.array([0.0, 5000.0 / scattering_rate(model)])
    with pytest.raises(OutOfRangeError, match="diverged"):
        ensemble_average(ground_state(), DiscreteSource(model, DEFAULT_TRAP), t, 20, 0, n_out=2)
