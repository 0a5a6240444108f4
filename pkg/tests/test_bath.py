import numpy as np
import pytest

from ionheat.bath import BathParams, bath_levels, bath_nbar, bath_propagate, cumulative_nbar_estimate, fit_bath_rate
from ionheat.data import DegenerateDataError, PopulationData
from ionheat.fock import double_thermal_from_levels, fock_state, ground_state, thermal_distribution
from ionheat.synth import AMBIENT_DELAYS, BathTruth, generate_population_data, oracle_master_equation


def test_zero_duration_is_identity():
    init = double_thermal_from_levels(0.9, 0.08)
    out = bath_propagate(init, BathParams(770.0, 0.0))
    np.testing.assert_array_equal(out.probabilities, init.probabilities)


@pytest.mark.parametrize("x", [0.01, 0.5, 2.0, 3.0])
def test_ground_state_goes_thermal(x):
    out = bath_propagate(ground_state(), BathParams(1000.0, x / 1000.0))
    np.testing.assert_allclose(out.probabilities, thermal_distribution(x).probabilities, rtol=1e-11, atol=1e-300)
    assert out[0] == pytest.approx(1.0 / (1.0 + x), rel=1e-13)


def test_ambient_reference_point():
    out = bath_propagate(ground_state(), BathParams(770.0, 1e-3))
    assert out[0] == pytest.approx(1 / 1.77, rel=1e-12)


def test_nbar_linear():
    assert bath_nbar(ground_state(), BathParams(770.0, 2e-3)) == pytest.approx(1.54)
    init = thermal_distribution(0.3)
    assert bath_nbar(init, BathParams(0.0, 5.0)) == pytest.approx(init.mean)
    for init in (fock_state(4), double_thermal_from_levels(0.9, 0.08)):
        out = bath_propagate(init, BathParams(500.0, 4e-3))
        assert out.mean - init.mean == pytest.approx(2.0, rel=1e-6)


def test_conservation_and_deficit():
    out = bath_propagate(thermal_distribution(2.0), BathParams(1000.0, 3e-3))
    assert out.meta["truncation_deficit"] < 1e-6
    assert out.total >= 1 - out.meta["truncation_deficit"] - 1e-15


def test_truncation_warning_attached():
    out = bath_propagate(ground_state(30), BathParams(1000.0, 10e-3))
    assert out.meta["truncation_deficit"] > 1e-6 and "warning" in out.meta


@pytest.mark.parametrize("init", [ground_state(), thermal_distribution(1.0), fock_state(3), double_thermal_from_levels(0.9, 0.08)])
def test_semigroup(init):
    a = bath_propagate(bath_propagate(init, BathParams(1.0, 0.7)), BathParams(1.0, 1.1))
    b = bath_propagate(init, BathParams(1.0, 1.8))
    np.testing.assert_allclose(a.probabilities[:30], b.probabilities[:30], rtol=1e-8)


@pytest.mark.parametrize("init", [ground_state(), thermal_distribution(0.5), fock_state(3), fock_state(8)])
@pytest.mark.parametrize("x", [0.02, 1.0, 3.0])
def test_against_master_equation(init, x):
    ref = oracle_master_equation(init, 1.0, x)
    out = bath_levels(init, x, np.arange(10))
    np.testing.assert_allclose(out, ref.probabilities[:10], rtol=1e-6)


def _noiseless(rate, init, delays=AMBIENT_DELAYS, levels=(0, 1)):
    return generate_population_data(BathTruth(init, rate), delays, levels, shots=None)


def test_fit_noiseless_recovery():
    init = double_thermal_from_levels(0.9, 0.08)
    fit = fit_bath_rate(_noiseless(500.0, init), init)
    assert fit["heating_rate"] == pytest.approx(500.0, rel=1e-6)
    assert fit.converged


def test_fit_statistical_round_trip():
    init = double_thermal_from_levels(0.9, 0.08)
    hits = 0
    for seed in range(100):
        data = generate_population_data(BathTruth(init, 770.0), AMBIENT_DELAYS, shots=500, seed=seed)
        fit = fit_bath_rate(data, init)
        hits += abs(fit["heating_rate"] - 770.0) <= 3 * fit.uncertainties["heating_rate"]
    assert hits >= 95


def test_fit_unweighted_mode_runs():
    init = ground_state()
    fit = fit_bath_rate(_noiseless(770.0, init), init, weighted=False)
    assert fit["heating_rate"] == pytest.approx(770.0, rel=1e-6)


@pytest.mark.parametrize(
    "data",
    [
        PopulationData([1e-3, 1e-3], [0, 1], [0.6, 0.2], 0.01),
        PopulationData([0.0, 1e-3, 2e-3], [0, 0, 0], [0.5, 0.5, 0.5], 0.01),
    ],
)
def test_fit_degenerate(data):
    with pytest.raises(DegenerateDataError):
        fit_bath_rate(data, ground_state())


def test_cumulative_constant_rate_is_linear():
    init = ground_state()
    curve = cumulative_nbar_estimate(_noiseless(770.0, init), init)
    np.testing.assert_allclose(curve.meta["rates"][1:], 770.0, rtol=1e-6)
    np.testing.assert_allclose(curve.values, 770.0 * curve.times, rtol=1e-6, atol=1e-12)


def test_cumulative_two_segment():
    init = ground_state()
    t = np.linspace(0, 8e-3, 17)
    rows_t, rows_l, vals = [], [], []
    for ti in t:
        x = 500 * ti if ti <= 4e-3 else 500 * 4e-3 + 1000 * (ti - 4e-3)
        p = bath_levels(init, x, [0, 1])
        rows_t += [ti, ti]
        rows_l += [0, 1]
        vals += list(p)
    data = PopulationData(rows_t, rows_l, vals, 0.01)
    curve = cumulative_nbar_estimate(data, init)
    early = curve.meta["rates"][1:9]
    np.testing.assert_allclose(early, 500.0, rtol=1e-4)
    assert curve.meta["rates"][-1] > 520  # pulled up by the faster second segment


def test_cumulative_workers_identical():
    init = double_thermal_from_levels(0.9, 0.08)
    data = generate_population_data(BathTruth(init, 770.0), AMBIENT_DELAYS, shots=500, seed=3)
    a = cumulative_nbar_estimate(data, init, workers=1)
    b = cumulative_nbar_estimate(data, init, workers=4)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.ci_high, b.ci_high)
