import numpy as np
import pytest

from ionheat.bath import BathParams, bath_propagate
from ionheat.data import BLUE_SIDEBAND, CARRIER, FitError, FlopDataset
from ionheat.fock import OutOfRangeError, double_thermal_from_levels, fock_state, ground_state, thermal_distribution
from ionheat.physics import DEFAULT_LASER, DEFAULT_TRAP, YB171, mhz
from ionheat.scattering import ScatterModel, steady_state_nbar
from ionheat.synth import (
    CARRIER_DURATIONS, CARRIER_RABI, CARRIER_SHOTS, SIDEBAND_DURATIONS, BathTruth, ExperimentSchedule, ProbeParams,
    ScatteringTruth, generate_dataset,
)
from ionheat.thermometry import (
    CarrierModel, IllPosedError, carrier_signal_two_mode, debye_waller, fit_carrier_nbar, fit_thermal_from_levels,
    sideband_matrix, sideband_signal, svd_populations,
)

ETA = 0.104
RABI = 2 * np.pi / 60e-6 / ETA


# ----------------------------------------------------------------- sideband forward model


def test_sideband_trivial():
    assert sideband_signal(ground_state(), RABI, ETA, 0.0) == 0.0
    assert sideband_signal(ground_state(), RABI, ETA, np.pi / (RABI * ETA)) == pytest.approx(1.0, abs=1e-15)


def test_sideband_matches_series():
    d = thermal_distribution(0.5, 200)
    t = np.linspace(0, 300e-6, 10)
    ref = [sum(d[n] * np.sin(RABI * ETA * np.sqrt(n + 1) * ti / 2) ** 2 for n in range(201)) for ti in t]
    np.testing.assert_allclose(sideband_signal(d, RABI, ETA, t), ref, rtol=1e-12, atol=1e-15)


def _flop(p, t=SIDEBAND_DURATIONS):
    sig = sideband_signal(p, RABI, ETA, t)
    return FlopDataset(t, sig, np.ones_like(sig), kind=BLUE_SIDEBAND)


def test_svd_noiseless_ground():
    est = svd_populations(_flop(ground_state()), 8, RABI, ETA, n_bootstrap=20)
    np.testing.assert_allclose(est.point, np.eye(8)[0], atol=1e-10)
    assert est.diagnostics["residual_norm"] < 1e-10


@pytest.mark.parametrize("p", [np.array([0.5, 0.3, 0.2]), np.array([0.1, 0.2, 0.3, 0.25, 0.15])])
def test_svd_noiseless_support_recovery(p):
    full = np.zeros(10)
    full[: p.size] = p
    est = svd_populations(_flop(full), 10, RABI, ETA, n_bootstrap=20)
    np.testing.assert_allclose(est.point, full, atol=1e-8)


def test_svd_interval_invariants():
    ds = generate_dataset(BathTruth(ground_state(), 770.0), ExperimentSchedule([2e-3], seed=1), ProbeParams())[0]
    est = svd_populations(ds, 10, RABI, ETA, n_bootstrap=400, seed=2)
    assert np.all(est.low >= 0) and np.all(est.high <= 1)
    assert np.all(est.low <= est.median) and np.all(est.median <= est.high)
    assert est.n_bootstrap == 400


def test_svd_deterministic_per_seed():
    ds = generate_dataset(BathTruth(ground_state(), 770.0), ExperimentSchedule([1e-3], seed=4), ProbeParams())[0]
    a = svd_populations(ds, 10, RABI, ETA, 300, seed=9)
    b = svd_populations(ds, 10, RABI, ETA, 300, seed=9)
    np.testing.assert_array_equal(a.median, b.median)


def test_svd_ill_posed():
    with pytest.raises(IllPosedError):
        svd_populations(_flop(ground_state(), SIDEBAND_DURATIONS[:5]), 8, RABI, ETA)
    # all durations identical: rank one
    t = np.full(20, 50e-6)
    with pytest.raises(IllPosedError, match="rank"):
        svd_populations(_flop(ground_state(), t), 4, RABI, ETA)
    with pytest.raises(ValueError):
        svd_populations(FlopDataset([0, 1e-6], [0, 0], [1, 1], kind=CARRIER), 2, RABI, ETA)


def test_svd_interval_calibration_heated_state():
    # a double-thermal preparation after 2 ms of heating; p0 is far from the clipping boundary
    init = double_thermal_from_levels(0.9, 0.08)
    truth = bath_propagate(init, BathParams(770.0, 2e-3))
    hits = np.zeros(2)
    n = 100
    for seed in range(n):
        ds = generate_dataset(BathTruth(init, 770.0), ExperimentSchedule([2e-3], seed=seed), ProbeParams())[0]
        est = svd_populations(ds, 10, RABI, ETA, 500, seed=seed)
        hits += [(est.low[i] <= truth[i] <= est.high[i]) for i in (0, 1)]
    assert np.all(hits / n >= 0.55)


def test_svd_readout_error_correction():
    eps = 0.02
    sig = sideband_signal(thermal_distribution(0.3), RABI, ETA, SIDEBAND_DURATIONS)
    y = eps + (1 - 2 * eps) * sig
    ds = FlopDataset(SIDEBAND_DURATIONS, y, np.ones_like(y), kind=BLUE_SIDEBAND)
    est = svd_populations(ds, 25, RABI, ETA, 10, readout_error=eps)
    np.testing.assert_allclose(est.point[:3], thermal_distribution(0.3).probabilities[:3], atol=1e-6)


# ----------------------------------------------------------------- carrier model


def test_carrier_pi_pulse_ground():
    dw = np.exp(-0.104**2 / 2) * np.exp(-0.112**2 / 2)
    t = np.pi / (CARRIER_RABI * dw)
    assert carrier_signal_two_mode(0.0, 1.48, CARRIER_RABI, 0.104, 0.112, t) == pytest.approx(1.0, abs=1e-14)


def test_carrier_no_debye_waller():
    t = np.linspace(0, 40e-6, 17)
    np.testing.assert_allclose(
        carrier_signal_two_mode(7.0, 1.48, CARRIER_RABI, 0.0, 0.0, t), np.sin(CARRIER_RABI * t / 2) ** 2, atol=1e-9
    )


def test_carrier_against_brute_force():
    t = np.linspace(0, 40e-6, 12)
    adaptive = carrier_signal_two_mode(15.0, 1.48, CARRIER_RABI, 0.104, 0.112, t)
    brute = carrier_signal_two_mode(15.0, 1.48, CARRIER_RABI, 0.104, 0.112, t, n_max=600)
    np.testing.assert_allclose(adaptive, brute, atol=1e-8)


def test_carrier_bounds_and_single_mode_limit():
    t = np.linspace(0, 80e-6, 41)
    p = carrier_signal_two_mode(4.0, 1.48, CARRIER_RABI, 0.104, 0.112, t)
    assert np.all((p >= 0) & (p <= 1))
    px = thermal_distribution(4.0, 399).probabilities
    single = [px @ np.sin(CARRIER_RABI * ti * debye_waller(0.104, 399) / 2) ** 2 for ti in t]
    # eta_y = 0 leaves only the x-mode Debye-Waller factor (the y sum collapses to weight one)
    np.testing.assert_allclose(carrier_signal_two_mode(4.0, 1.48, CARRIER_RABI, 0.104, 0.0, t), single, atol=1e-9)


def test_carrier_truncation_ceiling():
    with pytest.raises(OutOfRangeError, match="ceiling"):
        carrier_signal_two_mode(5000.0, 1.48, CARRIER_RABI, 0.104, 0.112, [1e-6])


@pytest.mark.parametrize("nbar", [0.0, 0.5, 15.0, 40.0])
def test_fast_model_matches_exact(nbar):
    m = CarrierModel(0.104, 0.112, 1.48)
    t = CARRIER_DURATIONS
    np.testing.assert_allclose(m(nbar, CARRIER_RABI, t), carrier_signal_two_mode(nbar, 1.48, CARRIER_RABI, 0.104, 0.112, t), atol=5e-8)


# ----------------------------------------------------------------- carrier fit


class _Const:
    def __init__(self, n):
        self.n = n

    def nbar(self, delays, seed=0):
        return np.full(len(delays), self.n)


def _carrier_data(nbar, seed, shots=CARRIER_SHOTS):
    sched = ExperimentSchedule([0.0], kind=CARRIER, durations=CARRIER_DURATIONS, shots=shots, seed=seed)
    return generate_dataset(_Const(nbar), sched, ProbeParams(rabi=CARRIER_RABI))[0]


def test_carrier_fit_noiseless_ground():
    fit = fit_carrier_nbar(_carrier_data(0.0, 0, shots=None), 0.104, 0.112)
    assert fit["rabi"] == pytest.approx(CARRIER_RABI, rel=1e-6)
    assert fit["nbar_x"] == pytest.approx(0.0, abs=1e-5)


def test_carrier_fit_statistical():
    hits = 0
    for seed in range(10):
        fit = fit_carrier_nbar(_carrier_data(15.0, seed), 0.104, 0.112)
        hits += abs(fit["nbar_x"] - 15.0) <= 1.5
        assert fit.uncertainties["nbar_x"] > 0
    assert hits >= 9


def test_carrier_fit_objective_monotone_and_stationary():
    fit = fit_carrier_nbar(_carrier_data(15.0, 3), 0.104, 0.112)
    for trace in fit.diagnostics["objective_traces"]:
        assert np.all(np.diff(trace) <= 1e-12 * max(1.0, trace[0]))
    assert fit.diagnostics["scaled_gradient_norm"] < 1e-2
    assert fit.converged


def test_carrier_fit_preconditions():
    short = FlopDataset(CARRIER_DURATIONS[:5], np.zeros(5), np.full(5, 10), kind=CARRIER)
    with pytest.raises(FitError):
        fit_carrier_nbar(short, 0.104, 0.112)


def test_carrier_fit_doppler_equilibrium():
    # long detection at red detuning: the flop from the equilibrium state fits to the Doppler limit
    model = ScatterModel(YB171, DEFAULT_LASER).with_detuning(mhz(-11))
    truth = ScatteringTruth(model, DEFAULT_TRAP, 0.0)
    sched = ExperimentSchedule([20e-3], kind=CARRIER, durations=CARRIER_DURATIONS, shots=None)
    ds = generate_dataset(truth, sched, ProbeParams(rabi=CARRIER_RABI))[0]
    fit = fit_carrier_nbar(ds, 0.104, 0.112)
    expected = truth.nbar([20e-3])[0]
    assert fit["nbar_x"] == pytest.approx(expected, rel=1e-3)
    assert expected == pytest.approx(steady_state_nbar(model, DEFAULT_TRAP), rel=1e-3)


# ----------------------------------------------------------------- thermal fit


def test_thermal_fit_examples():
    assert fit_thermal_from_levels([0.5, 0.25, 0.125])["nbar"] == pytest.approx(1.0, rel=1e-8)
    assert fit_thermal_from_levels([1.0, 0.0, 0.0])["nbar"] == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(FitError):
        fit_thermal_from_levels([0.0, 0.0, 0.0], [0.1, 0.1, 0.1])
    with pytest.raises(FitError):
        fit_thermal_from_levels([0.5], [0.1])


def test_thermal_fit_weighted_uncertainty():
    p = thermal_distribution(2.0).probabilities[:3]
    fit = fit_thermal_from_levels(p, [0.01, 0.01, 0.01])
    assert fit["nbar"] == pytest.approx(2.0, rel=1e-8)
    assert 0 < fit.uncertainties["nbar"] < 1
