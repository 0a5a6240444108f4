"""Synthetic experiments with shot noise, and a brute-force master-equation
integrator used as an independent check on the analytic bath model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bath import BathParams, bath_propagate
from .data import BLUE_SIDEBAND, CARRIER, FlopDataset, PopulationData
from .fock import FockDistribution, thermal_distribution
from .physics import khz
from .qtt import ensemble_average
from .scattering import ScatterModel, nbar_of_t
from .thermometry import carrier_signal_two_mode, sideband_signal

# Measurement schedules used in the ambient / measurement-heating runs.
AMBIENT_DELAYS = np.linspace(0.0, 4e-3, 9)
SVD_LEVELS = 10
SIDEBAND_DURATIONS = np.linspace(0.0, 300e-6, 60)
SIDEBAND_SHOTS = 500
SIDEBAND_RABI_ETA = 2 * np.pi / 60e-6  # five ground-state sideband periods in 300 us
CARRIER_DURATIONS = np.linspace(0.0, 40e-6, 60)
CARRIER_SHOTS = 300
CARRIER_RABI = khz(150.0)  # six bare carrier periods in 40 us
EARLY_DELAYS = np.linspace(0.0, 100e-6, 11)


class TruncationError(ArithmeticError):
    """Population leaked through the top of the truncated Fock space."""


def _rhs(rho, rate, n):
    up = np.zeros_like(rho)
    down = np.zeros_like(rho)
    up[:-1] = (n[:-1] + 1) * rho[1:]
    down[1:] = n[1:] * rho[:-1]
    return rate * (up + down - (2 * n + 1) * rho)


def oracle_master_equation(
    initial: FockDistribution,
    heating_rate: float,
    t: float,
    n_max: int | None = None,
    max_quanta_step: float = 1e-3,
    leak_tol: float = 1e-8,
    min_steps: int = 1000,
) -> FockDistribution:
    """Classical RK4 integration of the high-temperature diagonal master equation.

    d rho_n/dt = rate [(n+1) rho_{n+1} + n rho_{n-1} - (2n+1) rho_n],
    with rho_{n_max+1} = 0. The step satisfies rate * h <= ``max_quanta_step``
    and there are at least ``min_steps`` steps, so that levels reached only at
    high order in rate * t are still resolved in relative terms.
    Raises :class:`TruncationError` if more than ``leak_tol`` population is
    lost through the top level.
    """
    if heating_rate < 0 or t < 0:
        raise ValueError("heating_rate and t must be >= 0")
    n_max = initial.n_max if n_max is None else n_max
    rho = initial.padded(n_max).probabilities.copy()
    x = heating_rate * t
    if x == 0:
        return FockDistribution(rho)
    steps = max(int(np.ceil(x / max_quanta_step)), min_steps)
    h = t / steps
    n = np.arange(n_max + 1, dtype=float)
    start = rho.sum()
    for _ in range(steps):
        k1 = _rhs(rho, heating_rate, n)
        k2 = _rhs(rho + 0.5 * h * k1, heating_rate, n)
        k3 = _rhs(rho + 0.5 * h * k2, heating_rate, n)
        k4 = _rhs(rho + h * k3, heating_rate, n)
        rho = rho + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    leak = start - rho.sum()
    if leak > leak_tol:
        raise TruncationError(f"leaked {leak:.3g} through n_max={n_max}; increase the truncation")
    out = FockDistribution(np.clip(rho, 0.0, None), norm_tol=1e-10)
    out.meta["leakage"] = leak
    return out


# --------------------------------------------------------------------------- truth models


@dataclass(frozen=True)
class BathTruth:
    initial: FockDistribution
    heating_rate: float

    def distributions(self, delays, seed=0):
        return [bath_propagate(self.initial, BathParams(self.heating_rate, d)) for d in delays]

    def nbar(self, delays, seed=0):
        return self.initial.mean + self.heating_rate * np.asarray(delays, float)


@dataclass(frozen=True)
class QttTruth:
    initial: FockDistribution
    source: object
    n_traj: int = 1000
    n_out: int = 40

    def _run(self, delays, seed):
        return ensemble_average(self.initial, self.source, delays, self.n_traj, seed, n_out=self.n_out)

    def distributions(self, delays, seed=0):
        res = self._run(np.asarray(delays, float), seed)
        return [FockDistribution(p, norm_tol=1e-9) for p in res.populations]

    def nbar(self, delays, seed=0):
        return self._run(np.asarray(delays, float), seed).nbar


@dataclass(frozen=True)
class ScatteringTruth:
    """Closed-form scattering-heating solution; the state is taken as thermal."""

    model: ScatterModel
    trap: object
    nbar0: float
    n_max: int = 400

    def nbar(self, delays, seed=0):
        return np.atleast_1d(nbar_of_t(self.model, self.trap, self.nbar0, np.asarray(delays, float)))

    def distributions(self, delays, seed=0):
        return [thermal_distribution(n, self.n_max) for n in self.nbar(delays)]


@dataclass(frozen=True)
class ExperimentSchedule:
    delays: np.ndarray
    kind: str = BLUE_SIDEBAND
    durations: np.ndarray = field(default_factory=lambda: SIDEBAND_DURATIONS.copy())
    shots: int | None = SIDEBAND_SHOTS
    seed: int = 0

    def __post_init__(self):
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1 (or None for analytic mode)")
        if np.any(np.asarray(self.delays) < 0):
            raise ValueError("delays must be non-negative")
        if self.kind not in (CARRIER, BLUE_SIDEBAND):
            raise ValueError(f"unknown probe kind {self.kind!r}")


@dataclass(frozen=True)
class ProbeParams:
    rabi: float = SIDEBAND_RABI_ETA / 0.104
    eta: float = 0.104
    eta_y: float = 0.112
    ratio: float = 1.48
    readout_error: float = 0.0


def _draw(rng, prob, shots):
    if shots is None:
        return prob.copy(), np.ones_like(prob)
    return rng.binomial(shots, np.clip(prob, 0.0, 1.0)).astype(float), np.full(prob.shape, float(shots))


def generate_dataset(truth, schedule: ExperimentSchedule, probe: ProbeParams) -> list[FlopDataset]:
    """One flop dataset per heating delay, with binomial shot noise.

    ``schedule.shots = None`` gives the analytic limit (counts are the exact
    probabilities with shots = 1). Delay i draws from its own stream keyed by
    (seed, i).
    """
    delays = np.asarray(schedule.delays, dtype=float)
    eps = probe.readout_error
    if schedule.kind == BLUE_SIDEBAND:
        signals = [sideband_signal(d, probe.rabi, probe.eta, schedule.durations) for d in truth.distributions(delays, schedule.seed)]
    else:
        signals = [
            carrier_signal_two_mode(n, probe.ratio, probe.rabi, probe.eta, probe.eta_y, schedule.durations)
            for n in truth.nbar(delays, schedule.seed)
        ]
    out = []
    for i, sig in enumerate(signals):
        sig = eps + (1.0 - 2.0 * eps) * np.asarray(sig)
        rng = np.random.default_rng(np.random.SeedSequence(schedule.seed, spawn_key=(i,)))
        k, n = _draw(rng, sig, schedule.shots)
        out.append(FlopDataset(schedule.durations, k, n, kind=schedule.kind))
    return out


def generate_population_data(truth, delays, levels=(0, 1), shots: int | None = SIDEBAND_SHOTS, seed: int = 0) -> PopulationData:
    """Directly sampled level populations (binomial in ``shots``) at each delay."""
    delays = np.asarray(delays, dtype=float)
    dists = truth.distributions(delays, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(10**6,)))
    rows_t, rows_l, rows_k, rows_n = [], [], [], []
    for d, dist in zip(delays, dists):
        for lv in levels:
            p = float(dist[lv]) if lv < len(dist) else 0.0
            k, n = _draw(rng, np.array([p]), shots)
            rows_t.append(d)
            rows_l.append(lv)
            rows_k.append(k[0])
            rows_n.append(n[0])
    if shots is None:
        return PopulationData(rows_t, rows_l, rows_k, 1e-3)
    return PopulationData.from_counts(rows_t, rows_l, rows_k, rows_n)
