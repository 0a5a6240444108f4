"""Motional heating of a trapped ion: reservoir and scattering models,
trajectory simulations, and sideband/carrier thermometry."""

__version__ = "0.1.0"

from .bath import BathParams, bath_nbar, bath_propagate, cumulative_nbar_estimate, fit_bath_rate
from .data import BLUE_SIDEBAND, CARRIER, FitError, FitResult, FlopDataset, HeatingCurve, PopulationData, PopulationEstimate
from .fock import (
    DoubleThermalConstraint,
    FockDistribution,
    displaced_fock_prob,
    double_thermal,
    double_thermal_from_levels,
    fock_state,
    ground_state,
    thermal_distribution,
)
from .physics import DEFAULT_LASER, DEFAULT_TRAP, YB171, IonSpecies, LaserConfig, TrapConfig, khz, mhz
from .qtt import ContinuousSource, DiscreteSource, ensemble_average, run_trajectory
from .scattering import ScatterModel, detuning_scan, effective_coefficients, nbar_of_t, scattering_rate, steady_state_nbar
from .synth import ExperimentSchedule, generate_dataset, oracle_master_equation
from .thermometry import carrier_signal_two_mode, fit_carrier_nbar, fit_thermal_from_levels, sideband_signal, svd_populations
