"""Photon scattering rate for 171Yb+ and the semiclassical recoil-heating /
Doppler-cooling energy equation with its closed-form solution."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import HeatingCurve
from .physics import HBAR, IonSpecies, LaserConfig, TrapConfig, mhz

ISOTROPIC_EMISSION = 1.0 / 3.0


class SingularModelError(ValueError):
    """The rate model is undefined for the given constants (zero Zeeman splitting)."""


@dataclass(frozen=True)
class ScatterModel:
    species: IonSpecies
    laser: LaserConfig
    emission_geometry: float = ISOTROPIC_EMISSION

    def __post_init__(self):
        if self.species.zeeman_splitting == 0:
            raise SingularModelError("zeeman_splitting = 0 makes the modified saturation singular")

    @property
    def modified_saturation(self) -> float:
        return modified_saturation(self)

    @property
    def rate(self) -> float:
        return scattering_rate(self)

    def with_detuning(self, detuning: float, saturation: float | None = None) -> "ScatterModel":
        laser = replace(self.laser, detuning=detuning)
        if saturation is not None:
            laser = replace(laser, saturation=saturation)
        return replace(self, laser=laser)


def modified_saturation(model: ScatterModel) -> float:
    """Zeeman-structure correction s' entering the 171Yb+ rate."""
    g = model.species.natural_linewidth
    db = model.species.zeeman_splitting
    if db == 0:
        raise SingularModelError("zeeman_splitting = 0")
    s = model.laser.saturation
    return (s * g / db) ** 2 / 216.0 + (8.0 / 3.0) * (db / g) ** 2


def _doppler_denominator(model: ScatterModel) -> float:
    g = model.species.natural_linewidth
    return g**2 * (1.0 + modified_saturation(model)) + 4.0 * model.laser.detuning**2


def scattering_rate(model: ScatterModel) -> float:
    """Photon scattering rate in 1/s."""
    g = model.species.natural_linewidth
    db = model.species.zeeman_splitting
    if db == 0:
        raise SingularModelError("zeeman_splitting = 0")
    s = model.laser.saturation
    delta = model.laser.detuning
    denom = 1.0 + (s * g / db) ** 2 / 216.0 + (8.0 / 3.0) * (db / g) ** 2 + (2.0 * delta / g) ** 2
    return g * (s / 18.0) / denom


@dataclass(frozen=True)
class EffectiveCoefficients:
    rate: float  # Gamma_0, 1/s
    recoil: float  # R, J per scattering event
    doppler: float  # dimensionless, sign of the detuning


def effective_coefficients(model: ScatterModel) -> EffectiveCoefficients:
    """(Gamma_0, R, D) of dE/dt = Gamma_0 (R + D E).

    D is dimensionless (fractional energy change per scattering event) and
    carries the sign of the detuning, so red detuning damps the energy.
    """
    sp, laser = model.species, model.laser
    g = sp.natural_linewidth
    gamma0 = g * (laser.saturation / 18.0) / (1.0 + modified_saturation(model) + 4.0 * laser.detuning**2 / g**2)
    recoil = (laser.absorption_geometry + model.emission_geometry) * sp.recoil_energy
    doppler = 8.0 * laser.detuning * HBAR * laser.absorption_geometry * sp.wavevector**2 / (sp.mass * _doppler_denominator(model))
    return EffectiveCoefficients(gamma0, recoil, doppler)


def linear_heating_rate(model: ScatterModel, trap: TrapConfig) -> float:
    """Initial heating rate Gamma_0 R / (hbar omega) in quanta/s."""
    c = effective_coefficients(model)
    return c.rate * c.recoil / trap.phonon_energy


def steady_state_nbar(model: ScatterModel, trap: TrapConfig) -> float:
    """Doppler equilibrium -R/(D hbar omega); infinite unless the detuning is negative."""
    c = effective_coefficients(model)
    if c.doppler >= 0:
        return np.inf
    return -c.recoil / (c.doppler * trap.phonon_energy)


def doppler_limit_closed_form(model: ScatterModel, trap: TrapConfig) -> float:
    """Equilibrium nbar from the textbook expression with |detuning| substituted."""
    g = model.species.natural_linewidth
    fx = model.laser.absorption_geometry
    a = abs(model.laser.detuning)
    if a == 0:
        return np.inf
    sp = modified_saturation(model)
    return g / (8 * trap.secular_frequency) * (1 + model.emission_geometry / fx) * (g * (1 + sp) / (2 * a) + 2 * a / g)


def nbar_of_t(model: ScatterModel, trap: TrapConfig, nbar0: float, t):
    """Mean phonon number under continuous scattering.

    Solves dE/dt = Gamma_0 (R + D E). The form E0 e^u + Gamma_0 R t (e^u - 1)/u,
    u = Gamma_0 D t, is algebraically the textbook solution but stays accurate
    as D -> 0; D = 0 exactly takes the linear branch.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    c = effective_coefficients(model)
    e0 = nbar0 * trap.phonon_energy
    if c.doppler == 0.0:
        energy = e0 + c.rate * c.recoil * t
    else:
        u = c.rate * c.doppler * t
        with np.errstate(invalid="ignore"):
            growth = np.where(u == 0, 1.0, np.expm1(u) / np.where(u == 0, 1.0, u))
        energy = e0 * np.exp(u) + c.rate * c.recoil * t * growth
    out = energy / trap.phonon_energy
    return out if out.ndim else float(out)


def doppler_shift_rms(species: IonSpecies, trap: TrapConfig, nbar) -> np.ndarray:
    """r.m.s. Doppler shift k v_rms (rad/s) for energy nbar*hbar*omega = m <v^2>."""
    v = np.sqrt(np.asarray(nbar, float) * trap.phonon_energy / species.mass)
    return species.wavevector * v


def doppler_valid(species: IonSpecies, trap: TrapConfig, nbar) -> np.ndarray:
    """True where the linearised Doppler treatment holds (k v_rms <= gamma / 4)."""
    return doppler_shift_rms(species, trap, nbar) <= species.natural_linewidth / 4.0


def detuning_scan(
    model: ScatterModel,
    detunings,
    trap: TrapConfig,
    nbar0: float,
    grid,
    saturations=None,
    events_axis: bool = True,
    band: float = mhz(2.0),
    nbar_ceiling: float | None = None,
) -> list[HeatingCurve]:
    """Solutions of the energy equation for several detunings.

    With ``events_axis`` the grid is in scattering events Gamma*t and each
    curve's ``times`` hold that axis; the matching physical times are in
    ``meta['t']``. The band is the envelope over detuning -/+ ``band``.
    """
    detunings = list(detunings)
    if not detunings:
        raise ValueError("need at least one detuning")
    grid = np.asarray(grid, dtype=float)
    if saturations is None:
        saturations = [model.laser.saturation] * len(detunings)
    saturations = list(saturations)
    if len(saturations) != len(detunings):
        raise ValueError("one saturation per detuning required")

    curves = []
    for delta, s in zip(detunings, saturations):
        m = model.with_detuning(delta, s)
        gamma = scattering_rate(m)
        if events_axis:
            if gamma == 0:
                raise ValueError("zero scattering rate cannot be put on an events axis")
            t = grid / gamma
        else:
            t = grid
        n = np.atleast_1d(nbar_of_t(m, trap, nbar0, t))
        if band > 0:
            alt = [np.atleast_1d(nbar_of_t(m.with_detuning(delta + sgn * band), trap, nbar0, t)) for sgn in (-1, 1)]
            lo = np.minimum(n, np.minimum(*alt))
            hi = np.maximum(n, np.maximum(*alt))
        else:
            lo = hi = n
        flags = []
        if not np.all(doppler_valid(m.species, trap, n)):
            flags.append("doppler_linearization_invalid")
        if nbar_ceiling is not None and np.any(n > nbar_ceiling):
            flags.append("exceeds_truncation_ceiling")
        if delta > 0:
            flags.append("unbounded_growth")
        curves.append(
            HeatingCurve(
                grid, n, lo, hi,
                label=f"detuning {delta / mhz(1):+.3g} MHz",
                flags=flags,
                meta={"detuning": delta, "saturation": s, "rate": gamma, "t": t},
            )
        )
    return curves
