"""Physical constants and experiment parameter blocks.

All frequencies are angular (rad/s). Helpers ``mhz`` / ``khz`` convert a
cyclic frequency to rad/s so that ``2*pi`` never has to be typed by hand.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as sc

HBAR = sc.hbar
E_CHARGE = sc.e
AMU = sc.atomic_mass
TWO_PI = 2.0 * np.pi


def mhz(f: float) -> float:
    """Cyclic frequency in MHz -> angular frequency in rad/s."""
    return TWO_PI * f * 1e6


def khz(f: float) -> float:
    return TWO_PI * f * 1e3


@dataclass(frozen=True)
class IonSpecies:
    """Atomic properties of the ion. The wavevector is derived from the wavelength."""

    mass: float
    transition_wavelength: float
    natural_linewidth: float
    zeeman_splitting: float
    name: str = "ion"

    def __post_init__(self):
        for field in ("mass", "transition_wavelength", "natural_linewidth", "zeeman_splitting"):
            val = getattr(self, field)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"IonSpecies.{field} must be finite and > 0, got {val!r}")

    @property
    def wavevector(self) -> float:
        return TWO_PI / self.transition_wavelength

    @property
    def recoil_energy(self) -> float:
        """Single-photon recoil energy hbar^2 k^2 / 2m in joules."""
        return (HBAR * self.wavevector) ** 2 / (2.0 * self.mass)


@dataclass(frozen=True)
class TrapConfig:
    secular_frequency: float
    lamb_dicke_x: float = 0.104
    lamb_dicke_y: float = 0.112
    mode_frequency_ratio: float = 1.48

    def __post_init__(self):
        if not (np.isfinite(self.secular_frequency) and self.secular_frequency > 0):
            raise ValueError("TrapConfig.secular_frequency must be > 0")
        for field in ("lamb_dicke_x", "lamb_dicke_y"):
            eta = getattr(self, field)
            if not 0 < eta < 1:
                raise ValueError(f"TrapConfig.{field} must lie in (0, 1), got {eta!r}")
        if not self.mode_frequency_ratio > 0:
            raise ValueError("TrapConfig.mode_frequency_ratio must be > 0")

    @property
    def phonon_energy(self) -> float:
        return HBAR * self.secular_frequency


@dataclass(frozen=True)
class LaserConfig:
    saturation: float = 1.27
    detuning: float = 0.0
    absorption_geometry: float = 0.25
    scatter_duration: float = 10e-9

    def __post_init__(self):
        if not (np.isfinite(self.saturation) and self.saturation >= 0):
            raise ValueError("LaserConfig.saturation must be >= 0")
        if not np.isfinite(self.detuning):
            raise ValueError("LaserConfig.detuning must be finite")
        if not 0.0 <= self.absorption_geometry <= 1.0:
            raise ValueError("LaserConfig.absorption_geometry must lie in [0, 1]")
        if not self.scatter_duration > 0:
            raise ValueError("LaserConfig.scatter_duration must be > 0")


YB171 = IonSpecies(
    mass=170.936323 * AMU,
    transition_wavelength=369.5e-9,
    natural_linewidth=mhz(19.6),
    zeeman_splitting=mhz(5.288),
    name="171Yb+",
)

DEFAULT_TRAP = TrapConfig(secular_frequency=mhz(1.09))
DEFAULT_LASER = LaserConfig()


def heating_rate_from_field_noise(spectral_density: float, species: IonSpecies, trap: TrapConfig) -> float:
    """Heating rate (quanta/s) produced by single-sided field noise S_E at the trap frequency."""
    return E_CHARGE**2 * spectral_density / (4.0 * species.mass * HBAR * trap.secular_frequency)


def field_noise_from_heating_rate(rate: float, species: IonSpecies, trap: TrapConfig) -> float:
    """Inverse of :func:`heating_rate_from_field_noise`, in V^2/m^2/Hz."""
    return rate * 4.0 * species.mass * HBAR * trap.secular_frequency / E_CHARGE**2
