"""Semiclassical quantum-trajectory Monte Carlo for motional heating.

A trajectory is a classical phase-space displacement alpha that receives
random kicks, either Gaussian kicks from a fluctuating electric field on a
fixed time grid, or photon-recoil kicks at Poisson-distributed scattering
events. Level populations are recovered by displacing the initial Fock
mixture by |alpha|.

Every trajectory draws from its own stream, keyed by (master_seed, index),
so ensembles are reproducible regardless of chunking or worker count.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .fock import FockDistribution, OutOfRangeError, displaced_populations, fock_state
from .physics import E_CHARGE, HBAR, IonSpecies, TrapConfig, field_noise_from_heating_rate, heating_rate_from_field_noise
from .scattering import ScatterModel, effective_coefficients, modified_saturation

log = logging.getLogger(__name__)

MAX_KICK_VARIANCE = 0.01
CHUNK = 64


class KickSizeError(ValueError):
    """Continuous-noise step too coarse: mean |alpha_k|^2 per step must stay << 1."""


def make_rng(master_seed: int, index: int | None = None) -> np.random.Generator:
    """Independent generator for trajectory ``index`` of ensemble ``master_seed``."""
    key = () if index is None else (int(index),)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


@dataclass(frozen=True)
class ContinuousSource:
    species: IonSpecies
    trap: TrapConfig
    spectral_density: float
    step: float = 1e-6

    def __post_init__(self):
        if not self.spectral_density >= 0:
            raise ValueError("spectral_density must be >= 0")
        if not self.step > 0:
            raise ValueError("step must be > 0")
        if self.kick_variance >= MAX_KICK_VARIANCE:
            raise KickSizeError(
                f"<|alpha_k|^2> = {self.kick_variance:.3g} per step; reduce step below "
                f"{MAX_KICK_VARIANCE / self.heating_rate:.3g} s"
            )

    @classmethod
    def from_heating_rate(cls, rate, species, trap, step=1e-6):
        return cls(species, trap, field_noise_from_heating_rate(rate, species, trap), step)

    @property
    def heating_rate(self) -> float:
        return heating_rate_from_field_noise(self.spectral_density, self.species, self.trap)

    @property
    def kick_variance(self) -> float:
        return self.heating_rate * self.step


@dataclass(frozen=True)
class DiscreteSource:
    """Photon scattering. ``emission='none'`` suppresses the spontaneous-emission kick."""

    model: ScatterModel
    trap: TrapConfig
    emission: Literal["isotropic", "none"] = "isotropic"
    background: ContinuousSource | None = None

    def __post_init__(self):
        if self.emission not in ("isotropic", "none"):
            raise ValueError(f"unknown emission sampler {self.emission!r}")

    @property
    def event_rate(self) -> float:
        return effective_coefficients(self.model).rate

    @property
    def kick_scale(self) -> float:
        """hbar k / sqrt(2 m omega hbar); its square is E_recoil / (hbar omega)."""
        sp = self.model.species
        return sp.wavevector * np.sqrt(HBAR / (2.0 * sp.mass * self.trap.secular_frequency))

    @property
    def doppler_factor(self) -> float:
        """Coefficient c of n in the absorption term sqrt(f_x) (1 + c n)."""
        g = self.model.species.natural_linewidth
        delta = self.model.laser.detuning
        return 8.0 * delta * self.trap.secular_frequency / (g**2 * (1.0 + modified_saturation(self.model)) + 4.0 * delta**2)


def continuous_kick(rng, spectral_density, step, omega, mass, size=None):
    """Circular complex Gaussian kick with <|alpha_k|^2> = e^2 S_E dt / (4 m hbar omega)."""
    if not step > 0:
        raise ValueError("step must be > 0")
    var = E_CHARGE**2 * spectral_density * step / (4.0 * mass * HBAR * omega)
    if var == 0:
        return 0j if size is None else np.zeros(size, complex)
    z = rng.standard_normal((2,) if size is None else (2, size))
    a = np.sqrt(var / 2.0) * (z[0] + 1j * z[1])
    return complex(a) if size is None else a


def _emission_projection(rng, size, emission):
    if emission == "none":
        return np.zeros(size)
    cos_t = rng.uniform(-1.0, 1.0, size)
    phi = rng.uniform(0.0, 2.0 * np.pi, size)
    return np.sqrt(1.0 - cos_t**2) * np.cos(phi)


def discrete_kick(rng, model: ScatterModel, trap: TrapConfig, n_eff: float, t: float, emission="isotropic") -> complex:
    """Phase-space kick from one absorption + emission pair at time ``t``.

    Absorption and emission share the phase e^{i omega t}; the emission
    projection sin(theta) cos(phi) is drawn isotropically.
    """
    if n_eff < 0:
        raise ValueError("n_eff must be >= 0")
    src = DiscreteSource(model, trap, emission)
    proj = _emission_projection(rng, 1, emission)[0]
    amp = np.sqrt(model.laser.absorption_geometry) * (1.0 + src.doppler_factor * n_eff) + proj
    return complex(1j * np.exp(1j * trap.secular_frequency * t) * src.kick_scale * amp)


@dataclass
class Trajectory:
    """Displacement history of one trajectory at the requested sample times."""

    seed: tuple
    sample_times: np.ndarray
    alpha: np.ndarray
    n_init: float
    event_times: np.ndarray | None = None
    kicks: np.ndarray | None = None

    @property
    def n_eff(self) -> np.ndarray:
        return self.n_init + np.abs(self.alpha) ** 2

    @property
    def n_events(self) -> int | None:
        return None if self.event_times is None else int(self.event_times.size)


def _check_times(sample_times, t_final):
    s = np.asarray(sample_times, dtype=float)
    if np.any(s < 0) or np.any(s > t_final * (1 + 1e-12)):
        raise ValueError("sample_times must lie within [0, t_final]")
    return s


def _continuous_path(rng, src: ContinuousSource, t_final, sample_times):
    n_steps = int(np.ceil(t_final / src.step - 1e-9))
    kicks = continuous_kick(rng, src.spectral_density, src.step, src.trap.secular_frequency, src.species.mass, n_steps)
    cum = np.concatenate([[0j], np.cumsum(kicks)])
    idx = np.minimum(np.floor(sample_times / src.step + 1e-9).astype(int), n_steps)
    return cum, idx


def _draw_events(rng, src: DiscreteSource, t_final):
    n = rng.poisson(src.event_rate * t_final)
    times = np.sort(rng.uniform(0.0, t_final, n))
    proj = _emission_projection(rng, n, src.emission)
    return times, proj


def _discrete_batch(srcs_draws, src: DiscreteSource, sample_times, n_init, bg_paths):
    """Advance a batch of trajectories event by event (vectorised across the batch)."""
    b = len(srcs_draws)
    counts = np.array([d[0].size for d in srcs_draws])
    e_max = int(counts.max()) if b else 0
    times = np.full((b, e_max), np.inf)
    proj = np.zeros((b, e_max))
    for i, (t, p) in enumerate(srcs_draws):
        times[i, : t.size] = t
        proj[i, : p.size] = p
    omega = src.trap.secular_frequency
    sqf = np.sqrt(src.model.laser.absorption_geometry)
    c = src.doppler_factor
    scale = src.kick_scale
    valid = np.isfinite(times)
    phase = np.where(valid, 1j * np.exp(1j * omega * np.where(valid, times, 0.0)) * scale, 0.0)

    if bg_paths is not None:
        bg_step = src.background.step
        bg_cum = np.stack([p for p in bg_paths])
        n_bg = bg_cum.shape[1] - 1

        def bg_at(tt):
            k = np.minimum(np.floor(np.where(np.isfinite(tt), tt, 0.0) / bg_step + 1e-9).astype(int), n_bg)
            return np.take_along_axis(bg_cum, k, axis=1)
    else:
        bg_at = None

    if c == 0.0:
        kicks = phase * (sqf + proj)
        hist = np.concatenate([np.zeros((b, 1), complex), np.cumsum(kicks, axis=1)], axis=1)
    else:
        hist = np.zeros((b, e_max + 1), complex)
        alpha = np.zeros(b, complex)
        # runaway growth is caught downstream as non-finite |alpha|^2
        with np.errstate(over="ignore", invalid="ignore"):
            for e in range(e_max):
                tot = alpha
                if bg_at is not None:
                    tot = alpha + bg_at(times[:, e : e + 1])[:, 0]
                n_eff = n_init + np.abs(tot) ** 2
                alpha = alpha + phase[:, e] * (sqf * (1.0 + c * n_eff) + proj[:, e])
                hist[:, e + 1] = alpha
    # events with t_k <= sample time have been applied
    idx = np.stack([np.searchsorted(times[i, : counts[i]], sample_times, side="right") for i in range(b)]) if b else np.zeros((0, sample_times.size), int)
    alpha_s = np.take_along_axis(hist, idx, axis=1)
    if bg_paths is not None:
        alpha_s = alpha_s + bg_at(np.broadcast_to(sample_times, (b, sample_times.size)))
    return alpha_s, times, hist, counts


def _initial_mean(initial) -> float:
    if isinstance(initial, FockDistribution):
        return initial.mean
    return float(initial)


def run_trajectory(initial, source, t_final: float, sample_times, seed, record_events: bool = False) -> Trajectory:
    """Simulate one trajectory; deterministic for a given ``seed``.

    ``seed`` is an int or a ``(master_seed, index)`` pair.
    """
    sample_times = _check_times(sample_times, t_final)
    master, index = (seed, None) if np.isscalar(seed) else seed
    rng = make_rng(master, index)
    n_init = _initial_mean(initial)
    return _simulate(rng, source, t_final, sample_times, n_init, record_events, (master, index))


def _simulate(rng, source, t_final, sample_times, n_init, record_events, seed_key):
    if isinstance(source, ContinuousSource):
        cum, idx = _continuous_path(rng, source, t_final, sample_times)
        ev_t = np.arange(1, cum.size) * source.step if record_events else None
        return Trajectory(seed_key, sample_times, cum[idx], n_init, ev_t, np.diff(cum) if record_events else None)
    if isinstance(source, DiscreteSource):
        # background first, so a zero scattering rate reproduces the continuous-only path
        bg = None
        if source.background is not None:
            bg = [_continuous_path(rng, source.background, t_final, sample_times)[0]]
        draws = _draw_events(rng, source, t_final)
        alpha_s, times, hist, counts = _discrete_batch([draws], source, sample_times, n_init, bg)
        kicks = np.diff(hist[0, : counts[0] + 1]) if record_events else None
        return Trajectory(seed_key, sample_times, alpha_s[0], n_init, draws[0] if record_events else None, kicks)
    raise TypeError(f"unsupported noise source {type(source).__name__}")


def _run_chunk(args):
    source, t_final, sample_times, n_init, master_seed, indices = args
    if isinstance(source, DiscreteSource):
        draws, bgs = [], []
        for i in indices:
            rng = make_rng(master_seed, i)
            if source.background is not None:
                bgs.append(_continuous_path(rng, source.background, t_final, sample_times)[0])
            draws.append(_draw_events(rng, source, t_final))
        alpha_s, _, _, counts = _discrete_batch(draws, source, sample_times, n_init, bgs or None)
        return alpha_s, counts
    out = np.empty((len(indices), sample_times.size), complex)
    for row, i in enumerate(indices):
        out[row] = _simulate(make_rng(master_seed, i), source, t_final, sample_times, n_init, False, None).alpha
    return out, None


@dataclass
class EnsembleResult:
    times: np.ndarray
    populations: np.ndarray  # (time, level) trajectory mean
    population_se: np.ndarray
    nbar: np.ndarray
    nbar_se: np.ndarray
    n_traj: int
    alpha_sq: np.ndarray = field(repr=False)  # (trajectory, time)
    event_counts: np.ndarray | None = field(default=None, repr=False)
    flags: list = field(default_factory=list)

    @property
    def distributions(self) -> list[FockDistribution]:
        return [FockDistribution(p, norm_tol=1e-9) for p in self.populations]

    @property
    def truncation_deficit(self) -> np.ndarray:
        return 1.0 - self.populations.sum(axis=1)


def simulate_alpha_sq(initial, source, t_grid, n_traj, master_seed, workers=1):
    """|alpha_total|^2 for every trajectory (rows) and grid time (columns)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be non-decreasing")
    t_final = float(t_grid.max()) if t_grid.size else 0.0
    n_init = _initial_mean(initial)
    jobs = [
        (source, t_final, t_grid, n_init, master_seed, list(range(lo, min(lo + CHUNK, n_traj))))
        for lo in range(0, n_traj, CHUNK)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    alpha = np.concatenate([p[0] for p in parts], axis=0)
    counts = None
    if parts[0][1] is not None:
        counts = np.concatenate([p[1] for p in parts])
    return np.abs(alpha) ** 2, counts


def ensemble_average(
    initial: FockDistribution,
    source,
    t_grid,
    n_traj: int,
    master_seed: int,
    n_out: int = 40,
    workers: int = 1,
    deficit_flag: float = 1e-6,
) -> EnsembleResult:
    """Trajectory-averaged populations of levels 0..n_out-1 and mean phonon number.

    The per-trajectory phonon number is nbar(0) + |alpha|^2 (exact for a
    coherent displacement), so ``nbar`` carries no truncation error.
    """
    if isinstance(initial, int):
        initial = fock_state(initial)
    t_grid = np.asarray(t_grid, dtype=float)
    a2, counts = simulate_alpha_sq(initial, source, t_grid, n_traj, master_seed, workers)
    if not np.all(np.isfinite(a2)):
        first = t_grid[np.argmax(~np.all(np.isfinite(a2), axis=0))]
        raise OutOfRangeError(f"trajectories diverged (runaway growth) by t = {first:.6g} s; shorten the time grid")
    pops = np.empty((t_grid.size, n_out))
    se = np.empty_like(pops)
    for ti in range(t_grid.size):
        per = displaced_populations(initial.probabilities, a2[:, ti], n_out)
        pops[ti] = per.mean(axis=0)
        se[ti] = per.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else 0.0
    nb = initial.mean + a2
    flags = []
    deficit = 1.0 - pops.sum(axis=1) - max(initial.deficit, 0.0)
    if np.any(deficit > deficit_flag):
        flags.append(f"truncation_deficit:max={deficit.max():.3g}")
    return EnsembleResult(
        times=t_grid,
        populations=pops,
        population_se=se,
        nbar=nb.mean(axis=0),
        nbar_se=nb.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else np.zeros(t_grid.size),
        n_traj=n_traj,
        alpha_sq=a2,
        event_counts=counts,
        flags=flags,
    )
