"""Containers shared by the fitting, thermometry and simulation modules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

CARRIER = "carrier"
BLUE_SIDEBAND = "blue_sideband"


class FitError(RuntimeError):
    """A fit could not produce a meaningful estimate."""


class DegenerateDataError(FitError):
    """The data do not constrain the fitted parameter (flat likelihood)."""


@dataclass
class FitResult:
    params: dict
    uncertainties: dict
    residuals: np.ndarray
    objective: float
    converged: bool
    n_evals: int = 0
    message: str = ""
    covariance: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residuals))

    def report(self) -> dict:
        """Flat, JSON-serialisable summary."""
        out = {
            "params": {k: float(v) for k, v in self.params.items()},
            "uncertainties": {k: float(v) for k, v in self.uncertainties.items()},
            "residual_norm": self.residual_norm,
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "n_evals": int(self.n_evals),
            "message": self.message,
        }
        return out


@dataclass
class HeatingCurve:
    """Time series with asymmetric 1-sigma band. ``values`` may be 2-D (time x level)."""

    times: np.ndarray
    values: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    label: str = ""
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.ci_low = np.asarray(self.ci_low, dtype=float)
        self.ci_high = np.asarray(self.ci_high, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("HeatingCurve times must be strictly increasing")
        if not (self.values.shape == self.ci_low.shape == self.ci_high.shape):
            raise ValueError("values and confidence bounds must share a shape")
        if self.values.shape[0] != self.times.size:
            raise ValueError("one value per time point required")
        slack = 1e-12 * np.maximum(1.0, np.abs(self.values))
        if np.any(self.ci_low > self.values + slack) or np.any(self.ci_high < self.values - slack):
            raise ValueError("confidence bounds must bracket the values")


@dataclass
class FlopDataset:
    """Bright-state counts from a Rabi-flop scan (durations need not be sorted)."""

    durations: np.ndarray
    counts: np.ndarray
    shots: np.ndarray
    kind: Literal["carrier", "blue_sideband"] = BLUE_SIDEBAND
    rabi_prior: float | None = None

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=float).ravel()
        k = np.asarray(self.counts, dtype=float).ravel()
        n = np.broadcast_to(np.asarray(self.shots, dtype=float), d.shape).copy()
        if not (d.size == k.size == n.size):
            raise ValueError("durations, counts and shots must have equal length")
        if self.kind not in (CARRIER, BLUE_SIDEBAND):
            raise ValueError(f"unknown transition kind {self.kind!r}")
        if np.any(d < 0):
            raise ValueError("pulse durations must be non-negative")
        if np.any(n < 1) or np.any(k < 0) or np.any(k > n):
            raise ValueError("need 0 <= counts <= shots and shots >= 1")
        order = np.argsort(d, kind="stable")
        self.durations, self.counts, self.shots = d[order], k[order], n[order]

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.shots

    def __len__(self):
        return self.durations.size


@dataclass
class PopulationData:
    """Measured level populations versus heating delay.

    Each row is one (time, level) observation with a symmetric 1-sigma error.
    """

    times: np.ndarray
    levels: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.levels = np.asarray(self.levels, dtype=int).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.sigmas = np.broadcast_to(np.asarray(self.sigmas, dtype=float), self.times.shape).copy()
        if not (self.times.size == self.levels.size == self.values.size):
            raise ValueError("times, levels and values must have equal length")
        if np.any(self.times < 0):
            raise ValueError("times must be non-negative")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("populations must lie in [0, 1]")
        if np.any(self.levels < 0):
            raise ValueError("levels must be non-negative")
        if np.any(~np.isfinite(self.sigmas)) or np.any(self.sigmas <= 0):
            raise ValueError("sigmas must be finite and > 0")

    @classmethod
    def from_counts(cls, times, levels, counts, shots):
        """Populations k/N with binomial errors.

        The error uses the add-half estimate (k + 1/2)/(N + 1) so that 0 and N
        counts still carry a finite weight.
        """
        k = np.asarray(counts, dtype=float)
        n = np.broadcast_to(np.asarray(shots, dtype=float), k.shape)
        if np.any(n < 1) or np.any(k < 0) or np.any(k > n):
            raise ValueError("need 0 <= counts <= shots and shots >= 1")
        pt = (k + 0.5) / (n + 1.0)
        return cls(times, levels, k / n, np.sqrt(pt * (1 - pt) / n))

    def subset(self, mask) -> "PopulationData":
        return PopulationData(self.times[mask], self.levels[mask], self.values[mask], self.sigmas[mask])

    @property
    def unique_times(self) -> np.ndarray:
        return np.unique(self.times)


@dataclass
class PopulationEstimate:
    """Per-level median populations with asymmetric 1-sigma intervals."""

    median: np.ndarray
    low: np.ndarray
    high: np.ndarray
    n_bootstrap: int
    point: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.median = np.asarray(self.median, dtype=float)
        self.low = np.asarray(self.low, dtype=float)
        self.high = np.asarray(self.high, dtype=float)
        if np.any(self.low < 0) or np.any(self.high > 1):
            raise ValueError("interval bounds must lie in [0, 1]")
        if np.any(self.low > self.median) or np.any(self.median > self.high):
            raise ValueError("need low <= median <= high")

    @property
    def sigma(self) -> np.ndarray:
        """Symmetrised error, half the interval width (floored to avoid zero weights)."""
        return np.maximum(0.5 * (self.high - self.low), 1e-6)
