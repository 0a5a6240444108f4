"""Fock-space numerics: Laguerre polynomials, displaced number-state
transition probabilities and motional population distributions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.special import gammaln

DEFAULT_N_MAX = 400
MAX_ORDER = 5000

NORM_TOL_ANALYTIC = 1e-12
NORM_TOL_FITTED = 1e-6


class OutOfRangeError(ArithmeticError):
    """A special-function evaluation left the representable floating-point range."""


class InfeasibleError(ValueError):
    """No distribution in the requested family reproduces the given data."""


def _check_order(name, val):
    if int(val) != val or val < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {val!r}")
    if val > MAX_ORDER:
        raise OutOfRangeError(f"{name}={val} exceeds supported order {MAX_ORDER}")


def laguerre(n: int, k: int, x):
    """Generalized Laguerre polynomial L_n^{(k)}(x) via the three-term recurrence in n.

    ``x`` may be a scalar or an array. Raises :class:`OutOfRangeError` rather
    than returning inf/nan when the value overflows.
    """
    _check_order("n", n)
    _check_order("k", k)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("laguerre is defined here for x >= 0 only")
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 + k - x
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, n):
            prev, cur = cur, ((2 * j + 1 + k - x) * cur - (j + k) * prev) / (j + 1)
    if not np.all(np.isfinite(cur)):
        raise OutOfRangeError(f"L_{n}^({k})(x) overflowed for max x={np.max(x):g}")
    return cur if cur.ndim else float(cur)


def _log_prefactor(lo, hi, x):
    # log of (lo!/hi!) x^(hi-lo) e^{-x}
    return gammaln(lo + 1.0) - gammaln(hi + 1.0) + (hi - lo) * np.log(x) - x


def displaced_fock_prob(n: int, m: int, alpha_sq: float) -> float:
    """|<m|D(alpha)|n>|^2 for m >= n, with factorials handled in log space.

    Use :func:`transition_prob` when the ordering of ``n`` and ``m`` is not known.
    """
    if m < n:
        raise ValueError("displaced_fock_prob requires m >= n; use transition_prob for m < n")
    if alpha_sq < 0:
        raise ValueError("alpha_sq must be >= 0")
    if alpha_sq == 0:
        return 1.0 if m == n else 0.0
    lag = laguerre(n, m - n, alpha_sq)
    if lag == 0.0:
        return 0.0
    logp = _log_prefactor(n, m, alpha_sq) + 2.0 * np.log(abs(lag))
    p = float(np.exp(logp))
    if not np.isfinite(p):
        raise OutOfRangeError(f"p_{m}({n}) not representable at |alpha|^2={alpha_sq:g}")
    return p


def transition_prob(n: int, m: int, alpha_sq: float) -> float:
    """Displaced-Fock transition probability for any ordering, using p_m(n) = p_n(m)."""
    if m >= n:
        return displaced_fock_prob(n, m, alpha_sq)
    return displaced_fock_prob(m, n, alpha_sq)


def displaced_populations(probabilities, alpha_sq, n_out: int, cutoff: float = 1e-15) -> np.ndarray:
    """Populations of levels 0..n_out-1 after displacing a Fock mixture by |alpha|^2.

    Parameters
    ----------
    probabilities : array_like
        Initial populations p_n.
    alpha_sq : array_like
        One or more displacement magnitudes |alpha|^2; the result has one row
        per value.
    n_out : int
        Number of output levels.
    cutoff : float
        Initial levels with p_n below this are skipped.

    Returns
    -------
    ndarray of shape (len(alpha_sq), n_out)
    """
    p = np.asarray(probabilities, dtype=float)
    x = np.atleast_1d(np.asarray(alpha_sq, dtype=float))
    if np.any(x < 0):
        raise ValueError("alpha_sq must be >= 0")
    out = np.zeros((x.size, n_out))
    support = np.nonzero(p > cutoff)[0]
    if support.size == 0 or n_out == 0:
        return out
    n_src = int(support[-1])
    p = p[: n_src + 1]

    zero = x == 0.0
    if np.any(zero):
        m = min(n_out, n_src + 1)
        out[zero, :m] = p[:m]
    if np.all(zero):
        return out

    xs = x[~zero]
    k_max = max(n_src, n_out - 1)
    k = np.arange(k_max + 1, dtype=float)[:, None]
    lag_prev = np.zeros((k_max + 1, xs.size))
    lag = np.ones((k_max + 1, xs.size))
    acc = np.zeros((xs.size, n_out))
    j_top = min(n_out - 1, n_src)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for j in range(j_top + 1):
            if j == 1:
                lag_prev, lag = lag, 1.0 + k - xs[None, :]
            elif j > 1:
                lag_prev, lag = lag, ((2 * j - 1 + k - xs) * lag - (j - 1 + k) * lag_prev) / j
            if not np.all(np.isfinite(lag)):
                raise OutOfRangeError(f"Laguerre table overflowed at order {j}")
            logw = _log_prefactor(float(j), j + k, xs[None, :]) + 2.0 * np.log(np.abs(lag))
            w = np.exp(logw)
            # m = j, n = j + kk (n >= m)
            n_hi = n_src - j
            acc[:, j] += p[j : j + n_hi + 1] @ w[: n_hi + 1]
            # n = j, m = j + kk with kk >= 1
            m_hi = n_out - 1 - j
            if m_hi >= 1 and p[j] > 0:
                acc[:, j + 1 : j + 1 + m_hi] += p[j] * w[1 : m_hi + 1].T
    out[~zero] = acc
    return out


@dataclass(frozen=True)
class FockDistribution:
    """Populations p_n over n = 0..n_max.

    ``deficit`` is the weight missing from the truncated vector (1 - sum p_n).
    """

    probabilities: np.ndarray
    norm_tol: float = NORM_TOL_ANALYTIC
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=float, copy=True).ravel()
        if p.size == 0:
            raise ValueError("FockDistribution needs at least one level")
        if not np.all(np.isfinite(p)):
            raise ValueError("FockDistribution probabilities must be finite")
        if np.any(p < -self.norm_tol):
            raise ValueError(f"negative population {p.min():.3g} beyond tolerance")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if total > 1.0 + self.norm_tol:
            raise ValueError(f"populations sum to {total:.15g} > 1 + {self.norm_tol:g}")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)

    @property
    def n_max(self) -> int:
        return self.probabilities.size - 1

    @property
    def total(self) -> float:
        return float(self.probabilities.sum())

    @property
    def deficit(self) -> float:
        return 1.0 - self.total

    @property
    def mean(self) -> float:
        return float(np.arange(self.probabilities.size) @ self.probabilities)

    def __len__(self):
        return self.probabilities.size

    def __getitem__(self, n):
        return self.probabilities[n]

    def padded(self, n_max: int) -> "FockDistribution":
        """Copy extended with zeros (or truncated) to ``n_max``."""
        p = np.zeros(n_max + 1)
        m = min(n_max + 1, self.probabilities.size)
        p[:m] = self.probabilities[:m]
        return FockDistribution(p, self.norm_tol)

    def support_max(self, cutoff: float = 1e-15) -> int:
        nz = np.nonzero(self.probabilities > cutoff)[0]
        return int(nz[-1]) if nz.size else 0


def fock_state(n: int, n_max: int = DEFAULT_N_MAX) -> FockDistribution:
    if not 0 <= n <= n_max:
        raise ValueError("Fock level outside truncation")
    p = np.zeros(n_max + 1)
    p[n] = 1.0
    return FockDistribution(p)


def ground_state(n_max: int = DEFAULT_N_MAX) -> FockDistribution:
    return fock_state(0, n_max)


def _thermal_probs(nbar: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if nbar == 0:
        return (n == 0).astype(float)
    q = 1.0 / (1.0 + nbar)
    return q * np.exp(n * np.log1p(-q))


def thermal_distribution(nbar: float, n_max: int = DEFAULT_N_MAX) -> FockDistribution:
    """Thermal (geometric) populations with mean ``nbar``, truncated at ``n_max``."""
    if not (np.isfinite(nbar) and nbar >= 0):
        raise ValueError("nbar must be finite and >= 0")
    return FockDistribution(_thermal_probs(nbar, n_max))


def double_thermal(weight: float, nbar_cold: float, nbar_hot: float, n_max: int = DEFAULT_N_MAX) -> FockDistribution:
    """Mixture ``weight * thermal(nbar_cold) + (1 - weight) * thermal(nbar_hot)``."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    p = weight * _thermal_probs(nbar_cold, n_max) + (1.0 - weight) * _thermal_probs(nbar_hot, n_max)
    return FockDistribution(p)


@dataclass(frozen=True)
class DoubleThermalConstraint:
    """Which of the three mixture parameters is pinned when matching (p0, p1)."""

    kind: Literal["weight", "hot", "cold"] = "hot"
    value: float = 10.0

    def __post_init__(self):
        if self.kind not in ("weight", "hot", "cold"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "weight" and not 0.0 < self.value <= 1.0:
            raise ValueError("fixed weight must lie in (0, 1]")
        if self.kind != "weight" and not self.value >= 0:
            raise ValueError("fixed nbar must be >= 0")

    @classmethod
    def fixed_weight(cls, w):
        return cls("weight", w)

    @classmethod
    def fixed_hot(cls, nbar):
        return cls("hot", nbar)

    @classmethod
    def fixed_cold(cls, nbar):
        return cls("cold", nbar)


_FEAS_TOL = 1e-12


def _nbar_from_q(q):
    return 1.0 / q - 1.0


def double_thermal_params(p0: float, p1: float, constraint: DoubleThermalConstraint | None = None):
    """Solve for (weight, nbar_cold, nbar_hot) reproducing the measured p0 and p1.

    Works in terms of q = 1/(1 + nbar) = thermal p0, for which the two
    measured populations are linear (p0) and quadratic (p1) in q.
    """
    constraint = constraint or DoubleThermalConstraint()
    for name, val in (("p0", p0), ("p1", p1)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    if p0 + p1 > 1.0 + _FEAS_TOL:
        raise InfeasibleError("p0 + p1 exceeds 1")
    if p0 >= 1.0 - _FEAS_TOL and p1 <= _FEAS_TOL:
        other = constraint.value if constraint.kind == "hot" else 0.0
        return 1.0, 0.0, other

    if constraint.kind == "weight":
        w = constraint.value
        disc = p0 - p1 - p0 * p0
        if w == 1.0:
            if abs(disc) > 1e-10:
                raise InfeasibleError(f"(p0, p1) = ({p0}, {p1}) is not thermal, cannot use weight 1")
            return 1.0, _nbar_from_q(p0), _nbar_from_q(p0)
        if disc < -_FEAS_TOL:
            raise InfeasibleError("p1 > p0 (1 - p0): no thermal mixture matches")
        root = np.sqrt(max(disc, 0.0) * (1.0 - w) / w)
        q_c = p0 + root
        q_h = p0 - w * root / (1.0 - w)
    elif constraint.kind == "hot":
        q_h = 1.0 / (1.0 + constraint.value)
        if abs(p0 - q_h) < 1e-14:
            if abs(p1 - q_h * (1 - q_h)) > 1e-10:
                raise InfeasibleError("p0 equals the hot-component p0 but p1 does not match")
            return 0.0, constraint.value, constraint.value
        q_c = 1.0 - q_h - (p1 - q_h * (1.0 - q_h)) / (p0 - q_h)
        w = (p0 - q_h) / (q_c - q_h) if q_c != q_h else np.nan
    else:
        q_c = 1.0 / (1.0 + constraint.value)
        if abs(p0 - q_c) < 1e-14:
            if abs(p1 - q_c * (1 - q_c)) > 1e-10:
                raise InfeasibleError("p0 equals the cold-component p0 but p1 does not match")
            return 1.0, constraint.value, constraint.value
        q_h = 1.0 - q_c - (p1 - q_c * (1.0 - q_c)) / (p0 - q_c)
        w = (p0 - q_h) / (q_c - q_h) if q_c != q_h else np.nan

    ok = (
        np.isfinite(w)
        and -_FEAS_TOL <= w <= 1.0 + _FEAS_TOL
        and 0.0 < q_c <= 1.0 + _FEAS_TOL
        and 0.0 < q_h <= 1.0 + _FEAS_TOL
    )
    if not ok:
        raise InfeasibleError(
            f"no double-thermal mixture with {constraint.kind}={constraint.value:g} matches p0={p0}, p1={p1}"
        )
    w = float(np.clip(w, 0.0, 1.0))
    q_c, q_h = min(q_c, 1.0), min(q_h, 1.0)
    return w, _nbar_from_q(q_c), _nbar_from_q(q_h)


def double_thermal_from_levels(
    p0: float,
    p1: float,
    constraint: DoubleThermalConstraint | None = None,
    n_max: int = DEFAULT_N_MAX,
) -> FockDistribution:
    """Two-component thermal mixture whose n = 0 and n = 1 entries equal ``p0``, ``p1``.

    Three mixture parameters against two data points: ``constraint`` pins one
    of them (default: hot component at nbar = 10).
    """
    w, nc, nh = double_thermal_params(p0, p1, constraint)
    dist = double_thermal(w, nc, nh, n_max)
    dist.meta.update(weight=w, nbar_cold=nc, nbar_hot=nh)
    return dist
