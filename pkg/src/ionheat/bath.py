"""Diagonal populations of an oscillator weakly coupled to a hot reservoir,
and heating-rate fits built on them."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .data import DegenerateDataError, FitResult, HeatingCurve, PopulationData
from .fock import FockDistribution

log = logging.getLogger(__name__)

DEFICIT_WARN = 1e-6
DEFAULT_LEVELS = (0, 1)


@dataclass(frozen=True)
class BathParams:
    heating_rate: float
    duration: float

    def __post_init__(self):
        if not (np.isfinite(self.heating_rate) and self.heating_rate >= 0):
            raise ValueError("heating_rate must be >= 0")
        if not (np.isfinite(self.duration) and self.duration >= 0):
            raise ValueError("duration must be >= 0")

    @property
    def quanta(self) -> float:
        return self.heating_rate * self.duration


def _lbinom(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def bath_levels(initial, x: float, levels) -> np.ndarray:
    """rho_{n,n} after accumulating ``x = heating_rate * t`` quanta, for selected n.

    With d = n - j the double sum factorises: an inner sum over source levels
    A_d = sum_s C(s, d) r^(s-d) rho_s(0) that does not depend on n, followed by
    rho_n = q sum_d C(n, d) r^(n-d) q^(2d) A_d, where q = 1/(1+x) and r = x q.
    The source sum covers the whole (finite) support of ``initial``, so the
    series is exact rather than truncated.
    """
    rho0 = np.asarray(initial.probabilities if isinstance(initial, FockDistribution) else initial, float)
    levels = np.atleast_1d(np.asarray(levels, dtype=int))
    if x == 0:
        padded = np.zeros(max(levels.max() + 1, rho0.size))
        padded[: rho0.size] = rho0
        return padded[levels]
    nz = np.nonzero(rho0 > 0)[0]
    if nz.size == 0:
        return np.zeros(levels.size)
    s_max = int(nz[-1])
    src = rho0[: s_max + 1]
    log_r = np.log(x) - np.log1p(x)
    log_q = -np.log1p(x)
    d_top = min(int(levels.max()), s_max)
    d = np.arange(d_top + 1, dtype=float)
    s = np.arange(s_max + 1, dtype=float)
    with np.errstate(invalid="ignore"):
        ok = s[None, :] >= d[:, None]
        logc = np.where(ok, _lbinom(s[None, :], d[:, None]) + (s[None, :] - d[:, None]) * log_r, -np.inf)
        a_d = np.exp(logc) @ src
        n = levels.astype(float)[:, None]
        ok = n >= d[None, :]
        logc = np.where(ok, _lbinom(n, d[None, :]) + (n - d[None, :]) * log_r + 2 * d[None, :] * log_q, -np.inf)
        out = np.exp(log_q) * (np.exp(logc) @ a_d)
    return out


def bath_propagate(initial: FockDistribution, params: BathParams, n_out: int | None = None) -> FockDistribution:
    """Populations after time ``params.duration`` of heating at ``params.heating_rate``.

    The output keeps the truncation of ``initial`` unless ``n_out`` (highest
    level) is given. The truncation deficit is stored in ``meta`` and logged
    when it exceeds ``DEFICIT_WARN``.
    """
    n_max = initial.n_max if n_out is None else n_out
    x = params.quanta
    if x == 0:
        res = initial.padded(n_max)
    else:
        p = bath_levels(initial, x, np.arange(n_max + 1))
        res = FockDistribution(np.clip(p, 0.0, None), initial.norm_tol)
    deficit = res.deficit - max(initial.deficit, 0.0)
    res.meta["truncation_deficit"] = deficit
    if deficit > DEFICIT_WARN:
        res.meta["warning"] = f"truncation deficit {deficit:.2e} at n_max={n_max}"
        log.warning("bath_propagate: %s", res.meta["warning"])
    return res


def bath_nbar(initial: FockDistribution, params: BathParams) -> float:
    """Mean phonon number, which grows exactly linearly: nbar(0) + rate * t."""
    return initial.mean + params.quanta


def _model(initial, data: PopulationData, rate: float) -> np.ndarray:
    pred = np.empty(data.values.size)
    levels = np.unique(data.levels)
    for t in np.unique(data.times):
        sel = data.times == t
        vals = bath_levels(initial, rate * t, levels)
        pred[sel] = vals[np.searchsorted(levels, data.levels[sel])]
    return pred


def _fit_rate(data: PopulationData, initial: FockDistribution, weighted: bool, rate_max: float | None):
    times = data.unique_times
    t_top = float(times.max())
    if t_top <= 0:
        raise DegenerateDataError("all measurements at t = 0: heating rate unconstrained")
    w = 1.0 / data.sigmas if weighted else np.ones_like(data.values)
    n_evals = 0

    def chi2(rate):
        nonlocal n_evals
        n_evals += 1
        r = (_model(initial, data, rate) - data.values) * w
        return float(r @ r)

    # coarse global scan in accumulated quanta, then bounded Brent refinement
    hi = rate_max if rate_max is not None else 1e3 / t_top
    grid = np.concatenate([[0.0], np.geomspace(1e-4 / t_top, hi, 70)])
    vals = np.array([chi2(g) for g in grid])
    i = int(np.argmin(vals))
    lo_b, hi_b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if hi_b > lo_b:
        res = minimize_scalar(chi2, bounds=(lo_b, hi_b), method="bounded", options={"xatol": 1e-10 * max(hi_b, 1e-12)})
        rate, best = float(res.x), float(res.fun)
        if vals[i] < best:
            rate, best = float(grid[i]), float(vals[i])
        converged = bool(res.success)
    else:
        rate, best, converged = float(grid[i]), float(vals[i]), True

    # curvature of chi^2 -> 1-sigma error (sigma^2 = 2 / chi2'')
    h = max(1e-3 * rate, 1e-3 / t_top)
    lo = max(rate - h, 0.0)
    c_lo, c_mid, c_hi = chi2(lo), chi2(lo + h), chi2(lo + 2 * h)
    curv = (c_hi - 2 * c_mid + c_lo) / h**2
    if not curv > 0:
        raise DegenerateDataError("chi^2 has no curvature in the heating rate")
    var = 2.0 / curv
    dof = max(data.values.size - 1, 1)
    if not weighted:
        var *= best / dof
    resid = (_model(initial, data, rate) - data.values) * w
    return FitResult(
        params={"heating_rate": rate},
        uncertainties={"heating_rate": float(np.sqrt(var))},
        residuals=resid,
        objective=best,
        converged=converged,
        n_evals=n_evals,
        message="ok" if converged else "bounded minimizer did not report success",
        diagnostics={"reduced_chi2": best / dof, "at_lower_bound": rate == 0.0},
    )


def fit_bath_rate(
    data: PopulationData,
    initial: FockDistribution,
    weighted: bool = True,
    levels=DEFAULT_LEVELS,
    rate_max: float | None = None,
) -> FitResult:
    """Weighted least-squares heating rate from measured level populations.

    Only rows whose level is in ``levels`` enter the fit (all levels jointly).
    """
    if levels is not None:
        data = data.subset(np.isin(data.levels, list(levels)))
    if data.values.size == 0:
        raise DegenerateDataError("no observations at the requested levels")
    if data.unique_times.size < 2:
        raise DegenerateDataError("need at least two distinct times")
    if np.ptp(data.values) == 0:
        raise DegenerateDataError("all measured populations are equal")
    return _fit_rate(data, initial, weighted, rate_max)


def cumulative_nbar_estimate(
    data: PopulationData,
    initial: FockDistribution,
    weighted: bool = True,
    levels=DEFAULT_LEVELS,
    workers: int = 1,
) -> HeatingCurve:
    """nbar(t_k) from rates fitted to data up to and including t_k.

    Each prefix rate is used to propagate ``initial`` to t_k; the band comes
    from propagating with rate_k -/+ its 1-sigma error.
    """
    if levels is not None:
        data = data.subset(np.isin(data.levels, list(levels)))
    times = data.unique_times
    if times.size < 2:
        raise DegenerateDataError("need at least two distinct times")

    def one(t_k):
        if t_k == 0:
            return 0.0, 0.0
        fit = _fit_rate(data.subset(data.times <= t_k), initial, weighted, None)
        return fit["heating_rate"], fit.uncertainties["heating_rate"]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(one, times))
    else:
        fits = [one(t) for t in times]

    rates = np.array([f[0] for f in fits])
    errs = np.array([f[1] for f in fits])
    nbar = np.array([bath_propagate(initial, BathParams(r, t)).mean for r, t in zip(rates, times)])
    lo = np.array([bath_propagate(initial, BathParams(max(r - e, 0.0), t)).mean for r, e, t in zip(rates, errs, times)])
    hi = np.array([bath_propagate(initial, BathParams(r + e, t)).mean for r, e, t in zip(rates, errs, times)])
    return HeatingCurve(
        times, nbar, np.minimum(lo, nbar), np.maximum(hi, nbar),
        label="cumulative bath fit",
        meta={"rates": rates, "rate_errors": errs},
    )
