"""Motional thermometry from Rabi-flop data.

* blue-sideband flops -> Fock populations by SVD pseudo-inversion, with
  binomial-bootstrap confidence intervals
* carrier flops at high nbar -> (Omega_0, nbar_x) with Debye-Waller factors
  from two radial modes
* a few measured low-lying populations -> nbar of the best thermal state
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares, minimize, minimize_scalar
from scipy.signal import lombscargle
from scipy.special import eval_laguerre

from .data import BLUE_SIDEBAND, CARRIER, FitError, FitResult, FlopDataset, PopulationData, PopulationEstimate
from .fock import FockDistribution, OutOfRangeError

log = logging.getLogger(__name__)

SVD_RCOND = 1e-8
OMITTED_WEIGHT = 1e-10
FIT_OMITTED_WEIGHT = 1e-8
CARRIER_N_CEILING = 20000
CI_PERCENTILES = (15.865525393145708, 50.0, 84.13447460685429)


class IllPosedError(FitError):
    """The sideband design matrix cannot resolve every requested level."""


# --------------------------------------------------------------------------- sideband


def _probs(p):
    return np.asarray(p.probabilities if isinstance(p, FockDistribution) else p, dtype=float)


def lamb_dicke_ok(eta: float, n_max: int, limit: float = 0.3) -> bool:
    """Crude validity flag for first-order sideband Rabi frequencies."""
    return eta * np.sqrt(n_max) <= limit


def sideband_matrix(durations, n_levels: int, rabi: float, eta: float) -> np.ndarray:
    """M[i, n] = sin^2(Omega_0 eta sqrt(n+1) t_i / 2)."""
    t = np.asarray(durations, dtype=float)[:, None]
    n = np.arange(n_levels)[None, :]
    return np.sin(rabi * eta * np.sqrt(n + 1.0) * t / 2.0) ** 2


def sideband_signal(p, rabi: float, eta: float, t):
    """Blue-sideband bright probability for populations ``p`` after pulse length ``t``."""
    probs = _probs(p)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = sideband_matrix(t_arr, probs.size, rabi, eta) @ probs
    return out if np.ndim(t) else float(out[0])


def svd_populations(
    data: FlopDataset,
    n_levels: int,
    rabi: float,
    eta: float,
    n_bootstrap: int = 1000,
    seed: int = 0,
    rcond: float = SVD_RCOND,
    readout_error: float = 0.0,
) -> PopulationEstimate:
    """Populations of the lowest ``n_levels`` Fock states from a blue-sideband flop.

    Solves min ||M p - y|| with the truncated pseudo-inverse (singular values
    below ``rcond * s_max`` dropped). Solutions are clipped to [0, 1] and
    rescaled only if they sum above 1. Counts are resampled binomially
    ``n_bootstrap`` times; the estimate reports the median and the
    15.9 / 84.1 percentiles of the clipped bootstrap solutions.
    """
    if data.kind != BLUE_SIDEBAND:
        raise ValueError("svd_populations needs blue-sideband data")
    if len(data) < n_levels:
        raise IllPosedError(f"{len(data)} time points cannot resolve {n_levels} levels")
    if not 0 <= readout_error < 0.5:
        raise ValueError("readout_error must lie in [0, 0.5)")
    m = sideband_matrix(data.durations, n_levels, rabi, eta)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    keep = s > rcond * s[0]
    if not np.all(keep):
        null = vt[~keep]
        worst = sorted({int(np.argmax(np.abs(v))) for v in null})
        raise IllPosedError(f"design matrix rank {keep.sum()} < {n_levels}; poorly resolved levels {worst}")
    pinv = (vt.T / s) @ u.T

    def solve(y):
        y = (y - readout_error) / (1.0 - 2.0 * readout_error)
        p = np.clip(y @ pinv.T, 0.0, 1.0)
        tot = p.sum(axis=-1, keepdims=True)
        return np.where(tot > 1.0, p / np.where(tot > 0, tot, 1.0), p)

    point = solve(data.frequencies)
    rng = np.random.default_rng(seed)
    k = rng.binomial(data.shots.astype(np.int64), data.frequencies, size=(n_bootstrap, len(data)))
    boot = solve(k / data.shots)
    lo, med, hi = np.percentile(boot, CI_PERCENTILES, axis=0)
    resid = m @ np.clip(data.frequencies @ pinv.T, None, None) - data.frequencies
    return PopulationEstimate(
        median=med,
        low=np.minimum(lo, med),
        high=np.maximum(hi, med),
        n_bootstrap=n_bootstrap,
        point=point,
        diagnostics={
            "singular_values": s,
            "condition": float(s[0] / s[-1]),
            "residual_norm": float(np.linalg.norm(resid)),
            "lamb_dicke_ok": lamb_dicke_ok(eta, n_levels - 1),
        },
    )


# --------------------------------------------------------------------------- carrier


def debye_waller(eta: float, n_max: int) -> np.ndarray:
    """Relative carrier Rabi frequencies e^{-eta^2/2} L_n(eta^2), n = 0..n_max."""
    return np.exp(-(eta**2) / 2.0) * eval_laguerre(np.arange(n_max + 1), eta**2)


def thermal_cutoff(nbar: float, omitted: float = OMITTED_WEIGHT, ceiling: int = CARRIER_N_CEILING) -> int:
    """Smallest n_max whose thermal tail weight (nbar/(1+nbar))^(n_max+1) is below ``omitted``."""
    if nbar <= 0:
        return 0
    ratio = nbar / (1.0 + nbar)
    n = int(np.ceil(np.log(omitted) / np.log(ratio))) - 1
    n = max(n, 0)
    if n > ceiling:
        raise OutOfRangeError(f"thermal state nbar={nbar:g} needs n_max={n} > ceiling {ceiling}")
    return n


def _thermal(nbar, n_max):
    n = np.arange(n_max + 1)
    if nbar == 0:
        return (n == 0).astype(float)
    return np.exp(n * np.log(nbar / (1.0 + nbar))) / (1.0 + nbar)


def carrier_signal_two_mode(nbar_x, ratio, rabi, eta_x, eta_y, t, n_max=None, omitted=OMITTED_WEIGHT):
    """Carrier bright probability with thermal x and y modes, nbar_y = ratio * nbar_x.

    Each thermal sum is truncated so that its omitted weight is below
    ``omitted`` / 2, unless ``n_max`` fixes both truncations explicitly.
    Raises :class:`OutOfRangeError` when the needed truncation exceeds the ceiling.
    """
    if nbar_x < 0 or ratio <= 0:
        raise ValueError("need nbar_x >= 0 and ratio > 0")
    nbar_y = ratio * nbar_x
    if n_max is None:
        nx, ny = thermal_cutoff(nbar_x, omitted / 2), thermal_cutoff(nbar_y, omitted / 2)
    else:
        nx = ny = int(n_max)
    px, py = _thermal(nbar_x, nx), _thermal(nbar_y, ny)
    ax, ay = debye_waller(eta_x, nx), debye_waller(eta_y, ny)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.size)
    for i, ti in enumerate(t_arr):
        phase = rabi * ti * np.outer(ax, ay)
        out[i] = px @ (np.sin(phase / 2.0) ** 2) @ py
    return out if np.ndim(t) else float(out[0])


class CarrierModel:
    """Fast evaluator of the two-mode carrier signal for fitting.

    Writes P(t) = 1/2 - 1/2 sum_x p_x G_y(Omega_0 t a_x) where
    G_y(u) = sum_y p_y cos(u a_y). Because |a_y| <= 1, G_y is band-limited,
    so it is tabulated on a uniform grid of spacing ``h`` and interpolated
    with a cubic spline (error ~ 5 h^4 / 384). The truncated thermal weights
    are renormalised so the signal is continuous in nbar as cutoffs move.
    """

    def __init__(self, eta_x, eta_y, ratio, h=0.06):
        self.eta_x, self.eta_y, self.ratio, self.h = eta_x, eta_y, ratio, h
        self._dw = {}

    def _a(self, eta, n):
        key = (eta, n)
        if key not in self._dw:
            self._dw[key] = debye_waller(eta, n)
        return self._dw[key]

    def __call__(self, nbar_x, rabi, t):
        t = np.asarray(t, dtype=float)
        nbar_y = self.ratio * nbar_x
        nx = thermal_cutoff(nbar_x, FIT_OMITTED_WEIGHT / 2)
        ny = thermal_cutoff(nbar_y, FIT_OMITTED_WEIGHT / 2)
        px, py = _thermal(nbar_x, nx), _thermal(nbar_y, ny)
        px, py = px / px.sum(), py / py.sum()
        ax, ay = self._a(self.eta_x, nx), self._a(self.eta_y, ny)
        u_max = abs(rabi) * float(t.max(initial=0.0)) * max(1.0, float(np.abs(ax).max()))
        grid = np.arange(0.0, u_max + 4 * self.h, self.h)
        g = np.cos(np.outer(grid, ay)) @ py
        spline = CubicSpline(grid, g, bc_type=((1, 0.0), "not-a-knot"))
        u = np.abs(rabi * np.outer(t, ax))  # G is even in u
        return 0.5 - 0.5 * spline(u) @ px


def _periodogram_peak(t, y, f_hi):
    freqs = np.linspace(f_hi / 400.0, f_hi, 2000)
    power = lombscargle(t, y - y.mean(), freqs)
    return float(freqs[np.argmax(power)])


def fit_carrier_nbar(
    data: FlopDataset,
    eta_x: float,
    eta_y: float,
    ratio: float = 1.48,
    rabi_guess: float | None = None,
    nbar_starts=(10.0,),
    spread: float = 0.2,
    tol: float = 1e-6,
) -> FitResult:
    """Least-squares (Omega_0, nbar_x) from a carrier flop.

    Derivative-free simplex from several starts: Omega_0 at the periodogram
    peak (or ``rabi_guess``) and -/+ ``spread``, each paired with every
    entry of ``nbar_starts``. The lowest chi^2 wins.
    """
    if data.kind != CARRIER:
        raise ValueError("fit_carrier_nbar needs carrier data")
    t, y = data.durations, data.frequencies
    if len(data) < 10:
        raise FitError("need at least 10 time points")
    pt = (data.counts + 0.5) / (data.shots + 1.0)
    sig = np.sqrt(pt * (1 - pt) / data.shots)
    model = CarrierModel(eta_x, eta_y, ratio)

    span = float(t.max() - t.min())
    if rabi_guess is None:
        rabi_guess = data.rabi_prior
    if rabi_guess is None:
        dt_min = float(np.min(np.diff(np.unique(t)))) if np.unique(t).size > 1 else span
        peak = _periodogram_peak(t, y, np.pi / dt_min)
        rabi_guess = peak
    if span * rabi_guess < 2 * 2 * np.pi:
        log.warning("carrier data span fewer than two flop periods")
    scale = np.array([rabi_guess, 1.0])
    n_evals = 0

    def resid(theta):
        nonlocal n_evals
        n_evals += 1
        rabi, nbar = theta
        return (model(max(nbar, 0.0), rabi, t) - y) / sig

    def chi2(z):
        r = resid(z * scale)
        return float(r @ r)

    best = None
    traces = []
    for f in (1.0 - spread, 1.0, 1.0 + spread):
        for nb0 in nbar_starts:
            trace = []
            z0 = np.array([f, nb0])
            res = minimize(
                chi2, z0, method="Nelder-Mead",
                bounds=[(0.05, None), (0.0, None)],
                callback=lambda intermediate_result: trace.append(intermediate_result.fun),
                options={"xatol": 1e-3, "fatol": tol * chi2(z0), "maxiter": 2000},
            )
            traces.append(trace)
            if best is None or res.fun < best.fun:
                best = res
    if best is None or not np.isfinite(best.fun):
        raise FitError("carrier fit failed from every start")

    # polish the best simplex vertex with a bounded Gauss-Newton step sequence
    pol = least_squares(lambda z: resid(z * scale), best.x, bounds=([0.05, 0.0], [np.inf, np.inf]), x_scale=[1e-2, 1.0], xtol=1e-12, ftol=1e-12)
    if 2 * pol.cost <= best.fun:
        best.x, best.fun = pol.x, float(2 * pol.cost)
        traces.append([float(2 * pol.cost)])

    theta = best.x * scale
    r0 = resid(theta)
    # Jacobian of weighted residuals by central differences
    steps = np.array([1e-6 * theta[0], max(1e-5 * theta[1], 1e-6)])
    jac = np.empty((r0.size, 2))
    for k in range(2):
        dp = np.zeros(2)
        dp[k] = steps[k]
        lo = theta - dp
        lo[1] = max(lo[1], 0.0)
        jac[:, k] = (resid(theta + dp) - resid(lo)) / (theta[k] + steps[k] - lo[k])
    grad = 2 * jac.T @ r0
    try:
        cov = np.linalg.inv(jac.T @ jac)
        err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        cov, err = None, np.full(2, np.nan)
    grad_scaled = float(np.linalg.norm(grad * np.abs(theta + 1e-12)) / max(1.0, best.fun))
    return FitResult(
        params={"rabi": float(theta[0]), "nbar_x": float(theta[1])},
        uncertainties={"rabi": float(err[0]), "nbar_x": float(err[1])},
        residuals=r0,
        objective=float(best.fun),
        converged=bool(best.success),
        n_evals=n_evals,
        message=str(best.message),
        covariance=cov,
        diagnostics={"rabi_start": rabi_guess, "objective_traces": traces, "gradient": grad, "scaled_gradient_norm": grad_scaled},
    )


# --------------------------------------------------------------------------- thermal


def fit_thermal_from_levels(values, sigmas=None, levels=None, nbar_max: float = 1e3) -> FitResult:
    """Weighted least-squares nbar of a thermal state matching measured low-level populations.

    ``values[i]`` is the population of level ``levels[i]`` (default 0, 1, 2, ...).
    Without ``sigmas`` the fit is unweighted.
    """
    y = np.asarray(values, dtype=float)
    lv = np.arange(y.size) if levels is None else np.asarray(levels, dtype=int)
    if y.size < 2:
        raise FitError("need at least two levels")
    if sigmas is None:
        w = np.ones_like(y)
    else:
        s = np.asarray(sigmas, dtype=float)
        finite = np.isfinite(s) & (s > 0)
        if finite.sum() < 2:
            raise FitError("need at least two levels with finite uncertainty")
        y, lv, w = y[finite], lv[finite], 1.0 / s[finite]
    if np.all(y == 0):
        raise FitError("all populations are zero: no thermal state matches")

    def model(nb):
        if nb == 0:
            return (lv == 0).astype(float)
        return np.exp(lv * np.log(nb / (1.0 + nb))) / (1.0 + nb)

    def chi2(nb):
        r = (model(nb) - y) * w
        return float(r @ r)

    grid = np.concatenate([[0.0], np.geomspace(1e-6, nbar_max, 200)])
    vals = np.array([chi2(g) for g in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    nb, best = float(grid[i]), float(vals[i])
    if hi > lo:
        res = minimize_scalar(chi2, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(1.0, hi)})
        if res.fun <= best:
            nb, best = float(res.x), float(res.fun)
    h = max(1e-4 * nb, 1e-7)
    a = max(nb - h, 0.0)
    curv = (chi2(a + 2 * h) - 2 * chi2(a + h) + chi2(a)) / h**2
    err = float(np.sqrt(2.0 / curv)) if curv > 0 else np.inf
    if sigmas is None and np.isfinite(err):
        err *= np.sqrt(best / max(y.size - 1, 1))
    return FitResult(
        params={"nbar": nb},
        uncertainties={"nbar": err},
        residuals=(model(nb) - y) * w,
        objective=best,
        converged=True,
        n_evals=grid.size,
    )


def sideband_population_series(
    datasets,
    delays,
    n_levels: int,
    rabi: float,
    eta: float,
    levels=(0, 1),
    n_bootstrap: int = 1000,
    seed: int = 0,
    readout_error: float = 0.0,
) -> PopulationData:
    """Run :func:`svd_populations` on one flop per delay and stack the chosen
    levels into a :class:`PopulationData` (bootstrap half-widths as sigmas)."""
    delays = np.asarray(delays, dtype=float)
    if len(datasets) != delays.size:
        raise ValueError("one dataset per delay required")
    t, lv, val, sig = [], [], [], []
    for i, (d, ds) in enumerate(zip(delays, datasets)):
        est = svd_populations(ds, n_levels, rabi, eta, n_bootstrap, seed + i, readout_error=readout_error)
        for level in levels:
            t.append(d)
            lv.append(level)
            val.append(est.point[level])
            sig.append(est.sigma[level])
    return PopulationData(t, lv, val, sig)
