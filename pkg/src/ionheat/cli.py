"""Command-line entry point: scenario runners, fitters and synthetic datasets.

Exit codes: 0 success, 2 configuration error, 3 numeric or fit failure,
4 I/O or input-file error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathParams, bath_propagate, fit_bath_rate
from .config import ConfigError, RunConfig, default_config, load_config
from .csvio import CsvParseError, read_dataset, read_populations, read_table, write_csv
from .data import BLUE_SIDEBAND, CARRIER, FitError, FlopDataset, PopulationData
from .fock import DoubleThermalConstraint, OutOfRangeError, double_thermal_from_levels, ground_state, thermal_distribution
from .physics import AMU, IonSpecies, LaserConfig, TrapConfig, TWO_PI
from .qtt import ContinuousSource, DiscreteSource, KickSizeError, ensemble_average
from .scattering import ScatterModel, detuning_scan, scattering_rate
from .synth import BathTruth, ExperimentSchedule, ProbeParams, QttTruth, ScatteringTruth, generate_dataset, generate_population_data
from .thermometry import fit_carrier_nbar, fit_thermal_from_levels, svd_populations

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


# --------------------------------------------------------------------------- builders


def build_species(cfg: RunConfig) -> IonSpecies:
    c = cfg["ion"]
    return IonSpecies(c["mass_amu"] * AMU, c["wavelength_m"], c["linewidth"], c["zeeman_splitting"])


def build_trap(cfg: RunConfig) -> TrapConfig:
    c = cfg["trap"]
    return TrapConfig(c["secular_frequency"], c["lamb_dicke_x"], c["lamb_dicke_y"], c["mode_ratio"])


def build_model(cfg: RunConfig) -> ScatterModel:
    c = cfg["laser"]
    laser = LaserConfig(c["saturation"], c["detuning"], c["absorption_geometry"])
    return ScatterModel(build_species(cfg), laser, c["emission_geometry"])


def build_initial(cfg: RunConfig):
    c = cfg["initial"]
    if c["state"] == "ground":
        return ground_state(c["n_max"])
    if c["state"] == "thermal":
        return thermal_distribution(c["nbar"], c["n_max"])
    return double_thermal_from_levels(c["p0"], c["p1"], DoubleThermalConstraint.fixed_hot(c["nbar_hot"]), c["n_max"])


def _meta(cfg: RunConfig, command: str, **extra) -> dict:
    meta = {"command": command, "version": __version__, "seed": cfg["run"]["seed"], "config_hash": cfg.digest}
    meta.update(extra)
    return meta


def _levels(cfg: RunConfig) -> list[int]:
    return [int(x) for x in cfg["fit"]["levels"].split(",")]


# --------------------------------------------------------------------------- scenarios


def cmd_ambient(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    c = cfg["ambient"]
    species, trap = build_species(cfg), build_trap(cfg)
    initial = build_initial(cfg)
    t = np.linspace(0.0, c["t_max"], c["n_points"])
    rate = c["heating_rate"]
    bath = [bath_propagate(initial, BathParams(rate, ti)) for ti in t]
    src = ContinuousSource.from_heating_rate(rate, species, trap, c["qtt_step"])
    ens = ensemble_average(initial, src, t, c["n_traj"], cfg["run"]["seed"], n_out=c["n_levels"], workers=workers)
    meta = _meta(cfg, "ambient-sim", n_traj=c["n_traj"], heating_rate=rate)
    pop_rows = [
        (ti, b[0], b[1], 1.0 / (1.0 + rate * ti), p[0], s[0], p[1], s[1])
        for ti, b, p, s in zip(t, bath, ens.populations, ens.population_se)
    ]
    nbar_rows = [(ti, b.mean, n, se) for ti, b, n, se in zip(t, bath, ens.nbar, ens.nbar_se)]
    return [
        write_csv(out / "ambient_populations.csv",
                  ["time_s", "rho00_bath", "rho11_bath", "rho00_closed_ground", "rho00_qtt", "rho00_qtt_se", "rho11_qtt", "rho11_qtt_se"],
                  pop_rows, meta),
        write_csv(out / "ambient_nbar.csv", ["time_s", "nbar_bath", "nbar_qtt", "nbar_qtt_se"], nbar_rows, meta),
    ]


def _qtt_popdata(t, ens, levels) -> PopulationData:
    tt, lv, val, sig = [], [], [], []
    for i, ti in enumerate(t):
        for lvl in levels:
            tt.append(ti)
            lv.append(lvl)
            val.append(min(max(ens.populations[i, lvl], 0.0), 1.0))
            sig.append(max(ens.population_se[i, lvl], 1e-6))
    return PopulationData(tt, lv, val, sig)


def cmd_measure(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    c = cfg["measure"]
    species, trap, model = build_species(cfg), build_trap(cfg), build_model(cfg)
    initial = build_initial(cfg)
    seed = cfg["run"]["seed"]
    dark_src = ContinuousSource.from_heating_rate(c["dark_heating_rate"], species, trap)
    bright_src = DiscreteSource(model, trap, c["emission"], dark_src if c["bright_background"] else None)
    n_out = c["n_levels"]

    t = np.linspace(0.0, c["t_max"], c["n_points"])
    dark = ensemble_average(initial, dark_src, t, c["n_traj"], seed, n_out=n_out, workers=workers)
    bright = ensemble_average(initial, bright_src, t, c["n_traj"], seed, n_out=n_out, workers=workers)

    t_long = np.linspace(0.0, c["dark_t_max"], c["n_points"])
    dark_long = ensemble_average(initial, dark_src, t_long, c["n_traj"], seed, n_out=n_out, workers=workers)
    dark_fit = fit_bath_rate(_qtt_popdata(t_long, dark_long, _levels(cfg)), initial)

    thermal = []
    for i in range(t.size):
        fit = fit_thermal_from_levels(bright.populations[i, :3], np.maximum(bright.population_se[i, :3], 1e-6), levels=[0, 1, 2])
        thermal.append((fit["nbar"], fit.uncertainties["nbar"]))

    meta = _meta(
        cfg, "measure-sim",
        n_traj=c["n_traj"],
        scattering_rate=scattering_rate(model),
        dark_fit_rate=dark_fit["heating_rate"],
        dark_fit_rate_err=dark_fit.uncertainties["heating_rate"],
    )
    cols = ["time_s"]
    for br in ("dark", "bright"):
        for lvl in range(3):
            cols += [f"{br}_rho{lvl}{lvl}", f"{br}_rho{lvl}{lvl}_se"]
    rows = []
    for i, ti in enumerate(t):
        r = [ti]
        for ens in (dark, bright):
            for lvl in range(3):
                r += [ens.populations[i, lvl], ens.population_se[i, lvl]]
        rows.append(r)
    nbar_rows = [
        (ti, dark.nbar[i], dark.nbar_se[i], bright.nbar[i], bright.nbar_se[i], thermal[i][0], thermal[i][1])
        for i, ti in enumerate(t)
    ]
    long_rows = [(ti, p[0], s[0], n, ns) for ti, p, s, n, ns in zip(t_long, dark_long.populations, dark_long.population_se, dark_long.nbar, dark_long.nbar_se)]
    return [
        write_csv(out / "measure_populations.csv", cols, rows, meta),
        write_csv(out / "measure_nbar.csv",
                  ["time_s", "dark_nbar", "dark_nbar_se", "bright_nbar", "bright_nbar_se", "bright_thermal_nbar", "bright_thermal_nbar_err"],
                  nbar_rows, meta),
        write_csv(out / "measure_dark_long.csv", ["time_s", "rho00", "rho00_se", "nbar", "nbar_se"], long_rows, meta),
    ]


def cmd_scan(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    c = cfg["scan"]
    trap, model = build_trap(cfg), build_model(cfg)
    grid = np.linspace(0.0, c["events_max"], c["n_points"])
    sats = c["saturations"] or None
    curves = detuning_scan(model, c["detunings"], trap, c["nbar0"], grid, saturations=sats, band=c["band"])
    meta = _meta(cfg, "detuning-scan")
    for cv in curves:
        meta[f"flags[{cv.meta['detuning'] / TWO_PI / 1e6:+.6g} MHz]"] = ",".join(cv.flags) or "none"
    rows = []
    for cv in curves:
        d = cv.meta["detuning"] / TWO_PI / 1e6
        for g, ti, n, lo, hi in zip(cv.times, cv.meta["t"], cv.values, cv.ci_low, cv.ci_high):
            rows.append((d, cv.meta["saturation"], cv.meta["rate"], g, ti, n, lo, hi))
    paths = [write_csv(out / "detuning_scan.csv",
                       ["detuning_mhz", "saturation", "scatter_rate_per_s", "gamma_t", "time_s", "nbar", "nbar_low", "nbar_high"],
                       rows, meta)]
    if c["qtt_traj"] > 0:
        qrows = []
        for k, cv in enumerate(curves):
            m = model.with_detuning(cv.meta["detuning"], cv.meta["saturation"])
            g = np.linspace(0.0, c["events_max"], c["qtt_points"])
            t = g / cv.meta["rate"]
            init = thermal_distribution(c["nbar0"]) if c["nbar0"] > 0 else ground_state()
            d = cv.meta["detuning"] / TWO_PI / 1e6
            try:
                ens = ensemble_average(init, DiscreteSource(m, trap), t, c["qtt_traj"], cfg["run"]["seed"] + k, n_out=2, workers=workers)
            except OutOfRangeError as exc:
                meta[f"qtt[{d:+.6g} MHz]"] = f"diverged: {exc}"
                continue
            qrows += [(d, gi, ti, n, se) for gi, ti, n, se in zip(g, t, ens.nbar, ens.nbar_se)]
        paths.append(write_csv(out / "detuning_scan_qtt.csv", ["detuning_mhz", "gamma_t", "time_s", "nbar", "nbar_se"], qrows, meta))
    return paths


def cmd_synth(cfg: RunConfig, out: Path, workers: int) -> list[Path]:
    c = cfg["synth"]
    seed = cfg["run"]["seed"]
    initial = build_initial(cfg)
    species, trap, model = build_species(cfg), build_trap(cfg), build_model(cfg)
    if c["truth"] == "bath":
        truth = BathTruth(initial, c["heating_rate"])
    elif c["truth"] == "qtt":
        bg = ContinuousSource.from_heating_rate(c["heating_rate"], species, trap) if c["heating_rate"] > 0 else None
        truth = QttTruth(initial, DiscreteSource(model, trap, background=bg), c["n_traj"])
    else:
        truth = ScatteringTruth(model, trap, initial.mean)
    delays = np.linspace(0.0, c["delays_max"], c["n_delays"])
    shots = c["shots"] if c["shots"] > 0 else None
    meta = _meta(cfg, "synth", truth=c["truth"], kind=c["kind"], analytic=shots is None)
    if c["kind"] == "populations":
        pd = generate_population_data(truth, delays, _levels(cfg), shots, seed)
        n = shots or 1
        rows = [(t, lv, v * n, n) for t, lv, v in zip(pd.times, pd.levels, pd.values)]
        return [write_csv(out / "synth_populations.csv", ["time_s", "level", "counts", "shots"], rows, meta)]
    durations = np.linspace(0.0, c["durations_max"], c["n_durations"])
    sched = ExperimentSchedule(delays, c["kind"], durations, shots, seed)
    probe = ProbeParams(c["rabi"], trap.lamb_dicke_x, trap.lamb_dicke_y, trap.mode_frequency_ratio, cfg["fit"]["readout_error"])
    sets = generate_dataset(truth, sched, probe)
    rows = [(d, t, k, n) for d, ds in zip(delays, sets) for t, k, n in zip(ds.durations, ds.counts, ds.shots)]
    return [write_csv(out / f"synth_{c['kind']}.csv", ["delay_s", "time_s", "counts", "shots"], rows, meta)]


# --------------------------------------------------------------------------- fitting


def _groups(cols):
    delays = cols.get("delay_s", np.zeros_like(cols["time_s"]))
    for d in np.unique(delays):
        yield d, delays == d


def _load_populations(path) -> PopulationData:
    _, cols = read_table(path)
    if {"value", "sigma"} <= cols.keys():
        _, cols = read_populations(path)
        return PopulationData(cols["time_s"], cols["level"], cols["value"], cols["sigma"])
    _, cols = read_dataset(path)
    if "level" not in cols:
        raise CsvParseError("population counts need a 'level' column", None, path)
    return PopulationData.from_counts(cols["time_s"], cols["level"], cols["counts"], cols["shots"])


def _report_rows(fit, extra=()):
    return [
        (name, fit.params[name], fit.uncertainties.get(name, float("nan")), fit.residual_norm, fit.converged, *extra)
        for name in fit.params
    ]


def cmd_fit(kind: str, cfg: RunConfig, inp: Path, out: Path, workers: int) -> list[Path]:
    meta = _meta(cfg, f"fit {kind}", input=inp.name)
    fc = cfg["fit"]
    if kind == "bath":
        data = _load_populations(inp)
        fit = fit_bath_rate(data, build_initial(cfg), weighted=fc["weighted"], levels=_levels(cfg))
        print(json.dumps(fit.report(), sort_keys=True))
        return [write_csv(out / "fit_bath.csv", ["parameter", "value", "uncertainty", "residual_norm", "converged"], _report_rows(fit), meta)]
    if kind == "thermal":
        data = _load_populations(inp)
        rows = []
        for t in data.unique_times:
            sel = data.times == t
            fit = fit_thermal_from_levels(data.values[sel], data.sigmas[sel], levels=data.levels[sel])
            rows.append((t, fit["nbar"], fit.uncertainties["nbar"], fit.residual_norm, fit.converged))
        print(json.dumps({"times": [float(r[0]) for r in rows], "nbar": [float(r[1]) for r in rows]}))
        return [write_csv(out / "fit_thermal.csv", ["time_s", "nbar", "nbar_err", "residual_norm", "converged"], rows, meta)]

    _, cols = read_dataset(inp)
    trap = build_trap(cfg)
    if kind == "carrier":
        rows, reports = [], []
        for d, sel in _groups(cols):
            ds = FlopDataset(cols["time_s"][sel], cols["counts"][sel], cols["shots"][sel], kind=CARRIER)
            fit = fit_carrier_nbar(ds, trap.lamb_dicke_x, trap.lamb_dicke_y, trap.mode_frequency_ratio)
            reports.append(fit.report())
            rows.append((d, fit["rabi"], fit.uncertainties["rabi"], fit["nbar_x"], fit.uncertainties["nbar_x"], fit.residual_norm, fit.converged))
        print(json.dumps(reports, sort_keys=True))
        return [write_csv(out / "fit_carrier.csv",
                          ["delay_s", "rabi_rad_s", "rabi_err", "nbar_x", "nbar_x_err", "residual_norm", "converged"], rows, meta)]
    if kind == "svd":
        rows = []
        for i, (d, sel) in enumerate(_groups(cols)):
            ds = FlopDataset(cols["time_s"][sel], cols["counts"][sel], cols["shots"][sel], kind=BLUE_SIDEBAND)
            est = svd_populations(ds, fc["svd_levels"], fc["rabi"], fc["eta"], fc["n_bootstrap"], cfg["run"]["seed"] + i,
                                  readout_error=fc["readout_error"])
            for lv in range(fc["svd_levels"]):
                rows.append((d, lv, est.point[lv], est.sigma[lv], est.median[lv], est.low[lv], est.high[lv]))
        return [write_csv(out / "fit_svd.csv", ["time_s", "level", "value", "sigma", "median", "low", "high"], rows, meta)]
    raise AssertionError(kind)


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")
    common.add_argument("--format", choices=["csv"], default="csv")

    p = argparse.ArgumentParser(prog="ionheat", description="Trapped-ion heating simulations and thermometry fits.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ambient-sim", parents=[common], help="bath model vs continuous-kick trajectories")
    sub.add_parser("measure-sim", parents=[common], help="dark and bright branches during detection")
    sub.add_parser("detuning-scan", parents=[common], help="scattering-heating curves vs detuning")
    sub.add_parser("synth", parents=[common], help="synthetic dataset with shot noise")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    fit = sub.add_parser("fit", help="fit a dataset")
    fsub = fit.add_subparsers(dest="fit_kind", required=True)
    for k in ("bath", "thermal", "carrier", "svd"):
        fp = fsub.add_parser(k, parents=[common])
        fp.add_argument("input", type=Path, help="dataset CSV")
    return p


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.replace("run", seed=args.seed)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.serialize())
            return EXIT_OK
        out = args.out
        if args.command == "ambient-sim":
            paths = cmd_ambient(cfg, out, args.workers)
        elif args.command == "measure-sim":
            paths = cmd_measure(cfg, out, args.workers)
        elif args.command == "detuning-scan":
            paths = cmd_scan(cfg, out, args.workers)
        elif args.command == "synth":
            paths = cmd_synth(cfg, out, args.workers)
        else:
            paths = cmd_fit(args.fit_kind, cfg, args.input, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CsvParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FitError, ArithmeticError, KickSizeError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # model constructors validate physical parameters taken from the config
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p, file=sys.stderr)
    return EXIT_OK


def main():
    sys.exit(run())
