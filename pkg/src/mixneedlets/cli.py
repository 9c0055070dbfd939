"""Command-line pipelines over the needlet library.

Each subcommand reads a flat JSON config (plus command-line overrides),
writes its outputs atomically into ``--out`` and prints a JSON run summary.
Exit status: 0 success, 2 bad config or input, 3 numeric contract violated.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .besov import BesovParams, level_profile, lp_norm, eval_grid_for
from .errors import NeedletError
from .harmonics import AlmSet
from .needlet import (bank_for, build_bank, build_filter, max_level_for,
                      needlet_analyze, needlet_synthesize)
from .sht import analyze, em_compose, make_grid, synthesize, transform_method
from .stochastic import (Observations, RegularSpectrumModel, clt_experiment,
                         field_values, gamma_hat, gamma_moments, level_correlation, shrink_denoise,
                         simulate_fields, spin_white_noise, substream)

COMMANDS = ("filter-table", "make-bank", "simulate", "analyze", "synthesize", "besov",
            "estimate", "uncorrelation", "clt", "denoise")

# key -> (type, validator or None)
_pos = lambda v: v > 0
_nonneg = lambda v: v >= 0
SCHEMA = {
    "B": (float, lambda v: v > 1),
    "s": (int, lambda v: abs(v) <= 16),
    "lmax": (int, _nonneg),
    "j_max": (int, None),
    "j_min": (int, None),
    "j": (int, None),
    "j_lo": (int, None),
    "j_hi": (int, None),
    "seed": (int, _nonneg),
    "kind": (str, lambda v: v in ("spin", "mixed")),
    "mode": (str, lambda v: v in ("E", "M")),
    "spectra": (str, None),
    "alm": (str, None),
    "alm_T": (str, None),
    "map": (str, None),
    "coeffs": (str, None),
    "reference": (str, None),
    "observations": (str, None),
    "p": (float, lambda v: v >= 1),
    "q": (float, _pos),
    "r": (float, _pos),
    "n_reps": (int, lambda v: v >= 100),
    "c": (float, _pos),
    "t_n": (float, _nonneg),
    "noise_sigma": (float, _nonneg),
    "alpha": (float, lambda v: v > 2),
    "rho_TE": (float, lambda v: -1 <= v <= 1),
    "rho_TM": (float, lambda v: -1 <= v <= 1),
    "n_xi": (int, lambda v: v >= 2),
    "xi_min": (float, _pos),
    "xi_max": (float, _pos),
    "tolerance": (float, _pos),
}

DEFAULT_TOL = {"filter-table": 1e-12, "make-bank": 1e-12, "analyze": 1e-10,
               "synthesize": 1e-8, "denoise": 1e-6}


class ConfigError(NeedletError):
    pass


class ContractViolation(NeedletError):
    pass


def _coerce(key, value):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    typ, ok = SCHEMA[key]
    try:
        if typ is int and (isinstance(value, bool) or float(value) != int(float(value))):
            raise ValueError
        v = typ(value) if typ is not int else int(float(value))
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {typ.__name__}, got {value!r}") from None
    if ok is not None and not ok(v):
        raise ConfigError(f"config key {key!r} out of range: {v!r}")
    return v


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat JSON object")
    out = {}
    for k, v in raw.items():
        if isinstance(v, (dict, list)):
            raise ConfigError(f"config key {k!r} must be a scalar")
        out[k] = _coerce(k, v)
    return out


class Run:
    """Collects inputs, outputs, timings and results for the summary."""

    def __init__(self, command, cfg, out_dir, seed):
        self.command, self.cfg, self.out, self.seed = command, cfg, Path(out_dir), seed
        self.inputs, self.outputs, self.timings, self.results = {}, [], {}, {}

    def path(self, key):
        p = self.cfg.get(key)
        if p is None:
            raise ConfigError(f"{self.command} needs config key {key!r}")
        if not Path(p).is_file():
            raise ConfigError(f"input {key}={p!r} does not exist")
        self.inputs[str(p)] = formats.sha256_file(p)
        return p

    def need(self, key, default=None):
        v = self.cfg.get(key, default)
        if v is None:
            raise ConfigError(f"{self.command} needs config key {key!r}")
        return v

    def wrote(self, path):
        self.outputs.append(str(path))

    @contextlib.contextmanager
    def timed(self, name):
        t = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t, 6)

    def summary(self, status):
        return {"command": self.command, "status": status, "seed": self.seed,
                "inputs": self.inputs, "outputs": self.outputs,
                "timings": self.timings, "results": self.results}


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _spectra(run: Run):
    if "spectra" in run.cfg:
        return formats.read_spectra(run.path("spectra"))
    model = RegularSpectrumModel(alpha_T=run.cfg.get("alpha", 2.5), alpha_E=run.cfg.get("alpha", 2.5),
                                 alpha_M=run.cfg.get("alpha", 2.5), rho_TE=run.cfg.get("rho_TE", 0.5),
                                 rho_TM=run.cfg.get("rho_TM", 0.0))
    return model.spectra(run.need("lmax", 64))


def _bank(run: Run, lmax: int, s: int):
    filt = build_filter(run.cfg.get("B", 2.0))
    j_max = run.cfg.get("j_max", max_level_for(lmax, s, filt) if lmax > abs(s) else None)
    if j_max is None:
        raise ConfigError("j_max is required when lmax leaves nothing above |s|")
    return build_bank(filt, s, j_max, run.cfg.get("j_min"))


def _load_field(run: Run, s: int) -> AlmSet:
    if "alm" in run.cfg:
        return formats.read_alm(run.path("alm"))
    if "map" in run.cfg:
        smap = formats.read_map(run.path("map"), s)
        return analyze(smap)
    raise ConfigError(f"{run.command} needs 'alm' or 'map'")


def _tol(run):
    return run.cfg.get("tolerance", DEFAULT_TOL.get(run.command, np.inf))


def _check(run, name, value, tol):
    run.results[name] = _finite(value)
    run.results[name + "_tolerance"] = tol
    if not value <= tol:
        raise ContractViolation(f"{name} = {value:.3e} exceeds tolerance {tol:.3e}")


def cmd_filter_table(run: Run):
    filt = build_filter(run.cfg.get("B", 2.0))
    xi = np.logspace(np.log10(run.cfg.get("xi_min", 1e-2)), np.log10(run.cfg.get("xi_max", 1e4)),
                     run.cfg.get("n_xi", 10000))
    with run.timed("evaluate"):
        phi, b, part = filt.phi(xi), filt.b(xi), filt.partition(xi)
    resid = np.abs(part - 1)
    run.wrote(formats.write_csv(run.out / "filter_table.csv",
                                ["xi", "phi", "b", "partition_residual"], zip(xi, phi, b, resid)))
    _check(run, "max_partition_residual", float(resid.max()), _tol(run))


def cmd_make_bank(run: Run):
    s = run.cfg.get("s", 2)
    with run.timed("build"):
        bank = _bank(run, run.cfg.get("lmax", 64), s)
    rows, worst = [], 0.0
    for lv in bank.levels:
        w = lv.weights
        worst = max(worst, abs(w.sum() - 4 * np.pi))
        rows.append([lv.j, lv.Ld, lv.grid.ntheta, lv.grid.nphi, lv.npoints, w.sum(), w.min(), w.max()])
    run.wrote(formats.write_csv(run.out / "bank.csv", ["j", "L", "ntheta", "nphi", "npoints",
                                                       "weight_sum", "weight_min", "weight_max"], rows))
    run.results.update(spin=s, B=bank.B, j_min=bank.j_min, j_max=bank.j_max)
    _check(run, "max_weight_sum_error", worst, _tol(run))


def cmd_simulate(run: Run):
    s = run.cfg.get("s", 2)
    spectra = _spectra(run)
    with run.timed("simulate"):
        T, modes = simulate_fields(spectra, s, run.seed)
        F = em_compose(modes)
    grid = make_grid(spectra.lmax)
    with run.timed("synthesize"):
        mT, mF = synthesize(T, grid), synthesize(F, grid)
    for name, writer, obj in (("spectra.csv", formats.write_spectra, spectra),
                              ("alm_T.bin", formats.write_alm, T),
                              ("alm_spin.bin", formats.write_alm, F),
                              ("map_T.csv", formats.write_map, mT),
                              ("map_spin.csv", formats.write_map, mF)):
        run.wrote(writer(run.out / name, obj))
    run.results["max_imag_T_over_max_abs"] = _finite(
        np.abs(mT.values.imag).max() / max(np.abs(mT.values).max(), 1e-300))
    run.results.update(spin=s, lmax=spectra.lmax)


def cmd_analyze(run: Run):
    s = run.cfg.get("s", 2)
    kind = run.cfg.get("kind", "mixed")
    with run.timed("load"):
        alm = _load_field(run, s)
    if alm.spin != s and not (kind == "mixed" and alm.spin == 0):
        raise ConfigError(f"input spin {alm.spin} does not match s = {s}")
    bank = _bank(run, alm.lmax, s)
    with run.timed("analyze"):
        coeffs = needlet_analyze(alm, bank, kind)
    run.wrote(formats.write_coeffs(run.out / "coeffs.jsonl", coeffs, bank))
    target = alm.drop_null() if alm.spin == s else alm
    energy = target.norm() ** 2
    resid = abs(coeffs.energy() - energy) / energy if energy > 0 else coeffs.energy()
    run.results.update(kind=kind, spin=s, j_min=bank.j_min, j_max=bank.j_max, lmax=alm.lmax,
                       covers_bandlimit=bank.covers(alm.lmax))
    if alm.spin == s and bank.covers(alm.lmax):
        _check(run, "frame_residual", resid, _tol(run))


def cmd_synthesize(run: Run):
    with run.timed("load"):
        coeffs, bank = formats.read_coeffs(run.path("coeffs"))
    lmax = run.cfg.get("lmax", coeffs.lmax)
    with run.timed("synthesize"):
        alm = needlet_synthesize(coeffs, bank, lmax)
        smap = synthesize(alm, make_grid(lmax))
    run.wrote(formats.write_alm(run.out / "alm_out.bin", alm))
    run.wrote(formats.write_map(run.out / "map_out.csv", smap))
    if "reference" in run.cfg:
        ref_path = run.path("reference")
        ref = (formats.read_alm(ref_path) if ref_path.endswith(".bin")
               else analyze(formats.read_map(ref_path, alm.spin)))
        ref = ref.resized(lmax)
        if ref.spin == bank.spin:
            ref = ref.drop_null()
        err = (alm - ref).norm() / max(ref.norm(), 1e-300)
        _check(run, "roundtrip_rel_error", err, _tol(run))


def cmd_besov(run: Run):
    s = run.cfg.get("s", 2)
    alm = _load_field(run, s)
    bank = _bank(run, alm.lmax, s)
    params = BesovParams(run.cfg.get("p", 2.0), run.cfg.get("q", 2.0), run.cfg.get("r", 1.0))
    p = params.p
    with run.timed("analyze"):
        prof = {k: level_profile(needlet_analyze(alm, bank, k), p) for k in ("spin", "mixed")}
    expo = params.r + 2 * (0.5 - 1 / p)
    rows, norms = [], {}
    for j in bank.js:
        a, b = prof["spin"].values[j], prof["mixed"].values[j]
        rows.append([j, a, b, a / b if b > 0 else float("nan")])
    fnorm = lp_norm(synthesize(alm, eval_grid_for(alm.lmax)), p)
    for k in ("spin", "mixed"):
        terms = np.array([bank.B ** (j * expo) * prof[k].values[j] for j in bank.js])
        norms[k] = fnorm + float(np.sum(terms ** params.q) ** (1 / params.q))
    run.wrote(formats.write_csv(run.out / "besov_levels.csv",
                                ["j", "spin_profile", "mixed_profile", "ratio"], rows))
    run.results.update(p=p, q=params.q, r=params.r, lp_norm=fnorm,
                       besov_norm_spin=norms["spin"], besov_norm_mixed=norms["mixed"])


def cmd_estimate(run: Run):
    s = run.cfg.get("s", 2)
    T = formats.read_alm(run.path("alm_T"))
    F = formats.read_alm(run.path("alm"))
    spectra = formats.read_spectra(run.path("spectra"))
    bank = _bank(run, F.lmax, s)
    modes = [run.cfg["mode"]] if "mode" in run.cfg else ["E", "M"]
    js = [run.cfg["j"]] if "j" in run.cfg else bank.js
    rows = []
    with run.timed("estimate"):
        cT = needlet_analyze(T, bank, "mixed", levels=js)
        cF = needlet_analyze(F, bank, "mixed", levels=js)
        for j in js:
            for mode in modes:
                try:
                    mean, var = gamma_moments(spectra, bank.filter, j, s, mode)
                except NeedletError:
                    mean, var = float("nan"), float("nan")
                g = gamma_hat(cT, cF, j, mode)
                z = (g.value - mean) / np.sqrt(var) if var > 0 else float("nan")
                rows.append([j, mode, g.value, mean, var, z])
    run.wrote(formats.write_csv(run.out / "estimate.csv",
                                ["j", "mode", "gamma_hat", "mean", "var", "z"], rows))


def cmd_uncorrelation(run: Run):
    s = run.cfg.get("s", 2)
    spectra = _spectra(run)
    filt = build_filter(run.cfg.get("B", 2.0))
    mode = run.cfg.get("mode", "E")
    rows, stat = [], {}
    x = np.linspace(1.0, 20.0, 400)
    for j in range(run.cfg.get("j_lo", 3), run.cfg.get("j_hi", 6) + 1):
        d = x / filt.B ** j
        corr = level_correlation(spectra, filt, j, s, mode, d)
        scaled = np.abs(corr) * (1 + x) ** 2
        rows.extend([j, xi, di, ci, si] for xi, di, ci, si in zip(x, d, corr, scaled))
        env = np.abs(level_correlation(spectra, filt, j, s, mode, np.linspace(0.5, np.pi, 2000)))
        stat[j] = {"max_scaled": float(scaled.max()), "envelope_beyond_0.5": float(env.max())}
    run.wrote(formats.write_csv(run.out / "uncorrelation.csv",
                                ["j", "scaled_distance", "d", "corr", "corr_times_decay"], rows))
    run.results["levels"] = {str(j): v for j, v in stat.items()}


def cmd_clt(run: Run):
    s = run.cfg.get("s", 2)
    spectra = _spectra(run)
    bank = bank_for(spectra.lmax, s, run.cfg.get("B", 2.0))
    j, mode = run.cfg.get("j", 4), run.cfg.get("mode", "E")
    with run.timed("replicates"):
        res = clt_experiment(spectra, bank, j, mode, run.cfg.get("n_reps", 500), run.seed)
    run.wrote(formats.write_csv(run.out / "clt_samples.csv", ["replicate", "gamma_hat", "z"],
                                ([i, g, z] for i, (g, z) in enumerate(zip(res.raw, res.samples)))))
    run.results.update(j=j, mode=mode, skewness=res.skewness, excess_kurtosis=res.excess_kurtosis,
                       analytic_mean=res.mean, analytic_var=res.var,
                       sample_mean=float(res.raw.mean()), sample_var=float(res.raw.var(ddof=1)))


def cmd_denoise(run: Run):
    s = run.cfg.get("s", 2)
    if "observations" in run.cfg:
        a = formats._read_csv(run.path("observations"), ["theta", "phi", "re", "im", "weight"])
        obs = Observations(a[:, 0], a[:, 1], a[:, 2] + 1j * a[:, 3], a[:, 4])
        lmax = run.need("lmax")
        truth = None
    else:
        truth = formats.read_alm(run.path("alm"))
        lmax = truth.lmax
    bank = _bank(run, lmax, s)
    if truth is not None:
        top = bank.levels[-1]
        th, ph = top.points
        clean = Observations(th, ph, np.zeros(th.size), top.weights)
        sigma = run.cfg.get("noise_sigma", 0.0)
        noise = spin_white_noise(th.size, sigma, substream(run.seed, 0))
        obs = clean.with_values(field_values(truth, clean) + noise)
        run.wrote(formats.write_csv(run.out / "observations.csv",
                                    ["theta", "phi", "re", "im", "weight"],
                                    zip(th, ph, obs.values.real, obs.values.imag, obs.weights)))
    c, t_n = run.cfg.get("c", 3.0), run.cfg.get("t_n", 0.0)
    with run.timed("denoise"):
        den = shrink_denoise(obs, bank, c, t_n)
    run.wrote(formats.write_alm(run.out / "alm_denoised.bin", den))
    if truth is not None:
        ref = truth.resized(den.lmax).drop_null()
        err = (den - ref).norm() / max(ref.norm(), 1e-300)
        run.results["rel_error"] = _finite(err)
        if run.cfg.get("noise_sigma", 0.0) == 0.0:
            _check(run, "noiseless_rel_error", err, _tol(run))


HANDLERS = {
    "filter-table": cmd_filter_table, "make-bank": cmd_make_bank, "simulate": cmd_simulate,
    "analyze": cmd_analyze, "synthesize": cmd_synthesize, "besov": cmd_besov,
    "estimate": cmd_estimate, "uncorrelation": cmd_uncorrelation, "clt": cmd_clt,
    "denoise": cmd_denoise,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixneedlets", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat JSON object of parameters")
    ap.add_argument("--seed", type=int, help="random seed (overrides config)")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--oracle", action="store_true", help="use direct-summation transforms")
    ap.add_argument("--tolerance", type=float, help="verification tolerance (overrides config)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override one config key")
    return ap


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    if not argv:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    rs = None
    try:
        cfg = load_config(args.config)
        for item in args.set:
            k, sep, v = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            cfg[k] = _coerce(k, v if SCHEMA.get(k, (str,))[0] is str else json.loads(v))
        if args.seed is not None:
            cfg["seed"] = _coerce("seed", args.seed)
        if args.tolerance is not None:
            cfg["tolerance"] = _coerce("tolerance", args.tolerance)
        rs = Run(args.command, cfg, args.out, cfg.get("seed", 0))
        with transform_method("direct" if args.oracle else "fft"), rs.timed("total"):
            HANDLERS[args.command](rs)
    except ContractViolation as e:
        rs.results["error"] = str(e)
        print(json.dumps(rs.summary("contract-violation")))
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (NeedletError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(rs.summary("ok")))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
