"""Reproducible experiment runner.

Subcommands: focus, movie, scan, full, sre, snr, wigner.  Parameters come
from a key=value config file, a named preset, and command-line overrides
(flags win over file values, file over preset, preset over defaults).
Unknown keys are rejected.  Every run echoes its resolved configuration to
the output directory and writes a manifest with the config hash, seed and
package version; reruns with identical configuration are byte-identical
(the manifest's wall time excepted).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .focus import FocusConfig, design_for_sigma, design_for_targets, focusing_function
from .hilbert import BasisSpec, coherent_density, fock_density, thermal_state, tensor_with_vacuum, thermal_populations
from .model import MicroscopeParams, assemble_model, build_scan_operators
from .trajectory import (IntegratorConfig, NumericalError, ScanProtocol,
                         full_ensemble, movie_ensemble, scan_ensemble, sre_ensemble)
from .signal import FilterConfig, filter_many, snr_cascade, snr_ensemble
from .analysis import PhaseSpaceGrid, wigner

SEC5_K0L0 = float(np.sqrt(2 * 23 / 76))   # trap with V0 = 5 E_r: k0 l0 = sqrt(2 E_r/hbar omega)

# every recognized configuration key with its parser and default
_KEYS = {
    "epsilon": (float, None),
    "beta": (float, None),
    "k0_l0": (float, SEC5_K0L0),
    "z0": (float, 0.0),
    "window": (float, 7.5),
    "sigma": (float, None),          # if set, (epsilon, beta) are designed
    "eps_over_beta": (float, None),  # design at fixed ratio ...
    "vna_budget": (float, None),     # ... or to a V_na^max budget (hbar*omega)
    "gamma": (float, 1.0),
    "cooperativity": (float, float("inf")),
    "kappa_over_omega": (float, 50.0),
    "p_ge": (float, 0.0),
    "p_re": (float, 0.0),
    "homodyne_phase": (float, -np.pi / 2),
    "motional_dim": (int, 16),
    "cavity_dim": (int, 4),
    "aux_dim": (int, 8),
    "dt": (float, 0.002),
    "t_end": (float, float(2 * np.pi)),
    "record_stride": (int, 1),
    "snapshot_stride": (int, 0),
    "scheme": (str, "euler_maruyama"),
    "loss_mode": (str, "jump"),
    "z_start": (float, -4.0),
    "z_end": (float, 4.0),
    "duration": (float, 50.0),
    "repeats": (int, 1),
    "n_grid": (int, 256),
    "state": (str, "coherent:2"),
    "tau": (str, "auto"),
    "snr_time": (float, None),
    "snr_mode": (str, "ensemble"),
    "ensemble": (int, 1),
    "threads": (str, "1"),
    "seed": (int, 0),
    "save_max": (int, 8),
    "zp_max": (float, 6.0),
    "n_phase": (int, 128),
}

PRESETS = {
    # focusing-function engineering, standing-wave configuration
    "fig3": {"epsilon": 0.1, "beta": 0.2, "k0_l0": SEC5_K0L0, "window": 7.5},
    # experimental operating point: sodium in a V0 = 5 E_r lattice
    "sec5": {"epsilon": 0.1, "beta": 0.3, "k0_l0": SEC5_K0L0, "window": 7.5},
    # movie mode: coherent wave packet monitored at the trap center
    "fig6": {"sigma": 0.5, "eps_over_beta": 1 / 3, "k0_l0": SEC5_K0L0, "window": 7.9,
             "z0": 0.0, "gamma": 2.0, "kappa_over_omega": 50.0, "motional_dim": 16,
             "state": "coherent:2", "dt": 0.004, "t_end": float(2 * np.pi),
             "tau": "auto"},
    # scanning mode: three consecutive scans over a thermal atom
    "fig9": {"sigma": 0.5, "eps_over_beta": 1.0, "k0_l0": 0.5, "window": 11.0,
             "gamma": 20.0, "cooperativity": 200.0, "kappa_over_omega": 0.1,
             "motional_dim": 12, "state": "thermal:1", "dt": 0.002,
             "z_start": -4.0, "z_end": 4.0, "duration": 50.0, "repeats": 3,
             "t_end": 150.0, "tau": "auto", "n_grid": 256},
    # resolution-limit sweeps (single operating point; tests sweep C)
    "fig10": {"sigma": 0.35, "vna_budget": 0.1, "k0_l0": 0.4, "window": 14.0,
              "gamma": 10.0, "cooperativity": 200.0, "kappa_over_omega": 0.1,
              "motional_dim": 10, "state": "fock:1", "dt": 0.001,
              "z_start": -4.0, "z_end": 4.0, "duration": 100.0, "repeats": 1,
              "t_end": 100.0, "tau": "auto"},
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw):
    typ, _ = _KEYS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if typ is float:
            return float(raw)
        if typ is int:
            return int(raw)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _parse_value(key, val)
    return out


def resolve_config(preset: str | None, file: str | None, overrides: dict) -> dict:
    cfg = {k: d for k, (_, d) in _KEYS.items()}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
        cfg.update(PRESETS[preset])
    if file is not None:
        cfg.update(parse_config_file(file))
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _parse_value(key, val)
    return cfg


def _focus_config(cfg: dict) -> FocusConfig:
    if cfg["sigma"] is not None:
        if cfg["vna_budget"] is not None:
            return design_for_targets(cfg["sigma"], cfg["vna_budget"], cfg["k0_l0"],
                                      window=cfg["window"], z0=cfg["z0"])
        ratio = cfg["eps_over_beta"] if cfg["eps_over_beta"] is not None else 1.0
        return design_for_sigma(cfg["sigma"], ratio, cfg["k0_l0"],
                                window=cfg["window"], z0=cfg["z0"])
    if cfg["epsilon"] is None or cfg["beta"] is None:
        raise ConfigError("need either sigma (design route) or epsilon and beta; "
                          "required keys: epsilon, beta | sigma")
    return FocusConfig(epsilon=cfg["epsilon"], beta=cfg["beta"], k0_l0=cfg["k0_l0"],
                       z0=cfg["z0"], window=cfg["window"])


def _params(cfg: dict) -> MicroscopeParams:
    return MicroscopeParams(
        gamma=cfg["gamma"], cooperativity=cfg["cooperativity"],
        kappa_over_omega=cfg["kappa_over_omega"], p_ge=cfg["p_ge"], p_re=cfg["p_re"],
        homodyne_phase=cfg["homodyne_phase"], focus=_focus_config(cfg))


def _initial_state(cfg: dict, basis: BasisSpec):
    kind, _, arg = cfg["state"].partition(":")
    if kind == "coherent":
        return coherent_density(complex(arg or "2"), basis)
    if kind == "fock":
        return fock_density(int(arg or "0"), basis)
    if kind == "thermal":
        return thermal_state(float(arg or "1"), basis)
    raise ConfigError(f"unknown state {cfg['state']!r} (coherent:a | fock:n | thermal:nth)")


def _icfg(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(dt=cfg["dt"], t_end=cfg["t_end"], seed=cfg["seed"],
                            record_stride=cfg["record_stride"],
                            snapshot_stride=cfg["snapshot_stride"],
                            scheme=cfg["scheme"], loss_mode=cfg["loss_mode"])


def _tau(cfg: dict, mode: str) -> float:
    if cfg["tau"] != "auto":
        return float(cfg["tau"])
    if mode in ("scan", "sre"):
        length = abs(cfg["z_end"] - cfg["z_start"])
        sigma = cfg["sigma"] if cfg["sigma"] else focusing_function(_focus_config(cfg)).sigma_numeric
        return cfg["duration"] * sigma / length
    # movie: tau = sigma / v with v the packet speed at the focus
    sigma = cfg["sigma"] if cfg["sigma"] else focusing_function(_focus_config(cfg)).sigma_numeric
    kind, _, arg = cfg["state"].partition(":")
    alpha = abs(complex(arg or "2")) if kind == "coherent" else 1.0
    return sigma / (np.sqrt(2.0) * alpha)


def _threads(cfg: dict) -> int:
    t = cfg["threads"]
    if t == "auto":
        return os.cpu_count() or 1
    return max(1, int(t))


def _config_text(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, float):
            lines.append(f"{key} = {val!r}")
        else:
            lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def _write_table(path, header_cols, array, meta: dict | None = None):
    with open(path, "w") as fh:
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n")
        fh.write("# " + "\t".join(header_cols) + "\n")
        np.savetxt(fh, array, fmt="%.12g", delimiter="\t")


def _ensemble_summary(outdir, trajs, tau):
    filt = filter_many(trajs, FilterConfig(tau))
    times = trajs[0].times
    mean = filt.mean(axis=0)
    stderr = filt.std(axis=0, ddof=1) / np.sqrt(len(trajs)) if len(trajs) > 1 else np.zeros_like(mean)
    surv = np.stack([t.survival for t in trajs]).mean(axis=0)
    pt = trajs[0].pop_times
    _write_table(os.path.join(outdir, "mean_current.tsv"),
                 ["time", "mean_filtered_current", "stderr"],
                 np.column_stack([times, mean, stderr]), {"tau": tau, "ensemble": len(trajs)})
    _write_table(os.path.join(outdir, "survival.tsv"), ["time", "mean_survival"],
                 np.column_stack([pt, surv]))
    return ["mean_current.tsv", "survival.tsv"]


def _save_trajectories(outdir, trajs, save_max):
    files = []
    for tr in trajs[:save_max]:
        name = f"traj_{tr.meta['index']:04d}.tsv"
        tr.to_text(os.path.join(outdir, name))
        files.append(name)
    return files


def _cmd_focus(cfg, outdir):
    fc = _focus_config(cfg)
    prof = focusing_function(fc)
    z = np.linspace(fc.z0 - fc.window, fc.z0 + fc.window, 1001)
    table = np.column_stack([z, prof(z), prof.vna(z, "exact"), prof.vna(z, "expansion")])
    _write_table(os.path.join(outdir, "focus.tsv"),
                 ["z", "f", "vna_exact", "vna_expansion"], table,
                 {"epsilon": fc.epsilon, "beta": fc.beta, "k0_l0": fc.k0_l0})
    report = {
        "epsilon": fc.epsilon, "beta": fc.beta, "k0_l0": fc.k0_l0,
        "z0": fc.z0, "window": fc.window,
        "sigma_numeric_l0": prof.sigma_numeric,
        "sigma_analytic_l0": prof.sigma_analytic,
        "sigma_analytic_lambda0": prof.sigma_analytic_lambda0,
        "vna_max_hbar_omega": prof.vna_max,
        "vna_max_recoil": prof.vna_max_recoil,
        "overlap_max": prof.overlap_max,
        "norm_constant": prof.norm_constant,
    }
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ["focus.tsv", "report.json"]


def _cmd_movie(cfg, outdir):
    params = _params(cfg)
    basis = BasisSpec(cfg["motional_dim"])
    ops = assemble_model(params, basis)
    rho0 = _initial_state(cfg, basis)
    trajs = movie_ensemble(rho0, ops, params, _icfg(cfg), cfg["ensemble"], _threads(cfg))
    files = _ensemble_summary(outdir, trajs, _tau(cfg, "movie"))
    return files + _save_trajectories(outdir, trajs, cfg["save_max"])


def _cmd_scan(cfg, outdir):
    params = _params(cfg)
    basis = BasisSpec(cfg["motional_dim"])
    protocol = ScanProtocol(cfg["z_start"], cfg["z_end"], cfg["duration"], cfg["repeats"])
    rho0 = _initial_state(cfg, basis)
    trajs = scan_ensemble(rho0, params, protocol, _icfg(cfg), cfg["ensemble"],
                          _threads(cfg), n_grid=cfg["n_grid"])
    files = _ensemble_summary(outdir, trajs, _tau(cfg, "scan"))
    return files + _save_trajectories(outdir, trajs, cfg["save_max"])


def _cmd_full(cfg, outdir):
    params = _params(cfg)
    basis = BasisSpec(cfg["motional_dim"], cavity_dim=cfg["cavity_dim"])
    ops = assemble_model(params, BasisSpec(cfg["motional_dim"]))
    rho0 = tensor_with_vacuum(_initial_state(cfg, BasisSpec(cfg["motional_dim"])), basis)
    trajs = full_ensemble(rho0, ops, params, _icfg(cfg), cfg["ensemble"], _threads(cfg))
    files = _ensemble_summary(outdir, trajs, _tau(cfg, "movie"))
    return files + _save_trajectories(outdir, trajs, cfg["save_max"])


def _cmd_sre(cfg, outdir):
    params = _params(cfg)
    d = cfg["motional_dim"]
    protocol = ScanProtocol(cfg["z_start"], cfg["z_end"], cfg["duration"], cfg["repeats"])
    kind, _, arg = cfg["state"].partition(":")
    if kind == "thermal":
        p0 = thermal_populations(float(arg or "1"), d)
    elif kind == "fock":
        p0 = np.zeros(d)
        p0[int(arg or "0")] = 1.0
    else:
        raise ConfigError("sre supports state = thermal:nth | fock:n")
    trajs = sre_ensemble(p0, params, protocol, _icfg(cfg), cfg["ensemble"],
                         _threads(cfg), n_grid=cfg["n_grid"])
    files = _ensemble_summary(outdir, trajs, _tau(cfg, "sre"))
    return files + _save_trajectories(outdir, trajs, cfg["save_max"])


def _cmd_snr(cfg, outdir):
    params = _params(cfg)
    basis = BasisSpec(cfg["motional_dim"])
    tau = _tau(cfg, "movie")
    t_eval = cfg["snr_time"] if cfg["snr_time"] is not None else cfg["t_end"]
    if cfg["snr_mode"] == "cascade":
        ops = assemble_model(params, basis)
        est = snr_cascade(_initial_state(cfg, basis), ops, params, FilterConfig(tau),
                          t_eval, mode="reduced", aux_dim=cfg["aux_dim"])
    elif cfg["snr_mode"] == "ensemble":
        ops = assemble_model(params, basis)
        trajs = movie_ensemble(_initial_state(cfg, basis), ops, params, _icfg(cfg),
                               max(cfg["ensemble"], 2), _threads(cfg))
        est = snr_ensemble(trajs, FilterConfig(tau), t_eval)
    else:
        raise ConfigError("snr_mode must be 'ensemble' or 'cascade'")
    with open(os.path.join(outdir, "snr.jsonl"), "a") as fh:
        fh.write(est.to_json() + "\n")
    return ["snr.jsonl"]


def _cmd_wigner(cfg, outdir):
    basis = BasisSpec(cfg["motional_dim"])
    rho = _initial_state(cfg, basis)
    grid = PhaseSpaceGrid(cfg["zp_max"], cfg["zp_max"], cfg["n_phase"], cfg["n_phase"])
    grid.check_covers(min(cfg["motional_dim"], 8))
    W = wigner(rho, grid)
    _write_table(os.path.join(outdir, "wigner.tsv"),
                 [f"rows=z[{grid.z[0]}..{grid.z[-1]}]", f"cols=p[{grid.p[0]}..{grid.p[-1]}]"],
                 W, {"nz": len(grid.z), "np": len(grid.p), "state": cfg["state"]})
    return ["wigner.tsv"]


_COMMANDS = {
    "focus": _cmd_focus,
    "movie": _cmd_movie,
    "scan": _cmd_scan,
    "full": _cmd_full,
    "sre": _cmd_sre,
    "snr": _cmd_snr,
    "wigner": _cmd_wigner,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomscope",
        description="Continuous dispersive-readout microscope simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--ensemble", type=int, default=None)
        p.add_argument("--threads", default=None, help="worker threads or 'auto'")
        p.add_argument("--out", default=None, help="output directory "
                       "(default $ATOMSCOPE_OUTDIR/<command> or ./runs/<command>)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        for key in ("epsilon", "beta", "k0_l0", "sigma", "gamma", "cooperativity",
                    "kappa_over_omega", "tau", "dt", "t_end", "state", "duration",
                    "z_start", "z_end", "repeats", "snr_mode", "snr_time",
                    "motional_dim", "window", "z0", "eps_over_beta", "vna_budget"):
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.time()
    try:
        overrides = {}
        for key in _KEYS:
            if hasattr(args, key) and getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set needs KEY=VALUE, got {item!r}")
            k, _, v = item.partition("=")
            if k.strip() not in _KEYS:
                raise ConfigError(f"unknown key {k.strip()!r}")
            overrides[k.strip()] = v
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.ensemble is not None:
            overrides["ensemble"] = args.ensemble
        if args.threads is not None:
            overrides["threads"] = args.threads
        cfg = resolve_config(args.preset, args.config, overrides)

        outdir = args.out or os.path.join(
            os.environ.get("ATOMSCOPE_OUTDIR", "runs"), args.command)
        os.makedirs(outdir, exist_ok=True)
        config_text = _config_text(cfg)
        with open(os.path.join(outdir, "config.txt"), "w") as fh:
            fh.write(config_text)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        files = _COMMANDS[args.command](cfg, outdir)
        status = "complete"
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _write_manifest(outdir, config_text, cfg, [], "failed", t0)
        return 3

    _write_manifest(outdir, config_text, cfg, files, status, t0)
    print(f"wrote {outdir}: {' '.join(['config.txt', 'manifest.json'] + files)}")
    return 0


def _write_manifest(outdir, config_text, cfg, files, status, t0):
    manifest = {
        "version": __version__,
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "seed": cfg["seed"],
        "files": files,
        "status": status,
        "wall_time_s": round(time.time() - t0, 3),
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    sys.exit(main())
