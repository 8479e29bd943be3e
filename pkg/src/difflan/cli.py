"""Batch front-end: ``difflan <subcommand> CONFIG.json [--override key=value ...]``.

Every run writes ``report.json`` plus CSV tables into the output directory.
Reports embed the resolved configuration and the library version and carry no
timestamps, so identical configurations give byte-identical files.

Exit status: 0 when all checks pass, 2 when a check fails, 1 on error.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, DiffLanError
from .kernel import T_MIN, density_bounds, heat_kernel, kernel_csv, kernel_identity_checks
from .lanlab import clt_check, lan_experiment, plot_data_csv, remainder_decay_rate, resolve_threads
from .model import DEFAULT_RADIUS, DriftSpec, Grid, check_admissible
from .parabolic import derivative_limit_gap, remainder_recursion, taylor_order_study
from .score import derivative_field, derivative_field_quadrature, density_fd_oracle, lan_norm, score_field
from .sim import (
    RngStream,
    exact_skeleton_sample,
    occupation_chi_square,
    simulate_reflected,
    subsample,
)
from .spectral import build_decomposition, richardson_eigenvalues, spectral_diagnostics

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

COMMON = {"b": {"sine": []}, "n_grid": 512, "radius": DEFAULT_RADIUS, "out_dir": "difflan-out"}

DEFAULTS = {
    "spectrum": {"n_grid": 2048, "max_mode": 32, "richardson_modes": 16, "richardson_tol": 1e-4},
    "kernel": {"times": [0.25], "tolerance": 1e-7},
    "score": {"h": {"sine": [1.0]}, "delta": 0.5, "oracle_points": 32, "oracles": True,
              "quadrature_nodes": 32, "fd_eta": 1e-3, "quadrature_tol": 1e-6, "fd_tol": 1e-3,
              "centering_tol": 1e-6},
    "parabolic": {"h": {"sine": [1.0]}, "y": 0.3, "delta": 0.5, "delta_reg": 0.05, "k_max": 2,
                  "steps": 2048, "etas": [2.0 ** -i for i in range(1, 7)], "telescoping_tol": 1e-10},
    "simulate": {"method": "euler", "x0": 0.5, "T": 2000.0, "dt": 1e-3, "delta": 0.5, "n": 1000,
                 "seed": 0, "bins": 32},
    "lan-verify": {"h": {"sine": [0.5]}, "delta": 0.5, "n_list": [100, 400, 1600], "M": 200,
                   "seed": 0, "remainder_threshold": 0.05, "clt_n": None, "clt_M": 1000},
}


# ------------------------------------------------------------------ config


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, item: str) -> None:
    """``a.b=value`` sets ``config['a']['b']``; values are parsed as JSON when possible."""
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override must look like key=value, got {item!r}")
    *path, last = key.split(".")
    node = config
    for p in path:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override path {key!r} crosses a non-object value")
    node[last] = _parse_value(value)


def resolve_config(command: str, raw: dict, overrides=()) -> dict:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    cfg = copy.deepcopy(COMMON)
    cfg.update(copy.deepcopy(DEFAULTS[command]))
    cfg.update(copy.deepcopy(raw))
    for item in overrides:
        apply_override(cfg, item)
    unknown = set(cfg) - set(COMMON) - set(DEFAULTS[command])
    if unknown:
        raise ConfigurationError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg["b"] = DriftSpec.from_config(cfg["b"]).to_config()
    if "h" in cfg:
        cfg["h"] = DriftSpec.from_config(cfg["h"]).to_config()
    Grid(cfg["n_grid"])
    for key in ("delta", "times"):
        vals = cfg.get(key)
        vals = vals if isinstance(vals, list) else [vals]
        if key in cfg and any(v is None or float(v) < T_MIN for v in vals):
            raise ConfigurationError(f"{key} must be at least t_min={T_MIN}")
    return cfg


def _drift(cfg, key="b") -> DriftSpec:
    return DriftSpec.from_config(cfg[key])


# ------------------------------------------------------------------ subcommands


def run_spectrum(cfg):
    b = _drift(cfg)
    check_admissible(b, cfg["radius"], allow_constant=True)
    dec = build_decomposition(b, cfg["n_grid"])
    diag = spectral_diagnostics(dec, max_mode=cfg["max_mode"])
    lam = dec.eigenvalues
    result = {
        "lambda_0": float(lam[0]),
        "lambda_1": float(lam[1]),
        "diagnostics": diag.to_json(),
    }
    passed = diag.passed
    if b.is_zero:
        j = np.arange(cfg["richardson_modes"] + 1)
        rich = richardson_eigenvalues(b, cfg["n_grid"], j.size)
        rel = np.abs(rich[1:] / (-(j[1:] * math.pi) ** 2) - 1.0)
        ok = bool(rel.max() < cfg["richardson_tol"] and abs(rich[0]) < 1e-9)
        result["richardson"] = {"max_relative_error": float(rel.max()), "lambda_0": float(rich[0]), "passed": ok}
        passed = passed and ok
    return passed, result, {"spectrum.csv": diag.to_csv()}


def run_kernel(cfg):
    b = _drift(cfg)
    check_admissible(b, cfg["radius"], allow_constant=True)
    dec = build_decomposition(b, cfg["n_grid"])
    times = [float(t) for t in cfg["times"]]
    ident = kernel_identity_checks(dec, times, tolerance=cfg["tolerance"])
    result = {"identities": ident.to_json(), "bounds": density_bounds(dec, times)}
    return ident.passed, result, {"kernel.csv": kernel_csv(heat_kernel(dec, min(times)))}


def _subgrid(n: int, points: int) -> np.ndarray:
    points = min(points, n)
    return (np.arange(points) * n) // points + n // (2 * points)


def run_score(cfg):
    b, h = _drift(cfg), _drift(cfg, "h")
    check_admissible(b, cfg["radius"])
    delta = float(cfg["delta"])
    dec = build_decomposition(b, cfg["n_grid"])
    sf = score_field(dec, h, delta)
    idx = _subgrid(cfg["n_grid"], cfg["oracle_points"])
    norm = lan_norm(sf)
    centering = sf.centering_defect()
    result = {"lan_norm": norm, "lan_norm_sq": norm * norm, "centering_defect": centering}
    passed = centering < cfg["centering_tol"]
    if cfg["oracles"] and not h.is_zero:
        d = derivative_field(dec, h, delta)[np.ix_(idx, idx)]
        scale = float(np.max(np.abs(d)))
        quad = derivative_field_quadrature(dec, h, delta, cfg["quadrature_nodes"])[np.ix_(idx, idx)]
        fd = density_fd_oracle(b, h, delta, cfg["fd_eta"], cfg["n_grid"])[np.ix_(idx, idx)]
        q_err = float(np.max(np.abs(d - quad)) / scale)
        f_err = float(np.max(np.abs(d - fd)) / scale)
        result["oracles"] = {"quadrature_relative_error": q_err, "fd_relative_error": f_err}
        passed = passed and q_err < cfg["quadrature_tol"] and f_err < cfg["fd_tol"]
    nodes = dec.grid.nodes[idx]
    rows = ["x\\y," + ",".join(repr(float(v)) for v in nodes)]
    for i, xi in zip(idx, nodes):
        rows.append(repr(float(xi)) + "," + ",".join(repr(float(v)) for v in sf.score[i, idx]))
    return passed, result, {"score.csv": "\n".join(rows) + "\n"}


def run_parabolic(cfg):
    b, h = _drift(cfg), _drift(cfg, "h")
    check_admissible(b, cfg["radius"])
    n, steps, k_max = cfg["n_grid"], cfg["steps"], cfg["k_max"]
    y, delta, dreg = float(cfg["y"]), float(cfg["delta"]), float(cfg["delta_reg"])
    dec0 = build_decomposition(DriftSpec(), n)
    stack = remainder_recursion(b, h, y, dreg, k_max, delta, n, steps, dec0=dec0)
    tel = stack.telescoping_defect()
    orders = [
        taylor_order_study(b, h, y, dreg, k, cfg["etas"], delta, n, steps, stack=stack, dec0=dec0)
        for k in range(min(k_max, 2) + 1)
    ]
    result = {"telescoping_defect": tel, "orders": [o.to_json() for o in orders]}
    if k_max >= 1:
        dec = build_decomposition(b, n)
        col = int(np.argmin(np.abs(dec.grid.nodes - y)))
        ref = derivative_field(dec, h, delta)[:, col]
        result["derivative_limit_gap"] = derivative_limit_gap(stack, ref)
    passed = tel < cfg["telescoping_tol"] and all(o.passed for o in orders)
    lines = ["x," + ",".join(f"v{k}" for k in range(k_max + 1))]
    finals = [v[-1] for v in stack.terms]
    for i, x in enumerate(dec0.grid.nodes):
        lines.append(repr(float(x)) + "," + ",".join(repr(float(v[i])) for v in finals))
    return passed, result, {"terms.csv": "\n".join(lines) + "\n"}


def run_simulate(cfg):
    b = _drift(cfg)
    check_admissible(b, cfg["radius"], allow_constant=True)
    seed = int(cfg["seed"])
    if cfg["method"] == "euler":
        path = simulate_reflected(b, float(cfg["x0"]), float(cfg["T"]), float(cfg["dt"]), RngStream(seed))
        chi = occupation_chi_square(path, b, bins=cfg["bins"])
        sample = subsample(path, float(cfg["delta"]))
        in_range = bool(np.all((path.states >= 0.0) & (path.states <= 1.0)))
        result = {"chi_square": vars(chi) | {"passed": chi.passed}, "states_in_unit_interval": in_range}
        passed = chi.passed and in_range
    elif cfg["method"] == "exact":
        dec = build_decomposition(b, cfg["n_grid"])
        sample = exact_skeleton_sample(dec, float(cfg["delta"]), int(cfg["n"]), RngStream(seed))
        result = {}
        passed = True
    else:
        raise ConfigurationError(f"unknown simulation method {cfg['method']!r}")
    result["sample"] = sample.metadata()
    return passed, result, {"sample.csv": sample.to_csv()}


def run_lan_verify(cfg, threads=None):
    b, h = _drift(cfg), _drift(cfg, "h")
    n_list = [int(n) for n in cfg["n_list"]]
    delta, seed = float(cfg["delta"]), int(cfg["seed"])
    common = dict(n_grid=cfg["n_grid"], radius=cfg["radius"], threads=threads)
    reports = lan_experiment(b, h, delta, n_list, int(cfg["M"]), seed, **common)
    med = [r.summary()["median_abs_remainder"] for r in reports]
    files = {f"records_n{r.n}.csv": r.records_csv() for r in reports}
    files["plot_data.csv"] = plot_data_csv(reports)
    result = {"reports": [r.to_json() for r in reports], "remainder_decay_rate": remainder_decay_rate(reports)}
    if h.is_zero:
        passed = all(not np.any(r.remainder) for r in reports)
    else:
        decreasing = all(a > c for a, c in zip(med, med[1:]))
        passed = decreasing and med[-1] < cfg["remainder_threshold"]
        result["remainder_decreasing"] = decreasing
    if cfg["clt_n"] is not None:
        rep = lan_experiment(b, h, delta, [int(cfg["clt_n"])], int(cfg["clt_M"]), seed, **common)[0]
        clt = clt_check(rep)
        result["clt"] = clt.to_json()
        files["clt_qq.csv"] = clt.qq_csv()
        passed = passed and clt.passed
    return passed, result, files


COMMANDS = {
    "spectrum": run_spectrum,
    "kernel": run_kernel,
    "score": run_score,
    "parabolic": run_parabolic,
    "simulate": run_simulate,
    "lan-verify": run_lan_verify,
}


# ------------------------------------------------------------------ entry point


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="difflan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"difflan {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="JSON configuration file ('-' for defaults only)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: DIFFLAN_THREADS or all cores)")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    return p


def run(command: str, config_path: str, overrides=(), threads=None, out=None) -> int:
    out_dir = Path(out) if out else None
    try:
        raw = {} if config_path == "-" else json.loads(Path(config_path).read_text())
        cfg = resolve_config(command, raw, overrides)
        out_dir = Path(out) if out else Path(cfg["out_dir"])
        threads = resolve_threads(threads)
        fn = COMMANDS[command]
        passed, result, files = fn(cfg, threads) if command == "lan-verify" else fn(cfg)
    except (DiffLanError, ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        err = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc),
               "version": __version__}
        sys.stdout.write(_dump(err))
        if out_dir is not None:
            try:
                out_dir.mkdir(parents=True, exist_ok=True)
                (out_dir / "error.json").write_text(_dump(err))
            except OSError:
                pass
        return EXIT_ERROR
    report = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "status": "pass" if passed else "fail",
        "result": result,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dump(report))
    for name, text in files.items():
        (out_dir / name).write_text(text)
    sys.stdout.write(_dump({"command": command, "status": report["status"], "out_dir": str(out_dir)}))
    return EXIT_PASS if passed else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.override, args.threads, args.out)


if __name__ == "__main__":
    sys.exit(main())
