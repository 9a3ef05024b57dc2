"""Command-line interface.

Subcommands: ``fdr-check``, ``heat-current``, ``sweep``, ``relax``. Each
reads one TOML config (or a JSON output embedding one), writes CSV/JSON
files into the output directory, and exits with

    0  success,
    1  usage or configuration error,
    2  physics/invariant failure,
    3  numerical non-convergence or oracle disagreement.

All JSON payloads are deterministic (sorted keys, no timestamps); timing
goes into a separate ``*_timing.json`` sidecar. CSV files are UTF-8 with
LF line endings and 17-significant-digit floats.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fdr, timedomain, transport
from .config import RunConfig, config_from_dict, load_config, load_sweep
from .errors import (
    ConfigError,
    ConsistencyFailure,
    NonConvergence,
    StabilityViolation,
    StepTooCoarse,
)
from .quadrature import resonance_hints
from .transport import characteristic_power

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2
EXIT_NUMERICAL = 3

_TOL_FDR = 1e-9          # relative residual allowed in the decomposition
_BIAS_NULL_SCALE = 1e-12  # bias norm treated as zero, relative to the noise matrix


# ---------------------------------------------------------------------------
# serialisation helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _sanitize(obj):
    """JSON-safe copy: numpy scalars/arrays unwrapped, non-finite as strings."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict):
    text = json.dumps(_sanitize(payload), sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else _fmt(c) for c in row) + "\n")


def _write_timing(out_dir: Path, command: str, seconds: float):
    with open(out_dir / f"{command}_timing.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"command": command, "wall_seconds": seconds}, fh, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _kappa_grid(sys, baths, n_base=120):
    """Symmetric frequency grid with extra points around each mode."""
    kmin, kmax, _ = transport.integration_domain(sys, baths, tol_abs=1e-8)
    span = min(kmax, 4.0 * max(resonance_hints(sys)) + 4.0 * max(
        (b.temperature for b in baths), default=0.0) + 1.0)
    base = np.linspace(kmin, span, n_base)
    gbar = max(float(sys.gamma_diag.max()), 1e-3)
    clusters = [np.linspace(w - 6 * gbar, w + 6 * gbar, 41) for w in resonance_hints(sys)]
    pos = np.unique(np.concatenate([base] + clusters))
    pos = pos[(pos >= kmin) & (pos <= span)]
    return np.concatenate([-pos[::-1], pos])


def _flat_labels(prefix, n):
    out = []
    for i in range(n):
        for j in range(n):
            out.append(f"{prefix}_re_{i + 1}{j + 1}")
            out.append(f"{prefix}_im_{i + 1}{j + 1}")
    return out


def _flatten(mat):
    out = []
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            z = complex(mat[i, j])
            out.extend([z.real, z.imag])
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fdr_check(cfg: RunConfig, out_dir: Path) -> int:
    sys_m = cfg.system()
    baths = cfg.baths
    if sys_m.n != 2:
        print("fdr-check needs a two-oscillator chain", file=sys.stderr)
        return EXIT_CONFIG
    grid = _kappa_grid(sys_m, baths)
    rows = []
    residuals = np.empty(grid.size)
    bias_norms = np.empty(grid.size)
    for i, k in enumerate(grid):
        dec = fdr.fdr_decompose(float(k), sys_m, baths)
        residuals[i] = dec.residual
        bias_norms[i] = float(np.linalg.norm(dec.bias))
        rows.append([k, dec.residual, bias_norms[i]]
                    + _flatten(dec.conventional) + _flatten(dec.bias)
                    + _flatten(dec.direct_hadamard))

    noise_scale = max(
        float(np.linalg.norm(fdr.fdr_decompose(float(k), sys_m, baths).direct_hadamard))
        for k in resonance_hints(sys_m)
    )
    beta1, beta2 = baths[0].beta, baths[1].beta
    sigma = float(sys_m.omega2[0, 1])
    null_expected = (beta1 == beta2) or sigma == 0.0
    bias_max = float(bias_norms.max())
    residual_max = float(residuals.max())

    ok = residual_max <= _TOL_FDR
    if null_expected:
        ok = ok and bias_max <= _BIAS_NULL_SCALE * max(noise_scale, 1.0)

    summary = {
        "config": cfg.resolved,
        "max_residual": residual_max,
        "tol_residual": _TOL_FDR,
        "bias_norm_max": bias_max,
        "bias_null_expected": null_expected,
        "bias_profile": [[float(k), float(b)] for k, b in zip(grid, bias_norms)],
        "passed": bool(ok),
    }
    if cfg.out_format in ("json", "both"):
        write_json(out_dir / "fdr_summary.json", summary)
    if cfg.out_format in ("csv", "both"):
        header = (["kappa", "residual", "bias_norm"]
                  + _flat_labels("conventional", 2) + _flat_labels("bias", 2)
                  + _flat_labels("hadamard", 2))
        write_csv(out_dir / "fdr_decomposition.csv", header, rows)
    return EXIT_OK if ok else EXIT_INVARIANT


def _transport_checks(report, baths, sigma, tol_abs) -> list:
    """Invariant violations (empty list when all pass)."""
    problems = []
    scale = max(np.abs(report.p_xi).max(), np.abs(report.p_gamma).max(), 1e-300)
    if report.conservation_defect > 1e-8 * scale:
        problems.append(
            f"conservation defect {report.conservation_defect:.3e} exceeds 1e-8 x {scale:.3e}")
    anti = abs(report.net[0, 0] + report.net[1, 1])
    if anti > 1e-8 * scale:
        problems.append(f"net flow not antisymmetric: {anti:.3e}")
    t1, t2 = baths[0].temperature, baths[1].temperature
    null_expected = (baths[0].beta == baths[1].beta) or sigma == 0.0
    j = report.heat_current_j
    j_floor = max(10.0 * tol_abs, 1e-10 * scale)
    if null_expected:
        if abs(j) > j_floor:
            problems.append(f"expected zero current, got {j:.3e}")
    elif abs(j) > j_floor and math.copysign(1.0, j) != math.copysign(1.0, t1 - t2):
        problems.append(f"current sign {j:.3e} opposes the temperature bias {t1 - t2:.3e}")
    return problems


def cmd_heat_current(cfg: RunConfig, out_dir: Path) -> int:
    sys_m = cfg.system()
    baths = cfg.baths
    if sys_m.n != 2:
        print("heat-current needs a two-oscillator chain", file=sys.stderr)
        return EXIT_CONFIG
    report = transport.heat_current(
        sys_m, baths, tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel, max_evals=cfg.max_evals)
    sigma = float(sys_m.omega2[0, 1])
    problems = _transport_checks(report, baths, sigma, cfg.tol_abs)
    payload = {
        "config": cfg.resolved,
        "report": report.to_dict(),
        "invariant_problems": problems,
        "passed": not problems,
    }
    if cfg.out_format in ("json", "both"):
        write_json(out_dir / "heat_current.json", payload)
    if cfg.out_format in ("csv", "both"):
        grid_meta = report.grid_meta.get("matrix", {})
        write_csv(
            out_dir / "heat_current_summary.csv",
            ["J", "conservation_defect", "tol_abs", "tol_rel", "panels", "evaluations"],
            [[report.heat_current_j, report.conservation_defect, report.tol_abs,
              report.tol_rel, grid_meta.get("panels", 0), grid_meta.get("evaluations", 0)]],
        )
    if problems:
        for p in problems:
            print(f"invariant failure: {p}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _sweep_worker(payload):
    """One sweep point; runs in a worker process."""
    resolved, value, tol_abs, tol_rel, max_evals = payload
    try:
        cfg = config_from_dict(resolved, source="<sweep>")
        sys_m = cfg.system()
        baths = cfg.baths
        report = transport.heat_current(
            sys_m, baths, tol_abs=tol_abs, tol_rel=tol_rel, max_evals=max_evals)
        grid = _kappa_grid(sys_m, baths, n_base=40)
        grid = grid[grid > 0]
        bias_peak = max(
            float(np.linalg.norm(fdr.fdr_decompose(float(k), sys_m, baths).bias))
            for k in grid
        )
        return {
            "value": value,
            "J": report.heat_current_j,
            "bias_peak": bias_peak,
            "conservation_defect": report.conservation_defect,
            "status": "ok",
            "error": "",
        }
    except Exception as exc:  # per-row capture; the sweep must not abort
        return {
            "value": value, "J": float("nan"), "bias_peak": float("nan"),
            "conservation_defect": float("nan"), "status": "error",
            "error": f"{type(exc).__name__}: {exc}",
        }


def cmd_sweep(cfg: RunConfig, out_dir: Path) -> int:
    spec = load_sweep(cfg)
    payloads = [
        (resolved, value, cfg.tol_abs, cfg.tol_rel, cfg.max_evals)
        for resolved, value in zip(spec.configs(), spec.values)
    ]
    workers = os.environ.get("NESSFDR_WORKERS")
    workers = int(workers) if workers else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(payloads)))
    if workers == 1:
        results = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, payloads))

    header = ["parameter", "value", "J", "bias_peak", "conservation_defect", "status", "error"]
    rows = [
        [spec.parameter, r["value"], r["J"], r["bias_peak"], r["conservation_defect"],
         r["status"], r["error"]]
        for r in results
    ]
    write_csv(out_dir / "sweep_results.csv", header, rows)
    if cfg.out_format in ("json", "both"):
        write_json(out_dir / "sweep_summary.json", {
            "config": cfg.resolved,
            "parameter": spec.parameter,
            "rows": results,
            "passed": all(r["status"] == "ok" for r in results),
        })
    return EXIT_OK if all(r["status"] == "ok" for r in results) else EXIT_INVARIANT


def cmd_relax(cfg: RunConfig, out_dir: Path) -> int:
    sys_m = cfg.system()
    baths = cfg.baths
    if cfg.t_max <= 0 or cfg.dt <= 0:
        print("relax needs positive [timedomain] t_max and dt", file=sys.stderr)
        return EXIT_CONFIG
    trace = timedomain.transient_powers(cfg.t_max, cfg.dt, sys_m, baths)
    j_late = trace.late_time_current()
    total = np.einsum("rii->r", trace.p_h_t)
    rate = timedomain.fit_decay_rate(trace.times, total - total[-1])

    freq_j = None
    agreement = None
    if sys_m.n == 2:
        report = transport.heat_current(
            sys_m, baths, tol_abs=cfg.tol_abs, tol_rel=cfg.tol_rel, max_evals=cfg.max_evals)
        freq_j = report.heat_current_j
        denom = max(abs(freq_j), characteristic_power(sys_m, baths) * 1e-6)
        agreement = abs(j_late - freq_j) / denom

    summary = {
        "config": cfg.resolved,
        "late_time_current": j_late,
        "late_time_net_trace": float(total[-1]),
        "decay_rate_fit": rate,
        "frequency_domain_j": freq_j,
        "relative_agreement": agreement,
        "meta": trace.meta,
    }
    if cfg.out_format in ("json", "both"):
        write_json(out_dir / "relax_summary.json", summary)
    if cfg.out_format in ("csv", "both"):
        write_csv(out_dir / "relax_trace.csv", ["time", "entry", "value"],
                  list(trace.iter_long_rows()))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nessfdr",
        description="Steady-state and transient heat transport of a two-oscillator "
                    "chain between thermal baths.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fdr-check", "per-frequency decomposition of the noise matrix"),
        ("heat-current", "steady heat current with the three-way consistency check"),
        ("sweep", "heat current over a swept parameter"),
        ("relax", "real-time relaxation trace"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="TOML config (or JSON embedding one)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--format", default=None, choices=["csv", "json", "both"])
        p.add_argument("--tol-abs", type=float, default=None)
        p.add_argument("--tol-rel", type=float, default=None)
    return parser


_DISPATCH = {
    "fdr-check": cmd_fdr_check,
    "heat-current": cmd_heat_current,
    "sweep": cmd_sweep,
    "relax": cmd_relax,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.out_dir = args.out
            cfg.resolved["output"]["directory"] = args.out
        if args.format is not None:
            cfg.out_format = args.format
            cfg.resolved["output"]["format"] = args.format
        if args.tol_abs is not None:
            cfg.tol_abs = args.tol_abs
            cfg.resolved["quadrature"]["tol_abs"] = args.tol_abs
        if args.tol_rel is not None:
            cfg.tol_rel = args.tol_rel
            cfg.resolved["quadrature"]["tol_rel"] = args.tol_rel
    except (ConfigError, StabilityViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        code = _DISPATCH[args.command](cfg, out_dir)
    except (ConfigError, StabilityViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepTooCoarse as exc:
        hint = f" (suggested dt: {exc.suggested_dt:g})" if exc.suggested_dt else ""
        print(f"step too coarse: {exc}{hint}", file=sys.stderr)
        return EXIT_INVARIANT
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConsistencyFailure as exc:
        print(f"consistency failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_timing(out_dir, args.command.replace("-", "_"), time.perf_counter() - start)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
