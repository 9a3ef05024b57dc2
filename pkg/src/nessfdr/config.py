"""Run configuration: TOML ingestion, validation, resolution, sweeps.

A run is described by a sectioned key/value file. Temperatures may be
given either as ``temperature`` or ``beta`` (exactly one), couplings as
``gamma`` or ``coupling_e`` (exactly one); ``cutoff`` accepts a number or
the string "inf". Every load produces a fully resolved plain dictionary
(defaults filled in, units normalised) that is embedded verbatim in the
JSON outputs, so any result can be reproduced from its own file.
"""

from __future__ import annotations

import json
import math
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if _sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .baths import BathSpec, coupling_from_damping, damping_constant
from .chain import ChainParams, SystemMatrices, build_matrices
from .errors import ConfigError

__all__ = ["RunConfig", "SweepSpec", "load_config", "load_sweep", "config_from_dict"]

_FORMATS = ("csv", "json", "both")
_SWEEP_PARAMETERS = ("sigma", "delta_T", "gamma1", "gamma2", "lambda")


@dataclass
class RunConfig:
    """Validated parameters plus the resolved dictionary they came from."""

    chain: ChainParams
    tol_abs: float
    tol_rel: float
    max_evals: int
    t_max: float
    dt: float
    initial_state: str
    out_dir: str
    out_format: str
    seed: int
    resolved: dict = field(repr=False, default_factory=dict)

    def system(self) -> SystemMatrices:
        return build_matrices(self.chain)

    @property
    def baths(self):
        return self.chain.baths


@dataclass
class SweepSpec:
    """One swept parameter with its value list over a base configuration."""

    parameter: str
    values: list
    base: RunConfig

    def configs(self):
        """Resolved config dict for each sweep value, in order."""
        out = []
        for v in self.values:
            out.append(_apply_sweep_value(self.base.resolved, self.parameter, float(v)))
        return out


def _fail(section: str, key: str, message: str):
    raise ConfigError(f"[{section}] {key}: {message}")


def _num(section: str, table: dict, key: str, default=None, positive=False,
         allow_inf=False):
    if key not in table:
        if default is None:
            _fail(section, key, "required")
        return default
    v = table[key]
    if isinstance(v, str):
        if allow_inf and v.strip().lower() in ("inf", "infinity"):
            return math.inf
        _fail(section, key, f"expected a number, got {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(section, key, f"expected a number, got {type(v).__name__}")
    v = float(v)
    if positive and not v > 0:
        _fail(section, key, f"must be positive, got {v}")
    return v


def _bath_from_table(section: str, table: dict, mass: float, label: int) -> BathSpec:
    has_t = "temperature" in table
    has_b = "beta" in table
    if has_t == has_b:
        _fail(section, "temperature/beta", "give exactly one of the two")
    if has_t:
        temp = _num(section, table, "temperature", positive=False)
        if temp < 0:
            _fail(section, "temperature", "must be >= 0")
        beta = math.inf if temp == 0.0 else 1.0 / temp
    else:
        beta = _num(section, table, "beta", positive=True, allow_inf=True)
    has_g = "gamma" in table
    has_e = "coupling_e" in table
    if has_g and has_e:
        _fail(section, "gamma/coupling_e", "give at most one of the two")
    if has_e:
        e = _num(section, table, "coupling_e")
        if e < 0:
            _fail(section, "coupling_e", "must be >= 0")
    else:
        g = _num(section, table, "gamma", default=0.0)
        if g < 0:
            _fail(section, "gamma", "must be >= 0")
        e = coupling_from_damping(g, mass)
    cutoff = _num(section, table, "cutoff", default=math.inf, positive=True, allow_inf=True)
    unknown = set(table) - {"temperature", "beta", "gamma", "coupling_e", "cutoff"}
    if unknown:
        _fail(section, sorted(unknown)[0], "unknown key")
    return BathSpec(beta=beta, coupling_e=e, cutoff=cutoff, label=label)


def config_from_dict(raw: dict, source: str = "<dict>") -> RunConfig:
    """Validate a parsed configuration and fill in defaults."""
    if "chain" not in raw:
        raise ConfigError(f"{source}: missing [chain] section")
    chain_t = raw["chain"]
    mass = _num("chain", chain_t, "mass", default=1.0, positive=True)
    omega = chain_t.get("omega_r")
    if omega is None:
        _fail("chain", "omega_r", "required (list of renormalised frequencies)")
    omega = [float(w) for w in (omega if isinstance(omega, list) else [omega])]
    n = len(omega)
    sigma = _num("chain", chain_t, "sigma", default=0.0)

    baths = []
    for i in range(1, n + 1):
        key = f"bath{i}"
        if key not in raw:
            raise ConfigError(f"{source}: missing [{key}] section")
        baths.append(_bath_from_table(key, raw[key], mass, label=i))

    try:
        chain = ChainParams(mass=mass, omega_r=tuple(omega), sigma=sigma, baths=tuple(baths))
        build_matrices(chain)  # surfaces StabilityViolation at load time
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    quad = raw.get("quadrature", {})
    tol_abs = _num("quadrature", quad, "tol_abs", default=1e-8, positive=True)
    tol_rel = _num("quadrature", quad, "tol_rel", default=1e-8, positive=True)
    max_evals = int(_num("quadrature", quad, "max_evals", default=1_000_000, positive=True))

    tdom = raw.get("timedomain", {})
    t_max = _num("timedomain", tdom, "t_max", default=0.0)
    dt = _num("timedomain", tdom, "dt", default=0.0)
    initial_state = tdom.get("initial_state", "ground")
    if initial_state not in ("ground",):
        _fail("timedomain", "initial_state", f"unknown selector {initial_state!r}")

    out = raw.get("output", {})
    out_dir = str(out.get("directory", "out"))
    out_format = str(out.get("format", "both"))
    if out_format not in _FORMATS:
        _fail("output", "format", f"must be one of {_FORMATS}")

    seed = int(raw.get("seed", 0))

    resolved = {
        "chain": {"mass": mass, "omega_r": omega, "sigma": sigma},
        "quadrature": {"tol_abs": tol_abs, "tol_rel": tol_rel, "max_evals": max_evals},
        "timedomain": {"t_max": t_max, "dt": dt, "initial_state": initial_state},
        "output": {"directory": out_dir, "format": out_format},
        "seed": seed,
    }
    for i, b in enumerate(baths, start=1):
        resolved[f"bath{i}"] = {
            "beta": "inf" if math.isinf(b.beta) else b.beta,
            "gamma": damping_constant(b.coupling_e, mass),
            "cutoff": "inf" if math.isinf(b.cutoff) else b.cutoff,
        }
    if "sweep" in raw:
        resolved["sweep"] = dict(raw["sweep"])

    return RunConfig(
        chain=chain,
        tol_abs=tol_abs,
        tol_rel=tol_rel,
        max_evals=max_evals,
        t_max=t_max,
        dt=dt,
        initial_state=initial_state,
        out_dir=out_dir,
        out_format=out_format,
        seed=seed,
        resolved=resolved,
    )


def load_config(path) -> RunConfig:
    """Load a TOML config, or a JSON file embedding one under "config"."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix.lower() == ".json":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        if "config" in raw and isinstance(raw["config"], dict):
            raw = raw["config"]
    else:
        try:
            with open(path, "rb") as fh:
                raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, source=str(path))


def load_sweep(cfg: RunConfig) -> SweepSpec:
    """Extract the sweep description from a loaded configuration."""
    sweep = cfg.resolved.get("sweep")
    if not sweep:
        raise ConfigError("missing [sweep] section")
    parameter = sweep.get("parameter")
    if parameter not in _SWEEP_PARAMETERS:
        raise ConfigError(
            f"[sweep] parameter: must be one of {_SWEEP_PARAMETERS}, got {parameter!r}")
    if "values" in sweep:
        values = [float(v) for v in sweep["values"]]
    else:
        start = _num("sweep", sweep, "start")
        stop = _num("sweep", sweep, "stop")
        count = int(_num("sweep", sweep, "count", positive=True))
        scale = sweep.get("scale", "linear")
        if scale == "linear":
            step = (stop - start) / max(count - 1, 1)
            values = [start + k * step for k in range(count)]
        elif scale == "log":
            if start <= 0 or stop <= 0:
                raise ConfigError("[sweep] log scale needs positive start/stop")
            values = [float(v) for v in np.geomspace(start, stop, count)]
        else:
            raise ConfigError(f"[sweep] scale: unknown {scale!r}")
    if not all(math.isfinite(v) for v in values):
        raise ConfigError("[sweep] values must be finite")
    return SweepSpec(parameter=parameter, values=values, base=cfg)


def _apply_sweep_value(resolved: dict, parameter: str, value: float) -> dict:
    """New resolved-config dict with one parameter replaced."""
    new = json.loads(json.dumps(resolved))  # deep copy, JSON-clean
    new.pop("sweep", None)
    if parameter == "sigma":
        new["chain"]["sigma"] = value
    elif parameter == "delta_T":
        betas = []
        for key in ("bath1", "bath2"):
            b = new[key]["beta"]
            betas.append(math.inf if b == "inf" else float(b))
        temps = [0.0 if math.isinf(b) else 1.0 / b for b in betas]
        mean_t = 0.5 * (temps[0] + temps[1])
        t1, t2 = mean_t + value / 2.0, mean_t - value / 2.0
        if t1 < 0 or t2 < 0:
            raise ConfigError(f"delta_T={value} drives a temperature negative")
        for key, t in (("bath1", t1), ("bath2", t2)):
            new[key]["beta"] = "inf" if t == 0.0 else 1.0 / t
    elif parameter in ("gamma1", "gamma2"):
        key = "bath1" if parameter == "gamma1" else "bath2"
        if value < 0:
            raise ConfigError(f"{parameter} must be >= 0")
        new[key]["gamma"] = value
        new[key].pop("coupling_e", None)
    elif parameter == "lambda":
        if value <= 0:
            raise ConfigError("lambda must be positive")
        for key in ("bath1", "bath2"):
            new[key]["cutoff"] = value
    # bath tables must carry one coupling key and one temperature key
    for key in ("bath1", "bath2"):
        if "gamma" in new[key] and "coupling_e" in new[key]:
            new[key].pop("coupling_e")
    return new
