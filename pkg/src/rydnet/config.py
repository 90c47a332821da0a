"""Experiment configuration: INI files, built-in presets and their resolution.

A configuration is a set of sections of ``key = value`` pairs::

    [experiment]
    kind = tune
    seed = 7

    [topology]
    kind = line
    n = 9
    b = 4

    [physics]
    frequency_unit = 2pi_MHz
    gamma = 6
    omega_r = 1

    [schedule]
    a = shifted_root 100 10
    T = constant 250e-6
    m = power 25 2

Frequencies are given in units of 2*pi*MHz and converted to rad/s.  Rates
(``nu``, ``mu``, ``rho``) are taken as given.  Vector quantities accept a
single value or a comma-separated list with one entry per particle;
fractions such as ``1/6`` are allowed.
"""

from __future__ import annotations

import configparser
import copy
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .graph import InterferenceGraph, lattice_graph, line_graph, read_graph
from .physics import TWO_PI_MHZ, LaserParams, RateVector, rates_from_rabi
from .tuner import Schedule, parse_family

__all__ = ["PRESETS", "ExperimentConfig", "load_file", "parse_text", "resolve", "merge"]

EXPERIMENTS = ("equilibrium", "simulate", "hitting-time", "tune", "achievable")
FREQUENCY_UNITS = ("2pi_MHz",)

_FIG4_PHYSICS = {"frequency_unit": "2pi_MHz", "gamma": "6", "omega_e": "3", "omega_r": "1"}

PRESETS: dict[str, dict[str, dict[str, str]]] = {
    "fig4": {
        "experiment": {"kind": "hitting-time", "seed": "4"},
        "topology": {"kind": "lattice", "rows": "4", "cols": "4"},
        "physics": dict(_FIG4_PHYSICS),
        "hitting": {"samples": "1000", "sizes": "4 6", "large_sizes": "8", "bins": "fd"},
    },
    "fig5": {
        "experiment": {"kind": "equilibrium", "seed": "5"},
        "topology": {"kind": "line", "n": "9", "b": "1"},
        "physics": {"rho": "10"},
    },
    "fig6": {
        "experiment": {"kind": "tune", "seed": "6"},
        "topology": {"kind": "line", "n": "9", "b": "4"},
        "physics": {"frequency_unit": "2pi_MHz", "gamma": "6", "omega_r": "1"},
        "tune": {"mode": "stochastic", "targets": "1/6", "estimator": "ensemble", "max_iterations": "40"},
        "schedule": {"a": "shifted_root 100 10", "T": "constant 250e-6", "m": "power 25 2"},
    },
    "fig7": {
        "experiment": {"kind": "tune", "seed": "7"},
        "topology": {"kind": "line", "n": "9", "b": "4"},
        "physics": {"frequency_unit": "2pi_MHz", "gamma": "6", "omega_r": "1"},
        "tune": {
            "mode": "stochastic",
            "targets": "1/6",
            "estimator": "ensemble",
            "max_iterations": "10",
            "report_iterations": "0 3 10",
        },
        "schedule": {"a": "shifted_root 100 10", "T": "constant 250e-6", "m": "power 25 2"},
    },
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in override.items():
        out.setdefault(section, {}).update(values)
    return out


def parse_text(text: str, path=None) -> tuple[dict, dict]:
    """Parse INI text into ``(sections, line_numbers)``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path) if path else "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], path, line) from None
    sections = {s: dict(parser[s]) for s in parser.sections()}

    lines = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.strip()
        if body.startswith("[") and body.endswith("]"):
            current = body[1:-1].strip()
        elif current and "=" in body and not body.startswith(("#", ";")):
            lines[(current, body.split("=", 1)[0].strip())] = lineno
    return sections, lines


def load_file(path) -> tuple[dict, dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text, path)


def _number(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    experiment: str
    graph: InterferenceGraph
    topology: dict
    seed: int
    output: Path
    laser: LaserParams | None = None
    rates: RateVector | None = None
    omega_r: np.ndarray | None = None
    gamma: float | None = None
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def resolved_rates(self) -> RateVector:
        if self.rates is not None:
            return self.rates
        if self.laser is None:
            raise ConfigError("experiment needs omega_e (with omega_r, gamma) or nu/mu/rho")
        return rates_from_rabi(self.laser)

    def as_dict(self) -> dict:
        """Canonical content for output headers (no output path, no timestamps)."""
        out = {s: dict(v) for s, v in self.raw.items()}
        out.setdefault("experiment", {})["seed"] = str(self.seed)
        out["experiment"].pop("output", None)
        return out


class _Resolver:
    def __init__(self, raw, lines, path):
        self.raw = raw
        self.lines = lines
        self.path = path

    def error(self, section, key, message):
        return ConfigError(f"[{section}] {key}: {message}", self.path, self.lines.get((section, key)))

    def get(self, section, key, default=None, required=False):
        value = self.raw.get(section, {}).get(key)
        if value is None or value == "":
            if required:
                raise ConfigError(f"missing required key [{section}] {key}", self.path)
            return default
        return value

    def integer(self, section, key, default=None, required=False, minimum=None):
        value = self.get(section, key, None, required)
        if value is None:
            return default
        try:
            out = int(value)
        except ValueError:
            raise self.error(section, key, f"expected an integer, got {value!r}") from None
        if minimum is not None and out < minimum:
            raise self.error(section, key, f"must be at least {minimum}")
        return out

    def scalar(self, section, key, default=None, required=False):
        value = self.get(section, key, None, required)
        if value is None:
            return default
        try:
            return _number(value)
        except (ValueError, ZeroDivisionError):
            raise self.error(section, key, f"expected a number, got {value!r}") from None

    def vector(self, section, key, n, required=False):
        value = self.get(section, key, None, required)
        if value is None:
            return None
        try:
            items = [_number(v) for v in value.replace(",", " ").split()]
        except (ValueError, ZeroDivisionError):
            raise self.error(section, key, f"expected numbers, got {value!r}") from None
        if len(items) == 1:
            items = items * n
        if len(items) != n:
            raise self.error(section, key, f"expected 1 or {n} values, got {len(items)}")
        return np.array(items)


def _build_graph(r: _Resolver):
    kind = r.get("topology", "kind", required=True)
    try:
        if kind == "line":
            n = r.integer("topology", "n", required=True, minimum=1)
            b = r.integer("topology", "b", required=True, minimum=0)
            return line_graph(n, b), {"kind": "line", "n": n, "b": b}
        if kind == "lattice":
            rows = r.integer("topology", "rows", required=True, minimum=1)
            cols = r.integer("topology", "cols", required=True, minimum=1)
            return lattice_graph(rows, cols), {"kind": "lattice", "rows": rows, "cols": cols}
        if kind == "graph":
            file = r.get("topology", "file", required=True)
            base = Path(r.path).parent if r.path else Path(".")
            fpath = Path(file) if Path(file).is_absolute() else base / file
            if not fpath.exists():
                raise r.error("topology", "file", f"graph file {str(fpath)!r} does not exist")
            return read_graph(fpath), {"kind": "graph", "file": str(file)}
    except InvalidInputError as exc:
        raise r.error("topology", "kind", str(exc)) from None
    raise r.error("topology", "kind", f"unknown topology {kind!r} (line, lattice, graph)")


def resolve(raw: dict, lines: dict | None = None, path=None) -> ExperimentConfig:
    """Validate raw sections and build the experiment objects."""
    r = _Resolver(raw, lines or {}, path)
    experiment = r.get("experiment", "kind", required=True)
    if experiment not in EXPERIMENTS:
        raise r.error("experiment", "kind", f"unknown experiment {experiment!r}; one of {EXPERIMENTS}")
    env_seed = os.environ.get("RYDNET_SEED")
    seed = r.integer("experiment", "seed", default=0)
    if env_seed is not None and not raw.get("_cli", {}).get("seed"):
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"RYDNET_SEED must be an integer, got {env_seed!r}") from None
    if seed < 0:
        raise r.error("experiment", "seed", "seed must be non-negative")
    output = Path(r.get("experiment", "output", default="rydnet_out"))

    graph, topology = _build_graph(r)
    n = graph.n_particles

    phys = raw.get("physics", {})
    unit = r.get("physics", "frequency_unit", default="2pi_MHz")
    if unit not in FREQUENCY_UNITS:
        raise r.error("physics", "frequency_unit", f"only {FREQUENCY_UNITS[0]!r} is supported")
    has_laser = phys.get("omega_e") not in (None, "")
    has_rates = any(phys.get(k) not in (None, "") for k in ("nu", "mu", "rho"))
    if has_laser and has_rates:
        key = "nu" if phys.get("nu") else ("rho" if phys.get("rho") else "mu")
        raise r.error("physics", key, "give either omega_e (laser parameters) or nu/mu/rho, not both")

    cfg = ExperimentConfig(experiment, graph, topology, seed, output, raw=raw)
    omega_r = r.vector("physics", "omega_r", n)
    gamma = r.scalar("physics", "gamma")
    cfg.omega_r = None if omega_r is None else omega_r * TWO_PI_MHZ
    cfg.gamma = None if gamma is None else gamma * TWO_PI_MHZ
    try:
        if has_laser:
            if omega_r is None or gamma is None:
                raise r.error("physics", "omega_e", "omega_r and gamma are required with omega_e")
            omega_e = r.vector("physics", "omega_e", n)
            cfg.laser = LaserParams(omega_e * TWO_PI_MHZ, cfg.omega_r, cfg.gamma)
        elif has_rates:
            mu = r.vector("physics", "mu", n)
            mu = np.ones(n) if mu is None else mu
            nu = r.vector("physics", "nu", n)
            rho = r.vector("physics", "rho", n)
            if nu is not None and rho is not None:
                raise r.error("physics", "rho", "give nu or rho, not both")
            if nu is None and rho is None:
                raise r.error("physics", "mu", "mu needs nu or rho")
            cfg.rates = RateVector(nu if nu is not None else rho * mu, mu)
    except InvalidInputError as exc:
        raise ConfigError(f"[physics] {exc}", path) from None

    cfg.options = _experiment_options(r, experiment, n)
    return cfg


def _experiment_options(r: _Resolver, experiment: str, n: int) -> dict:
    opts = {}
    if experiment == "simulate":
        opts["horizon"] = r.scalar("simulate", "horizon", required=True)
        opts["initial"] = r.get("simulate", "initial", default="ground")
        opts["burn_in"] = r.scalar("simulate", "burn_in", default=0.1)
        if not opts["horizon"] > 0:
            raise r.error("simulate", "horizon", "must be positive")
    elif experiment == "hitting-time":
        opts["samples"] = r.integer("hitting", "samples", default=500, minimum=1)
        opts["cap"] = r.scalar("hitting", "cap")
        opts["bins"] = r.get("hitting", "bins", default="fd")
        opts["initial"] = r.get("hitting", "initial", default="ground")
        opts["profile_points"] = r.integer("hitting", "profile_points", default=200, minimum=2)
        sizes = r.get("hitting", "sizes")
        large = r.get("hitting", "large_sizes")
        opts["sizes"] = [int(s) for s in sizes.split()] if sizes else None
        opts["large_sizes"] = [int(s) for s in large.split()] if large else []
        if opts["bins"] != "fd":
            try:
                if int(opts["bins"]) < 1:
                    raise ValueError
            except ValueError:
                raise r.error("hitting", "bins", "expected 'fd' or a positive integer") from None
    elif experiment == "tune":
        opts["mode"] = r.get("tune", "mode", default="stochastic")
        if opts["mode"] not in ("stochastic", "exact"):
            raise r.error("tune", "mode", "expected 'stochastic' or 'exact'")
        opts["targets"] = r.vector("tune", "targets", n, required=True)
        if np.any(opts["targets"] <= 0) or np.any(opts["targets"] >= 1):
            raise r.error("tune", "targets", "targets must lie strictly between 0 and 1")
        opts["estimator"] = r.get("tune", "estimator", default="ensemble")
        if opts["estimator"] not in ("ensemble", "time_average"):
            raise r.error("tune", "estimator", "expected 'ensemble' or 'time_average'")
        max_it = r.integer("tune", "max_iterations", default=100, minimum=0)
        report = r.get("tune", "report_iterations")
        opts["report_iterations"] = [int(s) for s in report.split()] if report else []
        opts["omega_e0"] = r.vector("tune", "omega_e0", n)
        lo, hi = r.scalar("tune", "clamp_min"), r.scalar("tune", "clamp_max")
        opts["clamp"] = None
        if lo is not None or hi is not None:
            opts["clamp"] = ((lo or 0.0) * TWO_PI_MHZ, (hi or np.inf) * TWO_PI_MHZ)
        families = {}
        for key, default in (("a", None), ("T", "constant 1"), ("m", "constant 1")):
            text = r.get("schedule", key, default=default, required=default is None)
            try:
                families[key] = parse_family(text)
            except InvalidInputError as exc:
                raise r.error("schedule", key, str(exc)) from None
        opts["schedule"] = Schedule(families["a"], families["T"], families["m"], max_it)
    elif experiment == "achievable":
        opts["targets"] = r.vector("achievable", "targets", n, required=True)
        if np.any(opts["targets"] <= 0) or np.any(opts["targets"] >= 1):
            raise r.error("achievable", "targets", "targets must lie strictly between 0 and 1")
    return opts
