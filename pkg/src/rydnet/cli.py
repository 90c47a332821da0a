"""``rydnet`` command line: run experiments and write CSV data files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ExperimentConfig, load_file, merge, resolve
from .dynamics import (
    derive_seed,
    estimate_time_average,
    excitation_profile,
    hitting_times,
    simulate,
)
from .equilibrium import stationary_distribution
from .errors import (
    CapacityError,
    ConfigError,
    InfeasibleTargetError,
    InvalidInputError,
    RydnetError,
)
from .graph import lattice_graph
from .output import format_bits, header_lines, state_rows, write_csv
from .physics import TWO_PI_MHZ, LaserParams, RateVector, check_validity, rates_from_rabi
from .statespace import checkerboards, enumerate_feasible, maximum_independent_sets
from .tuner import (
    check_achievable,
    line_analytic_solution,
    tune_exact,
    tune_stochastic,
    validate_schedule,
)

__all__ = ["main", "build_parser", "load_config", "run"]

EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_INFEASIBLE = 4
EXIT_IO = 5
VALIDATE_FACTOR = 3.0


# --------------------------------------------------------------------------
# argument handling


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI experiment file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in figure preset")
    topo = p.add_mutually_exclusive_group()
    topo.add_argument("--line", nargs=2, type=int, metavar=("N", "B"), help="line of N with B-neighbour blocking")
    topo.add_argument("--lattice", nargs=2, type=int, metavar=("ROWS", "COLS"), help="nearest-neighbour lattice")
    topo.add_argument("--graph", type=Path, help="graph file (positions or edges)")
    p.add_argument("--rho", help="activation/deactivation ratio (mu = 1)")
    p.add_argument("--nu", help="activation rate(s)")
    p.add_argument("--mu", help="deactivation rate(s)")
    p.add_argument("--gamma", help="intermediate decay rate [2pi MHz]")
    p.add_argument("--omega-e", help="lower Rabi frequency [2pi MHz]")
    p.add_argument("--omega-r", help="upper Rabi frequency [2pi MHz]")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--reproducible", action="store_true", help="omit timestamps from outputs")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rydnet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rydnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrium", help="exact stationary law and excitation probabilities")
    _add_common(p)

    p = sub.add_parser("simulate", help="one sample path and its time averages")
    _add_common(p)
    p.add_argument("--horizon", type=float)
    p.add_argument("--initial", help="'ground' or a 0/1 string")

    p = sub.add_parser("hitting-time", help="time to reach a dominant configuration")
    _add_common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--cap", type=float, help="timeout per run [s]")
    p.add_argument("--bins", help="'fd' (Freedman-Diaconis) or a bin count")
    p.add_argument("--initial", help="'ground' or a 0/1 string")
    p.add_argument("--large", action="store_true", help="include the preset's large lattices")

    p = sub.add_parser("tune", help="tune Rabi frequencies towards target probabilities")
    _add_common(p)
    p.add_argument("--targets")
    p.add_argument("--mode", choices=("stochastic", "exact"))
    p.add_argument("--estimator", choices=("ensemble", "time_average"))
    p.add_argument("--max-iterations", type=int)

    p = sub.add_parser("achievable", help="is a target vector inside the achievable region")
    _add_common(p)
    p.add_argument("--targets")

    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("path", nargs="?", type=Path)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--factor", type=float, default=VALIDATE_FACTOR, help="'much smaller' factor")
    return parser


_SECTION_OF = {"simulate": "simulate", "hitting-time": "hitting", "tune": "tune", "achievable": "achievable"}


def load_config(args, command: str | None = None) -> ExperimentConfig:
    """Merge preset, config file and flags (in that order of precedence)."""
    command = command or args.command
    raw, lines, path = {}, {}, None
    if getattr(args, "preset", None):
        raw = merge(raw, PRESETS[args.preset])
    cfg_path = getattr(args, "config", None) or getattr(args, "path", None)
    if cfg_path is not None:
        file_raw, lines = load_file(cfg_path)
        raw = merge(raw, file_raw)
        path = cfg_path
    if command != "validate":
        raw = merge(raw, {"experiment": {"kind": command}})

    flags: dict[str, dict[str, str]] = {}

    def put(section, key, value):
        if value is not None:
            flags.setdefault(section, {})[key] = str(value)

    if getattr(args, "line", None):
        raw["topology"] = {}
        raw.get("hitting", {}).pop("sizes", None)
        put("topology", "kind", "line")
        put("topology", "n", args.line[0])
        put("topology", "b", args.line[1])
    if getattr(args, "lattice", None):
        raw["topology"] = {}
        raw.get("hitting", {}).pop("sizes", None)
        raw.get("hitting", {}).pop("large_sizes", None)
        put("topology", "kind", "lattice")
        put("topology", "rows", args.lattice[0])
        put("topology", "cols", args.lattice[1])
    if getattr(args, "graph", None):
        raw["topology"] = {}
        put("topology", "kind", "graph")
        put("topology", "file", args.graph.resolve())
    rate_flags = [getattr(args, k, None) for k in ("rho", "nu", "mu")]
    laser_flags = [getattr(args, k, None) for k in ("gamma", "omega_e", "omega_r")]
    if any(v is not None for v in rate_flags) and all(v is None for v in laser_flags):
        raw.get("physics", {}).pop("omega_e", None)
    if getattr(args, "omega_e", None) is not None and all(v is None for v in rate_flags):
        for k in ("rho", "nu", "mu"):
            raw.get("physics", {}).pop(k, None)
    for key in ("rho", "nu", "mu", "gamma", "omega_e", "omega_r"):
        put("physics", key, getattr(args, key, None))
    put("experiment", "seed", getattr(args, "seed", None))
    if getattr(args, "seed", None) is not None:
        put("_cli", "seed", "1")
    put("experiment", "output", getattr(args, "out", None))
    section = _SECTION_OF.get(command)
    for key in ("horizon", "initial", "samples", "cap", "bins", "targets", "mode", "estimator"):
        if section and hasattr(args, key):
            put(section, key, getattr(args, key))
    if getattr(args, "max_iterations", None) is not None:
        put("tune", "max_iterations", args.max_iterations)
    raw = merge(raw, flags)
    cli_marks = raw.pop("_cli", {})
    cfg = resolve({**raw, "_cli": cli_marks}, lines, path)
    cfg.raw.pop("_cli", None)
    return cfg


# --------------------------------------------------------------------------
# experiments


def _initial(text, n):
    if text in (None, "ground"):
        return None
    bits = [int(c) for c in text.strip()]
    if len(bits) != n:
        raise InvalidInputError(f"initial configuration needs {n} bits, got {len(bits)}")
    return bits


def _header(cfg, reproducible, notes=()):
    return header_lines(cfg.as_dict(), reproducible, notes)


def _run_equilibrium(cfg, out, reproducible, threads, log):
    space = enumerate_feasible(cfg.graph)
    eq = stationary_distribution(space, cfg.resolved_rates())
    mant, expo = eq.z_mantissa_exponent
    hdr = _header(cfg, reproducible, [f"log_Z: {eq.log_z!r}", f"Z: {mant:.12g}e{expo}"])
    write_csv(out / "states.csv", ["state_index", "occupancy_bits", "n_excited"], state_rows(space), hdr)
    dominant = np.flatnonzero(space.n_excited == space.n_excited.max())
    write_csv(
        out / "dominant.csv", ["state_index", "occupancy_bits", "n_excited"], state_rows(space, dominant), hdr
    )
    write_csv(
        out / "equilibrium_states.csv",
        ["state_index", "n_excited", "log_weight", "pi"],
        ((k, int(space.n_excited[k]), eq.log_weights[k], eq.pi[k]) for k in range(len(space))),
        hdr,
    )
    write_csv(out / "theta.csv", ["particle", "theta"], ((i + 1, th) for i, th in enumerate(eq.theta)), hdr)
    log(f"{len(space)} feasible states, {dominant.size} dominant; log Z = {eq.log_z:.6g}")
    log("theta: " + " ".join(f"{t:.6f}" for t in eq.theta))


def _run_simulate(cfg, out, reproducible, threads, log):
    opts = cfg.options
    traj = simulate(
        cfg.graph, cfg.resolved_rates(), opts["horizon"], _initial(opts["initial"], cfg.graph.n_particles), cfg.seed
    )
    hdr = _header(cfg, reproducible, [f"events: {len(traj)}"])
    write_csv(
        out / "trajectory.csv",
        ["time", "particle", "direction"],
        ((t, p, "up" if d > 0 else "down") for t, p, d in zip(traj.times, traj.particles, traj.directions)),
        hdr,
    )
    w0 = opts["burn_in"] * traj.horizon
    avg = estimate_time_average(traj, w0, traj.horizon)
    write_csv(
        out / "time_average.csv",
        ["particle", "theta_hat"],
        ((i + 1, v) for i, v in enumerate(avg)),
        hdr + [f"window: [{w0!r}, {traj.horizon!r}]"],
    )
    log(f"{len(traj)} events; time-averaged theta: " + " ".join(f"{v:.4f}" for v in avg))


def _dominant_targets(graph, rows=None, cols=None):
    if rows is not None and rows % 2 == 0 and cols % 2 == 0:
        return list(checkerboards(rows, cols))
    return maximum_independent_sets(graph)


def _run_hitting(cfg, out, reproducible, threads, log, large=False):
    opts = cfg.options
    jobs = []
    if cfg.topology["kind"] == "lattice" and opts["sizes"]:
        sizes = list(opts["sizes"]) + (opts["large_sizes"] if large else [])
        for s in sizes:
            jobs.append((f"{s}x{s}", lattice_graph(s, s), s, s))
    elif cfg.topology["kind"] == "lattice":
        r, c = cfg.topology["rows"], cfg.topology["cols"]
        jobs.append((f"{r}x{c}", cfg.graph, r, c))
    else:
        jobs.append(("graph", cfg.graph, None, None))

    for label, graph, rows, cols in jobs:
        n = graph.n_particles
        if cfg.laser is not None:
            laser = cfg.laser
            if len(laser) != n:
                laser = LaserParams(
                    np.full(n, laser.omega_e[0]), np.full(n, laser.omega_r[0]), laser.gamma
                )
            rates = rates_from_rabi(laser)
        else:
            base = cfg.resolved_rates()
            rates = base if len(base) == n else RateVector(np.full(n, base.nu[0]), np.full(n, base.mu[0]))
        targets = _dominant_targets(graph, rows, cols)
        initial = _initial(opts["initial"], n)
        taus = hitting_times(graph, rates, targets, opts["samples"], cfg.seed, opts["cap"], initial, threads)
        finite = taus[np.isfinite(taus)]
        n_timeout = int(np.sum(~np.isfinite(taus)))
        mis_size = int(np.asarray(targets[0]).sum())

        bins = "fd" if opts["bins"] == "fd" else int(opts["bins"])
        notes = [
            f"lattice: {label}",
            f"targets: {len(targets)} dominant configurations of size {mis_size}",
            f"initial: {opts['initial']}",
            f"timeouts: {n_timeout} of {taus.size}",
            f"binning: {'Freedman-Diaconis' if bins == 'fd' else f'{bins} equal bins'}",
        ]
        hdr = _header(cfg, reproducible, notes)
        write_csv(
            out / f"hitting_times_{label}.csv",
            ["seed", "tau_or_timeout"],
            ((derive_seed(cfg.seed, s), "timeout" if not np.isfinite(t) else t) for s, t in enumerate(taus)),
            hdr,
        )
        if finite.size:
            counts, edges = np.histogram(finite, bins=bins)
            write_csv(
                out / f"histogram_{label}.csv",
                ["bin_left", "bin_right", "count"],
                zip(edges[:-1], edges[1:], counts),
                hdr,
            )
            t_max = 2.0 * float(finite.max())
            grid = np.linspace(0.0, t_max, opts["profile_points"])
            profile = excitation_profile(
                graph, rates, grid, opts["samples"], derive_seed(cfg.seed, 1 << 30), initial, threads
            )
            write_csv(
                out / f"excitation_profile_{label}.csv",
                ["time", "mean_excited", "normalized"],
                zip(grid, profile, profile / mis_size),
                hdr + [f"normalization: mean excited count divided by dominant size {mis_size} (assumed)"],
            )
            log(f"{label}: mean tau = {finite.mean():.6g} s over {finite.size} runs, {n_timeout} timeouts")
        else:
            log(f"{label}: every run timed out")


def _line_reference(cfg):
    topo = cfg.topology
    targets = cfg.options.get("targets")
    if topo["kind"] != "line" or targets is None or not np.all(targets == targets[0]):
        return None
    return line_analytic_solution(topo["n"], topo["b"], float(targets[0]), cfg.omega_r)


def _precheck_tune(cfg):
    if cfg.omega_r is None or cfg.gamma is None:
        raise ConfigError("tune needs [physics] omega_r and gamma")
    if cfg.rates is not None:
        raise ConfigError("tune adjusts Rabi frequencies; give omega_r/gamma, not nu/mu/rho")
    _line_reference(cfg)  # raises InfeasibleTargetError on a line


def _run_tune(cfg, out, reproducible, threads, log):
    _precheck_tune(cfg)
    opts = cfg.options
    sched = opts["schedule"]
    omega_e0 = None if opts["omega_e0"] is None else opts["omega_e0"] * TWO_PI_MHZ
    if cfg.laser is not None and omega_e0 is None:
        omega_e0 = cfg.laser.omega_e
    for w in validate_schedule(sched, opts["estimator"]):
        log(f"warning: {w}")
    if opts["mode"] == "exact":
        state = tune_exact(cfg.graph, cfg.omega_r, cfg.gamma, opts["targets"], sched, omega_e0, clamp=opts["clamp"])
    else:
        state = tune_stochastic(
            cfg.graph,
            cfg.omega_r,
            cfg.gamma,
            opts["targets"],
            sched,
            opts["estimator"],
            cfg.seed,
            omega_e0,
            opts["clamp"],
            threads,
        )
    notes = [f"schedule: {sched.describe()}", f"iterations: {state.iteration}"]
    if state.metric is not None:
        notes.append(f"exact max|theta - target| at final iterate: {state.metric!r}")
    hdr = _header(cfg, reproducible, notes)

    def rows():
        for i in range(cfg.graph.n_particles):
            yield 0, i + 1, state.initial_omega_e[i] / TWO_PI_MHZ, None, state.targets[i], None
        for rec in state.history:
            for i in range(cfg.graph.n_particles):
                yield rec.n, i + 1, rec.omega_e[i] / TWO_PI_MHZ, rec.theta_hat[i], state.targets[i], rec.a

    write_csv(
        out / "tuner_history.csv", ["n", "particle", "omega_e_2piMHz", "theta_hat", "target", "a_n"], rows(), hdr
    )
    ref = _line_reference(cfg)
    if ref is not None:
        write_csv(
            out / "reference.csv",
            ["particle", "omega_e_star_2piMHz", "final_omega_e_2piMHz", "relative_error"],
            (
                (i + 1, ref[i] / TWO_PI_MHZ, state.omega_e[i] / TWO_PI_MHZ, state.omega_e[i] / ref[i] - 1)
                for i in range(ref.size)
            ),
            hdr,
        )
        log("max relative error vs closed form: " + f"{np.max(np.abs(state.omega_e / ref - 1)):.4g}")
    if opts["report_iterations"]:
        space = enumerate_feasible(cfg.graph)
        table = []
        for n in opts["report_iterations"]:
            if n > state.iteration:
                continue
            ratio = (state.omega_e_at(n) / state.omega_r) ** 2
            theta = stationary_distribution(space, RateVector.from_ratios(ratio)).theta
            table.extend((n, i + 1, th) for i, th in enumerate(theta))
        write_csv(out / "theta_exact.csv", ["n", "particle", "theta"], table, hdr)
    log("final omega_e [2pi MHz]: " + " ".join(f"{w / TWO_PI_MHZ:.4f}" for w in state.omega_e))
    if state.metric is not None:
        log(f"exact max|theta - target| = {state.metric:.3g}")


def _run_achievable(cfg, out, reproducible, threads, log):
    space = enumerate_feasible(cfg.graph)
    result = check_achievable(space, cfg.options["targets"])
    hdr = _header(cfg, reproducible, [f"margin: {result.margin!r}"])
    write_csv(
        out / "achievable.csv",
        ["achievable", "residual", "margin"],
        [(str(result.achievable).lower(), result.residual, result.margin)],
        hdr,
    )
    if result.achievable:
        write_csv(
            out / "witness.csv",
            ["state_index", "occupancy_bits", "alpha"],
            ((k, format_bits(space.config(k)), a) for k, a in enumerate(result.witness)),
            hdr,
        )
    log("achievable" if result.achievable else "not achievable (within margin)")


_RUNNERS = {
    "equilibrium": _run_equilibrium,
    "simulate": _run_simulate,
    "hitting-time": _run_hitting,
    "tune": _run_tune,
    "achievable": _run_achievable,
}


def run(cfg: ExperimentConfig, reproducible=False, threads=None, large=False, log=print) -> Path:
    """Execute ``cfg`` and return its output directory."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    runner = _RUNNERS[cfg.experiment]
    if cfg.experiment == "hitting-time":
        runner(cfg, out, reproducible, threads, log, large=large)
    else:
        runner(cfg, out, reproducible, threads, log)
    return out


def validate(cfg: ExperimentConfig, factor=VALIDATE_FACTOR) -> list[str]:
    """Regime and schedule warnings for a resolved config (raises on hard errors)."""
    warnings = []
    if cfg.laser is not None:
        warnings += check_validity(cfg.laser, factor)
    if cfg.experiment == "tune":
        _precheck_tune(cfg)
        warnings += validate_schedule(cfg.options["schedule"], cfg.options["estimator"])
    if cfg.experiment == "achievable":
        ref_targets = cfg.options["targets"]
        if cfg.topology["kind"] == "line" and np.all(ref_targets == ref_targets[0]):
            line_analytic_solution(cfg.topology["n"], cfg.topology["b"], float(ref_targets[0]), 1.0)
    return warnings


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    def log(msg):
        print(msg, file=sys.stderr)

    try:
        if args.command == "validate":
            if args.path is None and args.preset is None:
                parser.error("validate needs a config path or --preset")
            if args.path is not None and not args.path.exists():
                log(f"error: cannot read {args.path}")
                return EXIT_IO
            cfg = load_config(args, "validate")
            warnings = validate(cfg, args.factor)
            print(f"valid: {cfg.experiment} on {cfg.topology}")
            for w in warnings:
                print(f"warning: {w}")
            if not warnings:
                print("no warnings")
            return 0
        if args.config is not None and not args.config.exists():
            log(f"error: cannot read {args.config}")
            return EXIT_IO
        cfg = load_config(args)
        run(cfg, args.reproducible, args.threads, getattr(args, "large", False), log)
        return 0
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except CapacityError as exc:
        log(f"capacity error: {exc}")
        return EXIT_CAPACITY
    except InfeasibleTargetError as exc:
        log(f"infeasible target: {exc}")
        return EXIT_INFEASIBLE
    except (RydnetError, OSError) as exc:
        log(f"error: {exc}")
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
