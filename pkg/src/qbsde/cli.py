"""Command-line surface: config ingestion, orchestration, report emission.

Config files are INI (key-value with sections). Exit codes: 0 success,
2 solver failure, 3 config error, 4 check failure, 5 ordering
precondition violated. All emitted CSV/JSON is byte-deterministic for a
fixed config and seed, except wall-clock columns explicitly named *_s.
"""
from __future__ import annotations

import argparse
import configparser
import io
import json
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    check_comparison,
    oracle_cole_hopf,
    oracle_linear,
    oracle_orthogonal,
)
from .errors import ConfigError, DominanceViolated, QbsdeError
from .model import GeneratorSpec, GridSpec, TerminalCondition
from .paths import generate
from .regress import BasisSpec
from .solver import SolverOptions, solve

_SCHEMA = {
    "generator": {"a", "b", "c", "gamma_q", "mu", "phi", "g", "sigma"},
    "terminal": {"family", "scale", "driver", "offset", "coeffs", "clip"},
    "grid": {"T", "n_steps", "n_paths", "seed"},
    "solver": {"tol", "max_iter", "degree", "quantile", "max_stages", "ess_floor"},
    "output": {"directory", "formats"},
}
_REQUIRED = {"grid": ("T", "n_steps", "n_paths", "seed"), "terminal": ("family",)}


@dataclass
class RunConfig:
    gen: GeneratorSpec
    grid: GridSpec
    degree: int = 3
    opts: SolverOptions = field(default_factory=SolverOptions)
    directory: str = "."
    formats: tuple = ("json", "csv")

    @property
    def basis(self) -> BasisSpec:
        return BasisSpec(degree=self.degree)


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if cast is float:
            return float(raw)
        if cast is int:
            return int(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case (T vs t)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
    for section, keys in _REQUIRED.items():
        if not parser.has_section(section):
            raise ConfigError(f"missing required section [{section}]")
        for key in keys:
            if not parser.has_option(section, key):
                raise ConfigError(f"missing required key {key!r} in section [{section}]")
    try:
        coeffs_raw = _get(parser, "terminal", "coeffs", str, "")
        tc = TerminalCondition(
            family=_get(parser, "terminal", "family", str, "constant"),
            scale=_get(parser, "terminal", "scale", float, 1.0),
            driver=_get(parser, "terminal", "driver", str, "w1"),
            offset=_get(parser, "terminal", "offset", float, 0.0),
            coeffs=tuple(float(x) for x in coeffs_raw.split(",") if x.strip()),
            clip=_get(parser, "terminal", "clip", float, 1.0),
        )
        gen = GeneratorSpec(
            terminal=tc,
            a=_get(parser, "generator", "a", float, 0.0),
            b=_get(parser, "generator", "b", float, 0.0),
            c=_get(parser, "generator", "c", float, 0.0),
            gamma_q=_get(parser, "generator", "gamma_q", float, 0.0),
            mu=_get(parser, "generator", "mu", float, 0.0),
            phi=_get(parser, "generator", "phi", str, "tanh"),
            g=_get(parser, "generator", "g", float, 0.0),
            sigma=_get(parser, "generator", "sigma", float, 1.0),
        )
        grid = GridSpec(
            T=_get(parser, "grid", "T", float, None),
            n_steps=_get(parser, "grid", "n_steps", int, None),
            n_paths=_get(parser, "grid", "n_paths", int, None),
            seed=_get(parser, "grid", "seed", int, None),
        )
        quantile_raw = _get(parser, "solver", "quantile", str, "none")
        opts = SolverOptions(
            tol=_get(parser, "solver", "tol", float, 1e-4),
            max_iter=_get(parser, "solver", "max_iter", int, 50),
            quantile=None if quantile_raw.lower() == "none" else float(quantile_raw),
            max_stages=_get(parser, "solver", "max_stages", int, 64),
            ess_floor=_get(parser, "solver", "ess_floor", float, 0.05),
        )
        formats = tuple(
            x.strip() for x in _get(parser, "output", "formats", str, "json,csv").split(",") if x.strip()
        )
        return RunConfig(
            gen=gen,
            grid=grid,
            degree=_get(parser, "solver", "degree", int, 3),
            opts=opts,
            directory=_get(parser, "output", "directory", str, "."),
            formats=formats,
        )
    except (ValueError, QbsdeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def emit_config(cfg: RunConfig) -> str:
    """Canonical INI text; parse(emit(cfg)) reproduces cfg exactly."""
    gen, tc, grid, opts = cfg.gen, cfg.gen.terminal, cfg.grid, cfg.opts
    lines = [
        "[generator]",
        *(f"{k} = {getattr(gen, k)!r}" for k in ("a", "b", "c", "gamma_q", "mu", "g", "sigma")),
        f"phi = {gen.phi}",
        "",
        "[terminal]",
        f"family = {tc.family}",
        f"scale = {tc.scale!r}",
        f"driver = {tc.driver}",
        f"offset = {tc.offset!r}",
        f"coeffs = {','.join(repr(x) for x in tc.coeffs)}",
        f"clip = {tc.clip!r}",
        "",
        "[grid]",
        f"T = {grid.T!r}",
        f"n_steps = {grid.n_steps}",
        f"n_paths = {grid.n_paths}",
        f"seed = {grid.seed}",
        "",
        "[solver]",
        f"tol = {opts.tol!r}",
        f"max_iter = {opts.max_iter}",
        f"degree = {cfg.degree}",
        f"quantile = {'none' if opts.quantile is None else repr(opts.quantile)}",
        f"max_stages = {opts.max_stages}",
        f"ess_floor = {opts.ess_floor!r}",
        "",
        "[output]",
        f"directory = {cfg.directory}",
        f"formats = {','.join(cfg.formats)}",
        "",
    ]
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# -- oracle selection ---------------------------------------------------

def select_oracle(gen: GeneratorSpec):
    """(name, field_fn) of the closed-form reference for this generator,
    when one exists; ConfigError otherwise."""
    tc = gen.terminal
    if gen.gamma_q != 0.0 and gen.a == gen.b == gen.c == gen.mu == 0.0 and gen.g == 0.0:
        return "cole_hopf", lambda ens, basis: oracle_cole_hopf(gen.gamma_q, ens, tc, basis)
    if gen.gamma_q == 0.0 and gen.c == 0.0 and gen.mu == 0.0 and gen.g == 0.0:
        return "linear", lambda ens, basis: oracle_linear(gen.b, gen.a, ens, tc, basis)
    if (
        gen.g != 0.0
        and gen.a == gen.b == gen.c == gen.gamma_q == gen.mu == 0.0
        and tc.driver == "w2"
    ):
        return "orthogonal", lambda ens, basis: oracle_orthogonal(gen.g, ens, tc, basis)
    raise ConfigError("no closed-form reference for this generator")


# -- report writers -----------------------------------------------------

def _json_dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _trace_dict(trace):
    return {
        "iterations": trace.iterations,
        "distances": list(trace.distances),
        "ratios": list(trace.ratios),
        "ball_violations": trace.ball_violations,
        "radius": trace.radius,
        "contraction_bound": trace.contraction_bound,
        "converged": trace.converged,
    }


def write_fields_csv(sol, path):
    n_paths, n1 = sol.y.shape
    path_id = np.repeat(np.arange(n_paths), n1)
    t_idx = np.tile(np.arange(n1), n_paths)
    data = np.column_stack([path_id, t_idx, sol.y.ravel(), sol.z.ravel(), sol.zeta.ravel()])
    buf = io.StringIO()
    buf.write("path_id,time_index,y,z,zeta\n")
    np.savetxt(buf, data, fmt="%d,%d,%.17g,%.17g,%.17g")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _summary(cfg: RunConfig, sol, traces) -> dict:
    out = {
        "y0": float(sol.y[0, 0]),
        "y0_se": float(sol.y_se[0]) if sol.y_se is not None else None,
        "residual": sol.residual,
        "m": sol.info.get("m"),
        "shift_terminal": sol.info.get("shift_terminal"),
        "stages": sol.info.get("stages"),
        "trace": [_trace_dict(t) for t in traces],
        "certificate": sol.info.get("certificate"),
    }
    if sol.norms is not None:
        out["norms"] = {
            "y_sup": sol.norms.y_sup,
            "z_h2": sol.norms.z_h2,
            "n_bmo": sol.norms.n_bmo,
            "zm_n_bmo": sol.norms.zm_n_bmo,
        }
    return out


# -- subcommands --------------------------------------------------------

def cmd_solve(config_path, out_dir) -> int:
    cfg = load_config(config_path)
    out_dir = _ensure_dir(out_dir or cfg.directory)
    sol, traces = solve(cfg.gen, cfg.grid, cfg.basis, cfg.opts)
    summary = _summary(cfg, sol, traces)
    try:
        name, fn = select_oracle(cfg.gen)
    except ConfigError:
        summary["oracle"] = None
    else:
        ens = generate(cfg.grid)
        ref = fn(ens, cfg.basis)
        summary["oracle"] = {"kind": name, "y0": float(ref[0, 0])}
    if "json" in cfg.formats:
        _json_dump(summary, f"{out_dir}/summary.json")
    if "csv" in cfg.formats:
        write_fields_csv(sol, f"{out_dir}/fields.csv")
    return 0


def cmd_compare(path_a, path_b, out_dir) -> int:
    cfg_a = load_config(path_a)
    cfg_b = load_config(path_b)
    if cfg_a.grid != cfg_b.grid:
        raise ConfigError("compare requires identical [grid] sections (incl. seed)")
    out_dir = _ensure_dir(out_dir or cfg_a.directory)
    report = check_comparison(cfg_a.gen, cfg_b.gen, cfg_a.grid, cfg_a.basis, cfg_a.opts)
    _json_dump(
        {
            "ordered_fraction": report.ordered_fraction,
            "min_gap": report.min_gap,
            "tol_mc": report.tol_mc,
            "verdict": report.verdict,
            "info": report.info,
        },
        f"{out_dir}/comparison.json",
    )
    return 0 if report.verdict == "pass" else 4


def _level_seed(root_seed: int, level: int) -> int:
    return int(np.random.SeedSequence([root_seed, level]).generate_state(1)[0])


def cmd_convergence(config_path, steps, paths, out_dir) -> int:
    cfg = load_config(config_path)
    if (steps is None) == (paths is None):
        raise ConfigError("convergence needs exactly one of --steps / --paths")
    levels = steps if steps is not None else paths
    if levels != sorted(levels) or len(set(levels)) != len(levels):
        raise ConfigError("sweep list must be strictly increasing")
    out_dir = _ensure_dir(out_dir or cfg.directory)
    _, oracle_fn = select_oracle(cfg.gen)
    rows = []
    for level in levels:
        grid = GridSpec(
            T=cfg.grid.T,
            n_steps=level if steps is not None else cfg.grid.n_steps,
            n_paths=level if paths is not None else cfg.grid.n_paths,
            seed=_level_seed(cfg.grid.seed, level),
        )
        t0 = time.perf_counter()
        sol, _ = solve(cfg.gen, grid, cfg.basis, cfg.opts)
        runtime = time.perf_counter() - t0
        ref = oracle_fn(generate(grid), cfg.basis)
        err = abs(float(sol.y[0, 0]) - float(ref[0, 0]))
        se = float(sol.y_se[0]) if sol.y_se is not None else 0.0
        rows.append((level, grid.n_steps, grid.n_paths, err, se, runtime))
    with open(f"{out_dir}/convergence.csv", "w") as fh:
        fh.write("level,n_steps,n_paths,error,y0_se,runtime_s\n")
        for level, ns, npth, err, se, runtime in rows:
            fh.write(f"{level},{ns},{npth},{err:.17g},{se:.17g},{runtime:.3f}\n")
    if len(rows) >= 2:
        err_prev, se_prev = rows[-2][3], rows[-2][4]
        err_last, se_last = rows[-1][3], rows[-1][4]
        band = 2.0 * 3.0 * (se_prev + se_last)
        if err_last > err_prev + band:
            print(
                f"error not non-increasing across last refinements: "
                f"{err_prev:.3g} -> {err_last:.3g} (band {band:.3g})",
                file=sys.stderr,
            )
            return 4
    return 0


def cmd_selftest(out_dir, criteria=None) -> int:
    from .acceptance import run_acceptance

    out_dir = _ensure_dir(out_dir or ".")
    report = run_acceptance(criteria=criteria)
    _json_dump(report, f"{out_dir}/selftest_report.json")
    return 0 if all(entry["passed"] for entry in report["criteria"].values()) else 1


def _ensure_dir(path):
    import os

    os.makedirs(path, exist_ok=True)
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="qbsde",
        description="Monte Carlo solver for one-dimensional quadratic-growth BSDEs",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve one configured problem")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out", default=None)
    p = sub.add_parser("compare", help="solution-ordering check for two configs")
    p.add_argument("-a", required=True)
    p.add_argument("-b", required=True)
    p.add_argument("-o", "--out", default=None)
    p = sub.add_parser("convergence", help="refinement study against a closed-form reference")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--steps", default=None)
    p.add_argument("--paths", default=None)
    p.add_argument("-o", "--out", default=None)
    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("-o", "--out", default=None)
    p.add_argument("--criteria", default=None, help="comma list of criterion numbers")
    args = ap.parse_args(argv)

    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.out)
        if args.command == "compare":
            return cmd_compare(args.a, args.b, args.out)
        if args.command == "convergence":
            steps = [int(x) for x in args.steps.split(",")] if args.steps else None
            paths = [int(x) for x in args.paths.split(",")] if args.paths else None
            return cmd_convergence(args.config, steps, paths, args.out)
        if args.command == "selftest":
            criteria = (
                [int(x) for x in args.criteria.split(",")] if args.criteria else None
            )
            return cmd_selftest(args.out, criteria)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except DominanceViolated as exc:
        print(f"ordering precondition violated: {exc}", file=sys.stderr)
        return 5
    except QbsdeError as exc:
        print(f"solver error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
