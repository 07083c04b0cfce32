"""Command-line scenario runner.

    exactmem run <config>       run all routes, write trajectories, comparison and manifest
    exactmem compare <config>   run all routes, write and print the comparison matrix only
    exactmem validate <config>  parse and check the config without running anything

Exit codes: 0 success, 1 a comparison exceeded its tolerance, 2 config
error, 3 numerical failure in a route.  ``EXACTMEM_MAX_WORKERS`` caps how
many routes run concurrently (default: number of CPUs).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from . import __version__, models
from .errors import ExactMemError, NotHermitian, ParseError
from .qmat import HermitianOperator, Trajectory
from .verify import ROUTES, ComparisonMatrix, Scenario, compare_routes

EXIT_OK, EXIT_COMPARISON, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3
WORKERS_ENV = "EXACTMEM_MAX_WORKERS"
MANIFEST_KIND = "exactmem-manifest"


@dataclass(frozen=True)
class ScenarioConfig:
    raw: dict
    model: models.ModelSpec
    scenario: Scenario
    routes: tuple
    tolerance: float
    tolerances: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)   # name -> HermitianOperator
    output_dir: Path = Path("results")

    @property
    def gamma(self) -> float:
        return self.model.gamma

    @property
    def tau(self) -> float:
        return self.scenario.tau

    @property
    def t_max(self) -> float:
        return self.scenario.tau * self.scenario.n_steps


def _section(cfg: Mapping, key: str) -> Mapping:
    val = cfg.get(key, {}) or {}
    if not isinstance(val, Mapping):
        raise ParseError("must be a mapping", key)
    return val


def _positive(val, name: str) -> float:
    # PyYAML reads exponent literals without a dot ("1e-4") as strings
    try:
        out = float(val) if not isinstance(val, bool) else None
    except (TypeError, ValueError):
        out = None
    if out is None or not out > 0 or not np.isfinite(out):
        raise ParseError(f"must be a positive number, got {val!r}", name)
    return out


def _int(val, name: str, low: int = 1) -> int:
    if isinstance(val, bool) or not isinstance(val, int) or val < low:
        raise ParseError(f"must be an integer >= {low}, got {val!r}", name)
    return val


def parse_config(cfg: Any) -> ScenarioConfig:
    """Validate a parsed scenario document and build the run description."""
    if not isinstance(cfg, Mapping):
        raise ParseError("top level must be a mapping")
    known = {"model", "states", "gamma", "tau", "t_max", "routes", "tolerance", "tolerances",
             "observables", "outputs", "chain", "laplace", "traced_me"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ParseError(f"unknown keys {unknown}", unknown[0])
    model = models.from_config(cfg)
    tau = _positive(cfg.get("tau"), "tau")
    t_max = _positive(cfg.get("t_max"), "t_max")

    routes = cfg.get("routes")
    if not isinstance(routes, list) or not routes:
        raise ParseError("must be a nonempty list", "routes")
    for r in routes:
        if r not in ROUTES:
            raise ParseError(f"unknown route {r!r} (known: {', '.join(ROUTES)})", "routes")
    tolerance = _positive(cfg.get("tolerance", 1e-4), "tolerance")
    tolerances = dict(_section(cfg, "tolerances"))
    for key, val in tolerances.items():
        parts = str(key).split(":")
        if len(parts) != 2 or not all(p in ROUTES for p in parts):
            raise ParseError("keys must look like 'route_a:route_b'", f"tolerances.{key}")
        tolerances[key] = _positive(val, f"tolerances.{key}")

    ds = model.dims[0]
    observables = {}
    for name, mat in _section(cfg, "observables").items():
        arr = models.parse_matrix(mat, f"observables.{name}")
        if arr.shape != (ds, ds):
            raise ParseError(f"must be {ds}x{ds}", f"observables.{name}")
        try:
            observables[str(name)] = HermitianOperator(arr)
        except NotHermitian as exc:
            raise NotHermitian(f"observables.{name}: {exc}") from None

    chain = _section(cfg, "chain")
    lap = _section(cfg, "laplace")
    me = _section(cfg, "traced_me")
    opts = {
        "n_ancillas": _int(chain.get("n_ancillas", 4), "chain.n_ancillas"),
        "chain_n_max": _int(chain.get("n_max", 6), "chain.n_max"),
        "laplace_points": _int(lap.get("points", 10), "laplace.points"),
        "laplace_nodes": _int(lap.get("n_nodes", 32), "laplace.n_nodes", 2),
        "me_max_step_norm": _positive(me.get("max_step_norm", 0.02), "traced_me.max_step_norm"),
    }
    try:
        scenario = Scenario.from_t_max(model, tau, t_max, **opts)
    except ValueError as exc:
        raise ParseError(str(exc), "t_max") from None
    out_dir = _section(cfg, "outputs").get("dir", "results")
    if not isinstance(out_dir, str) or not out_dir:
        raise ParseError("must be a path string", "outputs.dir")
    return ScenarioConfig(dict(cfg), model, scenario, tuple(routes), tolerance, tolerances,
                          observables, Path(out_dir))


def load_config(path) -> tuple[ScenarioConfig, bytes]:
    """Read a YAML (or JSON) scenario file; a run manifest is accepted as well."""
    data = Path(path).read_bytes()
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ParseError(f"not valid YAML ({exc})") from None
    if isinstance(doc, Mapping) and doc.get("kind") == MANIFEST_KIND:
        doc = doc.get("config")
    return parse_config(doc), data


# -- output -------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def csv_header(d: int, observables: Sequence[str] = ()) -> list[str]:
    cols = ["time", "route"]
    for i in range(d):
        for j in range(d):
            cols += [f"rho_re_{i}_{j}", f"rho_im_{i}_{j}"]
    return cols + list(observables)


def emit_csv(trajectory: Trajectory, path, observables: Mapping | None = None,
             route: str | None = None) -> None:
    """One row per time: time, route, Re/Im of each entry (row-major), observables."""
    observables = observables or {}
    route = trajectory.label if route is None else route
    d = trajectory.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(d, list(observables)))
        for t, rho in zip(trajectory.times, trajectory.states):
            row = [_fmt(t), route]
            for z in rho.reshape(-1):
                row += [_fmt(z.real), _fmt(z.imag)]
            for op in observables.values():
                row.append(_fmt(np.trace(np.asarray(getattr(op, "mat", op)) @ rho).real))
            w.writerow(row)


def read_csv(path) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Inverse of :func:`emit_csv` for the state columns: (times, routes, states)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_state = sum(1 for c in header if c.startswith("rho_"))
    d = int(round(np.sqrt(n_state // 2)))
    times = np.array([float(r[0]) for r in body])
    routes = [r[1] for r in body]
    vals = np.array([[float(x) for x in r[2:2 + n_state]] for r in body])
    states = (vals[:, 0::2] + 1j * vals[:, 1::2]).reshape(-1, d, d)
    return times, routes, states


def emit_comparison(matrix: ComparisonMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["route_a", "route_b", "n_times", "max_distance", "tolerance", "pass", "error"])
        for (a, b), rep in matrix.reports.items():
            w.writerow([a, b, rep.grid.size, _fmt(rep.max_distance), _fmt(rep.tolerance),
                        "true" if rep.passed else "false", rep.error or ""])


def format_matrix(matrix: ComparisonMatrix) -> str:
    lines = [f"{'route_a':<14}{'route_b':<14}{'max_distance':>14}{'tolerance':>12}  result"]
    for (a, b), rep in matrix.reports.items():
        if rep.error:
            status = "error"
        elif not rep.grid.size:
            status = "no overlap"
        else:
            status = "pass" if rep.passed else "FAIL"
        lines.append(f"{a:<14}{b:<14}{rep.max_distance:>14.3e}{rep.tolerance:>12.1e}  {status}")
    for route, exc in matrix.errors.items():
        lines.append(f"route {route} failed: {type(exc).__name__}: {exc}")
    return "\n".join(lines)


def manifest(cfg: ScenarioConfig, source: bytes, matrix: ComparisonMatrix,
             files: Sequence[str]) -> dict:
    return {
        "kind": MANIFEST_KIND,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "config_sha256": hashlib.sha256(source).hexdigest(),
        "config": cfg.raw,
        "tolerance": cfg.tolerance,
        "tolerances": cfg.tolerances,
        "routes": list(cfg.routes),
        "route_errors": {r: f"{type(e).__name__}: {e}" for r, e in matrix.errors.items()},
        "comparisons": [
            {"route_a": a, "route_b": b, "max_distance": None if np.isnan(r.max_distance)
             else r.max_distance, "tolerance": r.tolerance, "pass": r.passed}
            for (a, b), r in matrix.reports.items()],
        "passed": matrix.passed,
        "files": list(files),
    }


# -- commands -------------------------------------------------------------------

def max_workers(n_routes: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ParseError(f"must be an integer, got {raw!r}", WORKERS_ENV) from None
        if cap < 1:
            raise ParseError("must be at least 1", WORKERS_ENV)
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_routes))


def execute(cfg: ScenarioConfig) -> ComparisonMatrix:
    workers = max_workers(len(cfg.routes))
    if workers == 1:
        return compare_routes(cfg.scenario, cfg.routes, cfg.tolerance, cfg.tolerances)
    with ThreadPoolExecutor(workers) as pool:
        return compare_routes(cfg.scenario, cfg.routes, cfg.tolerance, cfg.tolerances,
                              map_fn=pool.map)


def _exit_code(matrix: ComparisonMatrix) -> int:
    if matrix.errors:
        return EXIT_NUMERICAL
    return EXIT_OK if matrix.passed else EXIT_COMPARISON


def cmd_run(cfg: ScenarioConfig, source: bytes, out_dir: Path, write_trajectories: bool) -> int:
    matrix = execute(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    if write_trajectories:
        for route in cfg.routes:
            if route in matrix.trajectories:
                name = f"trajectory_{route}.csv"
                emit_csv(matrix.trajectories[route], out_dir / name, cfg.observables, route)
                files.append(name)
    emit_comparison(matrix, out_dir / "comparison.csv")
    files.append("comparison.csv")
    if write_trajectories:
        text = json.dumps(manifest(cfg, source, matrix, files), indent=2, sort_keys=True)
        (out_dir / "manifest.json").write_text(text + "\n")
    print(format_matrix(matrix))
    for route, exc in matrix.errors.items():
        print(f"error: route {route}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return _exit_code(matrix)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exactmem", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run routes and write all outputs"),
                       ("compare", "run routes and write the comparison matrix only"),
                       ("validate", "check a config without running it")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="scenario file (YAML) or a run manifest")
        if name != "validate":
            p.add_argument("-o", "--output-dir", help="override outputs.dir from the config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, source = load_config(args.config)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"ok: {cfg.model.name} model, {len(cfg.routes)} routes, "
              f"{cfg.scenario.n_steps} steps")
        return EXIT_OK
    out_dir = Path(args.output_dir) if args.output_dir else cfg.output_dir
    try:
        return cmd_run(cfg, source, out_dir, write_trajectories=args.command == "run")
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExactMemError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
