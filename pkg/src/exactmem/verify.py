"""Channel certification, state distances and the cross-route comparison harness."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np

from . import collision, laplace, memkernel
from .errors import ChainTooLarge, DimensionMismatch, ExactMemError
from .liouville import QuantumMap, build_bipartite_generator, integrate_bipartite, sandwich
from .models import ModelSpec
from .qmat import DensityMatrix, Trajectory, as_array

# -- Choi matrices and CPTP checks --------------------------------------------


@dataclass(frozen=True)
class ChoiMatrix:
    d: int
    mat: np.ndarray

    def __post_init__(self):
        if self.mat.shape != (self.d ** 2, self.d ** 2):
            raise DimensionMismatch(f"Choi matrix of a {self.d}-dim map has shape {self.mat.shape}")

    def output_trace(self) -> np.ndarray:
        """Partial trace over the output factor (identity for a TP map)."""
        d = self.d
        return np.einsum("iaja->ij", self.mat.reshape(d, d, d, d))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.mat + self.mat.conj().T))


def choi_of(qmap: QuantumMap) -> ChoiMatrix:
    """``C = sum_ij |i><j| kron map(|i><j|)`` (input factor first)."""
    d = qmap.dim
    # smat[a + d b, i + d j] = map(E_ij)[a, b]; reshape gives t[b, a, j, i]
    t = np.asarray(qmap.smat).reshape(d, d, d, d)
    return ChoiMatrix(d, t.transpose(3, 1, 2, 0).reshape(d * d, d * d))


@dataclass(frozen=True)
class CPTPReport:
    cp: bool
    tp: bool
    min_eigenvalue: float
    tp_residual: float
    tol: float

    def __bool__(self) -> bool:
        return self.cp and self.tp


def is_cptp(qmap: QuantumMap, tol: float = 1e-7, tp_tol: float | None = None) -> CPTPReport:
    """CP iff the Choi spectrum is above ``-tol``; TP iff traces match within ``tp_tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    tp_tol = tol if tp_tol is None else tp_tol
    lmin = float(choi_of(qmap).eigenvalues()[0])
    res = qmap.tp_residual()
    return CPTPReport(lmin >= -tol, res <= tp_tol, lmin, res, tol)


def kraus_from_choi(choi: ChoiMatrix, tol: float = 1e-10) -> list[np.ndarray]:
    """Kraus operators ``K_k = sqrt(l_k) unvec(v_k)`` from the Choi eigenvectors."""
    w, v = np.linalg.eigh(0.5 * (choi.mat + choi.mat.conj().T))
    d = choi.d
    ops = []
    for lam, vec_k in zip(w, v.T):
        if lam > tol:
            # vec_k[i d + a] = K[a, i]
            ops.append(np.sqrt(lam) * vec_k.reshape(d, d).T)
    return ops


def map_from_kraus(ops: Sequence[np.ndarray]) -> QuantumMap:
    return QuantumMap(sum(sandwich(k) for k in ops))


def trace_distance(a, b) -> float:
    a, b = as_array(a), as_array(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    diff = a - b
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))).sum())


def trace_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Trace distances between two stacks of matrices."""
    diff = np.asarray(a) - np.asarray(b)
    herm = 0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2)))
    return 0.5 * np.abs(np.linalg.eigvalsh(herm)).sum(axis=-1)


# -- scenarios and routes -------------------------------------------------------

ROUTES = ("traced_me", "recursion", "quadrature", "series", "bipartite_cm", "chain_cm",
          "laplace")


@dataclass(frozen=True)
class Scenario:
    """A model on a uniform grid ``t_k = k tau``, ``k = 0..n_steps``."""

    model: ModelSpec
    tau: float
    n_steps: int
    n_ancillas: int = 4
    chain_n_max: int = collision.N_MAX
    laplace_points: int = 10
    laplace_nodes: int = 32
    me_max_step_norm: float = 0.02

    def __post_init__(self):
        if not self.tau > 0 or self.n_steps < 1:
            raise ValueError("need tau > 0 and at least one step")

    @classmethod
    def from_t_max(cls, model: ModelSpec, tau: float, t_max: float, **kw) -> "Scenario":
        ratio = t_max / tau
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"t_max / tau = {ratio!r} is not a positive integer")
        return cls(model, tau, n, **kw)

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def collision_config(self) -> collision.CollisionConfig:
        m = self.model
        return collision.CollisionConfig(self.tau, m.h_sm, m.eta_m, m.eta_bar_m,
                                         n_steps=self.n_steps, gamma=m.gamma)

    def laplace_indices(self) -> np.ndarray:
        k = min(self.laplace_points, self.n_steps)
        return np.unique(np.round(np.linspace(0, self.n_steps, k + 1)[1:]).astype(int))


class RouteRunner:
    """Runs routes on one scenario, sharing the tabulated reduced maps."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._table = None
        self._lock = threading.Lock()

    @property
    def table(self) -> memkernel.MapTable:
        with self._lock:
            if self._table is None:
                s, m = self.scenario, self.scenario.model
                self._table = memkernel.tabulate_maps(m.h_sm, m.eta_m, m.eta_bar_m, s.tau,
                                                      s.n_steps)
        return self._table

    def run(self, route: str) -> Trajectory:
        if route not in ROUTES:
            raise ValueError(f"unknown route {route!r}")
        out = getattr(self, f"_{route}")()
        return Trajectory(out.times, out.states, out.factor_dims, route)

    def _traced_me(self) -> Trajectory:
        s, m = self.scenario, self.scenario.model
        gen = build_bipartite_generator(m.h_sm, m.gamma, m.eta_m)
        sub = max(1, math.ceil(gen.norm() * s.tau / s.me_max_step_norm * (1 + 1e-12)))
        fine = (s.tau / sub) * np.arange(s.n_steps * sub + 1)
        rho0 = DensityMatrix(np.kron(m.rho0.mat, m.eta_bar_m.mat), m.dims)
        traj = integrate_bipartite(gen, rho0, fine, max_step_norm=s.me_max_step_norm)
        return Trajectory(s.times, traj.states[::sub], m.dims).reduced((0,))

    def _recursion(self) -> Trajectory:
        m = self.scenario.model
        return memkernel.solve_recursion(self.table, m.rho0, m.gamma)

    def _quadrature(self) -> Trajectory:
        m = self.scenario.model
        return memkernel.solve_quadrature(self.table, m.rho0, m.gamma)

    def _series(self) -> Trajectory:
        m = self.scenario.model
        return memkernel.dynamical_map_series(self.table, m.gamma).apply(m.rho0)

    def _bipartite_cm(self) -> Trajectory:
        s, m = self.scenario, self.scenario.model
        return collision.simulate_bipartite_cm(s.collision_config(), m.rho0).reduced((0,))

    def _chain_cm(self) -> Trajectory:
        s, m = self.scenario, self.scenario.model
        if s.n_ancillas > s.chain_n_max:
            raise ChainTooLarge(f"{s.n_ancillas} ancillas exceed n_max = {s.chain_n_max}")
        n = min(s.n_steps, s.n_ancillas)
        return collision.chain_trajectory(s.collision_config(), m.rho0, n, s.chain_n_max)

    def _laplace(self) -> Trajectory:
        s, m = self.scenario, self.scenario.model
        image = laplace.LaplaceModel(m.h_sm, m.eta_m, m.eta_bar_m).image(m.gamma, m.rho0)
        idx = s.laplace_indices()
        times = s.times[idx]
        states = np.stack([laplace.talbot_invert(image, t, s.laplace_nodes) for t in times])
        return Trajectory(times, 0.5 * (states + np.conj(np.swapaxes(states, -1, -2))),
                          (m.dims[0],))


# -- comparison harness ---------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    route_a: str
    route_b: str
    grid: np.ndarray
    distances: np.ndarray
    max_distance: float
    tolerance: float
    passed: bool
    error: str | None = None

    @classmethod
    def from_distances(cls, a, b, grid, distances, tolerance) -> "ComparisonReport":
        grid = np.asarray(grid, float)
        distances = np.asarray(distances, float)
        if not distances.size:
            # nothing to compare (e.g. a short chain against late Laplace points)
            return cls(a, b, grid, distances, math.nan, float(tolerance), True)
        mx = float(np.max(distances))
        return cls(a, b, grid, distances, mx, float(tolerance), bool(mx <= tolerance))

    @classmethod
    def failed(cls, a, b, tolerance, error: str) -> "ComparisonReport":
        empty = np.empty(0)
        return cls(a, b, empty, empty, math.nan, float(tolerance), False, error)


@dataclass
class ComparisonMatrix:
    routes: tuple
    reports: dict = field(default_factory=dict)        # (a, b) -> ComparisonReport
    trajectories: dict = field(default_factory=dict)   # route -> Trajectory
    errors: dict = field(default_factory=dict)         # route -> exception

    @property
    def passed(self) -> bool:
        return not self.errors and all(r.passed for r in self.reports.values())

    def report(self, a: str, b: str) -> ComparisonReport:
        return self.reports[(a, b)] if (a, b) in self.reports else self.reports[(b, a)]


def pair_tolerance(a: str, b: str, tolerance: float, overrides: Mapping | None) -> float:
    overrides = overrides or {}
    for key in (f"{a}:{b}", f"{b}:{a}"):
        if key in overrides:
            return float(overrides[key])
    return float(tolerance)


def compare_trajectories(a: Trajectory, b: Trajectory, tau: float, tolerance: float
                         ) -> ComparisonReport:
    """Per-time trace distances on the grid points both trajectories share."""
    ia = np.rint(a.times / tau).astype(int)
    ib = np.rint(b.times / tau).astype(int)
    common, pa, pb = np.intersect1d(ia, ib, return_indices=True)
    dist = trace_distances(a.states[pa], b.states[pb])
    return ComparisonReport.from_distances(a.label, b.label, common * tau, dist, tolerance)


def compare_routes(scenario: Scenario, routes: Sequence[str], tolerance: float,
                   tolerances: Mapping | None = None,
                   runner: Callable[[str], Trajectory] | None = None,
                   map_fn: Callable = map) -> ComparisonMatrix:
    """Run ``routes`` on ``scenario`` and compare every pair.

    A route that raises is recorded in ``errors``; every pair involving it
    gets a failed report, and the remaining pairs are still compared.
    ``map_fn`` may be an executor's ``map`` to run routes concurrently.
    """
    routes = tuple(dict.fromkeys(routes))
    if not routes:
        raise ValueError("no routes requested")
    run = RouteRunner(scenario).run if runner is None else runner

    def attempt(route):
        try:
            return route, run(route), None
        except ExactMemError as exc:
            return route, None, exc

    out = ComparisonMatrix(routes)
    for route, traj, exc in map_fn(attempt, routes):
        if exc is None:
            out.trajectories[route] = traj
        else:
            out.errors[route] = exc
    for a, b in combinations(routes, 2):
        tol = pair_tolerance(a, b, tolerance, tolerances)
        bad = [r for r in (a, b) if r in out.errors]
        if bad:
            msg = "; ".join(f"{r}: {type(out.errors[r]).__name__}: {out.errors[r]}" for r in bad)
            out.reports[(a, b)] = ComparisonReport.failed(a, b, tol, msg)
        else:
            out.reports[(a, b)] = compare_trajectories(out.trajectories[a], out.trajectories[b],
                                                       scenario.tau, tol)
    return out
