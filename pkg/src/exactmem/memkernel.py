"""Closed memory-kernel master equation for the reduced state of S.

Everything here works on tables of the two reduced maps

    E(t)[rho]   = Tr_M U(t) (rho kron eta_M)     U(t)^dag
    Phi(t)[rho] = Tr_M U(t) (rho kron eta_bar_M) U(t)^dag

sampled on a uniform grid ``t_j = j * tau``.  Three solvers share those
tables:

* :func:`solve_recursion` -- the discrete recursion produced by the collision
  model with probabilistic inter-ancilla swaps (exact at the discrete level,
  used as the reference);
* :func:`solve_quadrature` -- product-trapezoid discretization of the
  time-integrated kernel equation;
* :func:`dynamical_map_series` -- the expansion of the dynamical map as a sum of
  nested convolutions, each a positive combination of CPTP maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qmat
from .errors import (DimensionMismatch, InvalidState, SingularImplicitStep,
                     StateInvariantViolated, TruncationNotConverged)
from .liouville import QuantumMap, trace_residual, unvec, vec
from .qmat import DensityMatrix, HermitianOperator, Trajectory, as_array

SOLVERS = ("recursion", "quadrature", "series", "laplace")


@dataclass(frozen=True)
class MapTable:
    tau: float
    e_maps: np.ndarray    # (n + 1, d^2, d^2)
    phi_maps: np.ndarray  # (n + 1, d^2, d^2)

    def __post_init__(self):
        e = np.asarray(self.e_maps, dtype=complex)
        phi = np.asarray(self.phi_maps, dtype=complex)
        if e.shape != phi.shape or e.ndim != 3:
            raise DimensionMismatch("e_maps and phi_maps must be equal-shape stacks")
        ident = np.eye(e.shape[1])
        if np.max(np.abs(e[0] - ident)) > 1e-13 or np.max(np.abs(phi[0] - ident)) > 1e-13:
            raise InvalidState("maps at t = 0 must be the identity")
        if max(trace_residual(e), trace_residual(phi)) > 1e-11:
            raise InvalidState("tabulated maps are not trace preserving")
        object.__setattr__(self, "e_maps", e)
        object.__setattr__(self, "phi_maps", phi)

    @property
    def n_steps(self) -> int:
        return self.e_maps.shape[0] - 1

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.e_maps.shape[1])))

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(self.n_steps + 1)

    def e(self, j: int) -> QuantumMap:
        return QuantumMap(self.e_maps[j])

    def phi(self, j: int) -> QuantumMap:
        return QuantumMap(self.phi_maps[j])

    def truncated(self, n: int) -> "MapTable":
        return MapTable(self.tau, self.e_maps[:n + 1], self.phi_maps[:n + 1])


@dataclass(frozen=True)
class KernelSolution(Trajectory):
    solver: str = "recursion"

    def __post_init__(self):
        super().__post_init__()
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        for k, rho in enumerate(self.states):
            try:
                qmat.check_state(rho, tol_herm=1e-9, tol_tr=1e-9, tol_psd=1e-7,
                                 name=f"{self.solver} state")
            except InvalidState as exc:
                raise StateInvariantViolated(str(exc), step=k) from None


def reduced_map_stack(h_sm: HermitianOperator, eta_m, times) -> np.ndarray:
    """Superoperators of ``rho -> Tr_M U(t) (rho kron eta_m) U(t)^dag`` for each time."""
    ds, dm = h_sm.factor_dims
    eta = as_array(eta_m)
    if eta.shape != (dm, dm):
        raise DimensionMismatch(f"M state has shape {eta.shape}, factor M has dimension {dm}")
    u = qmat.propagators(h_sm, times).reshape(-1, ds, dm, ds, dm)
    a = np.einsum("tpqsm,mn->tpqsn", u, eta)
    # out[t, r, p, u, s] multiplies rho[s, u] into result[p, r]
    out = np.einsum("tpqsn,trqun->trpus", a, u.conj())
    return out.reshape(-1, ds * ds, ds * ds)


def tabulate_maps(h_sm: HermitianOperator, eta_m, eta_bar_m, tau: float, n: int) -> MapTable:
    if tau <= 0:
        raise ValueError("tau must be positive")
    if len(h_sm.factor_dims) != 2:
        raise DimensionMismatch(f"expected factors (S, M), got {h_sm.factor_dims}")
    times = tau * np.arange(n + 1)
    return MapTable(tau, reduced_map_stack(h_sm, eta_m, times),
                    reduced_map_stack(h_sm, eta_bar_m, times))


def memory_probability(gamma: float, tau: float) -> float:
    """Swap probability ``p = exp(-gamma tau)`` linking the collision and continuum pictures."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return float(np.exp(-gamma * tau))


def _recursion(table: MapTable, gamma: float, x0: np.ndarray) -> np.ndarray:
    # x0 is vec(rho0) with shape (D,) or a superoperator (D, D); the recursion
    # is linear, so the same loop propagates both.
    n = table.n_steps
    p = memory_probability(gamma, table.tau)
    q = -np.expm1(-gamma * table.tau)
    powers = p ** np.arange(max(n, 1))
    weighted = q * powers[:, None, None] * table.e_maps[1:n + 1] if n else table.e_maps[:0]
    out = np.empty((n + 1,) + x0.shape, dtype=complex)
    out[0] = x0
    for m in range(1, n + 1):
        acc = powers[m - 1] * (table.phi_maps[m] @ x0)
        if m > 1:
            # sum_{j=1}^{m-1} q p^{j-1} E_j out[m-j]
            acc = acc + np.einsum("jab,jb...->a...", weighted[:m - 1], out[m - 1:0:-1])
        out[m] = acc
    return out


def solve_recursion(table: MapTable, rho0, gamma: float) -> KernelSolution:
    """Discrete reduced dynamics ``rho_n = q sum_j p^(j-1) E_j[rho_(n-j)] + p^(n-1) Phi_n[rho0]``."""
    rho0 = as_array(rho0)
    vs = _recursion(table, gamma, vec(rho0))
    return KernelSolution(table.times, unvec(vs, table.dim), None, "recursion",
                          solver="recursion")


def dynamical_map_recursion(table: MapTable, gamma: float) -> np.ndarray:
    """Stack of superoperators ``Lambda_n`` with ``rho_n = Lambda_n[rho0]`` for the recursion."""
    return _recursion(table, gamma, np.eye(table.dim ** 2, dtype=complex))


def _panel_weights(x: float) -> tuple[float, float]:
    """Weights of the left/right node for ``int_0^tau g e^{-g u} (linear) du`` with ``x = g tau``."""
    q = -np.expm1(-x)
    if x < 1e-4:
        right = x / 2 - x * x / 3 + x ** 3 / 8
    else:
        right = (q - x * np.exp(-x)) / x
    return q - right, right


def solve_quadrature(table: MapTable, rho0, gamma: float) -> KernelSolution:
    """Solve the kernel equation in its time-integrated (Volterra) form.

    Integrating the equation once in time and swapping the order of the
    double integral gives

        rho(t) = e^{-G t} Phi(t)[rho0] + G int_0^t e^{-G s} E(s)[rho(t - s)] ds,

    which is discretized by product integration: ``E(s)[rho(t - s)]`` is
    interpolated linearly on each panel and integrated exactly against the
    exponential.  The node at ``s = 0`` involves the unknown ``rho(t)`` and is
    solved for implicitly.  Panel weights sum to ``1 - e^{-G t}`` exactly, so
    the trace is conserved to roundoff, and ``G = 0`` returns ``Phi(t)[rho0]``
    exactly.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = table.n_steps
    tau = table.tau
    d2 = table.dim ** 2
    w, _, b0 = _kernel_weights(gamma, tau, n)
    decay = np.exp(-gamma * tau * np.arange(n + 1))
    implicit = 1.0 - w[0]
    if implicit < 1e-8:
        raise SingularImplicitStep(f"implicit coefficient {implicit:.3e}; tau too large")
    weighted = w[1:, None, None] * table.e_maps[1:]
    x0 = vec(as_array(rho0))
    xs = np.empty((n + 1, d2), dtype=complex)
    xs[0] = x0
    for m in range(1, n + 1):
        rhs = decay[m] * (table.phi_maps[m] @ x0)
        # interior nodes j = 1..m-1, then the far end j = m (right weight only)
        rhs = rhs + np.einsum("jab,jb->a", weighted[:m - 1], xs[m - 1:0:-1])
        rhs = rhs + b0 * decay[m - 1] * (table.e_maps[m] @ x0)
        xs[m] = rhs / implicit
    return KernelSolution(table.times, unvec(xs, table.dim), None, "quadrature",
                          solver="quadrature")


def _kernel_weights(gamma: float, tau: float, n: int) -> tuple[np.ndarray, float, float]:
    """Node weights of ``int_0^{t_n} G e^{-G s} f(s) ds`` for piecewise-linear ``f``.

    Returns ``(w, a0, b0)``: ``w[j]`` is the weight of an interior node ``j``;
    the far node ``j = n`` only gets ``b0 * e^{-G t_(n-1)}``.
    """
    a0, b0 = _panel_weights(gamma * tau)
    decay = np.exp(-gamma * tau * np.arange(n + 1))
    w = decay * a0
    w[1:] += decay[:-1] * b0
    return w, a0, b0


def _kernel_convolver(table: MapTable, gamma: float):
    """Return ``conv(F)[n] ~ int_0^{t_n} G e^{-G s} E(s) F(t_n - s) ds`` (FFT-evaluated)."""
    e = table.e_maps
    n = e.shape[0]
    size = 2 * n
    w, a0, _ = _kernel_weights(gamma, table.tau, n - 1)
    fw = np.fft.fft(w[:, None, None] * e, n=size, axis=0)
    end = a0 * np.exp(-gamma * table.times)[:, None, None] * e

    def conv(f):
        full = np.fft.ifft(np.einsum("kab,kbc->kac", fw, np.fft.fft(f, n=size, axis=0)),
                           axis=0)[:n]
        # the far node carries the right-panel weight only
        return full - end @ f[0]

    return conv


@dataclass(frozen=True)
class MapSeries:
    times: np.ndarray
    maps: np.ndarray           # (n + 1, d^2, d^2)
    n_terms: int
    last_term_ratio: float     # max_t ||last term|| / ||Lambda(t)||

    def map(self, k: int) -> QuantumMap:
        return QuantumMap(self.maps[k])

    def apply(self, rho0) -> KernelSolution:
        d = int(round(np.sqrt(self.maps.shape[1])))
        states = unvec(self.maps @ vec(as_array(rho0)), d)
        return KernelSolution(self.times, states, None, "series", solver="series")


def dynamical_map_series(table: MapTable, gamma: float, k_max: int | None = None,
                         rtol: float = 1e-6, check: bool = True,
                         k_cap: int = 400, stop_tol: float = 1e-13) -> MapSeries:
    """Dynamical map as the truncated series ``Lambda = sum_k G_k`` with

        G_1(t) = e^{-G t} Phi(t),
        G_k(t) = int_0^t G e^{-G s} E(s) G_(k-1)(t - s) ds,

    i.e. ``G^(k-1) e^{-G t}`` times the (k-1)-fold nested convolution of ``E``
    with ``Phi``.  Each convolution uses the same exponential-weighted
    trapezoid as :func:`solve_quadrature`, so every term is a positive
    combination of compositions of CPTP maps.

    With ``k_max=None`` terms are added until the last one is below
    ``stop_tol`` relative to ``Lambda`` (or ``k_cap`` terms are used);
    otherwise exactly ``k_max`` terms are summed.  If ``check`` is set,
    :class:`TruncationNotConverged` is raised when the last term is larger
    than ``rtol`` relative to ``Lambda``.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if k_max is not None and k_max < 1:
        raise ValueError("k_max must be at least 1")
    times = table.times
    term = np.exp(-gamma * times)[:, None, None] * table.phi_maps
    total = term.copy()
    ratio = 0.0 if gamma == 0 else 1.0
    k = 1
    limit = k_cap if k_max is None else k_max
    if gamma > 0 and limit > 1:
        conv = _kernel_convolver(table, gamma)
        while k < limit:
            term = conv(term)
            total = total + term
            k += 1
            ratio = float(np.max(np.linalg.norm(term, axis=(1, 2))
                                 / np.linalg.norm(total, axis=(1, 2))))
            if k_max is None and ratio <= stop_tol:
                break
    if check and ratio > rtol:
        raise TruncationNotConverged(
            f"last of {k} terms has relative size {ratio:.3e} > {rtol:g}")
    return MapSeries(times, total, k, ratio)
