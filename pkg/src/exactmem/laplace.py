"""Laplace-domain route to the reduced dynamics.

With ``R(s) = (s + i[H, .])^{-1}`` the Laplace image of the reduced state is

    rho~(s) = [I - G E~(s + G)]^{-1} Phi~(s + G) [rho0],
    E~(s)[rho]   = Tr_M R(s)[rho kron eta_M],
    Phi~(s)[rho] = Tr_M R(s)[rho kron eta_bar_M],

and the time-domain state follows from a fixed-Talbot contour inversion.

The Talbot contour runs into the left half-plane, so functions here accept any
complex ``s`` at which the linear systems are well conditioned (the images are
analytic continuations there); conditioning is checked instead of ``Re s``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, IllConditioned, NonConvergent, SeriesDivergence
from .liouville import QuantumMap, commutator, unvec, vec
from .qmat import HermitianOperator, as_array

COND_MAX = 1e12


@dataclass(frozen=True)
class LaplacePoint:
    s: complex
    rho_tilde: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.rho_tilde)):
            raise IllConditioned(f"non-finite Laplace image at s = {self.s}")


def _checked_solve(a: np.ndarray, b: np.ndarray, exc=IllConditioned) -> np.ndarray:
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise exc(f"condition number {cond:.3e} exceeds {COND_MAX:g}")
    return np.linalg.solve(a, b)


def resolvent_matrix(h_sm, s: complex) -> np.ndarray:
    """Superoperator matrix of ``s + i[H, .]`` (not inverted)."""
    h = as_array(h_sm)
    d = h.shape[0]
    return s * np.eye(d * d) + 1j * commutator(h)


def resolvent_apply(h_sm, s: complex, x) -> np.ndarray:
    """Solve ``(s + i[H, .]) Y = X`` for ``Y``."""
    x = as_array(x)
    d = as_array(h_sm).shape[0]
    a = resolvent_matrix(h_sm, s)
    b = vec(x)
    y = _checked_solve(a, b)
    res = np.linalg.norm(a @ y - b)
    if res > 1e-10 * max(np.linalg.norm(b), 1e-300):
        raise IllConditioned(f"resolvent residual {res:.3e} too large")
    return unvec(y, d)


def _embed_superop(eta, ds: int) -> np.ndarray:
    """Superoperator of ``rho -> rho kron eta`` (shape ``(ds dm)^2 x ds^2``)."""
    eta = as_array(eta)
    dm = eta.shape[0]
    units = unvec(np.eye(ds * ds, dtype=complex), ds)
    return vec(np.einsum("kab,mn->kambn", units, eta).reshape(ds * ds, ds * dm, ds * dm)).T


def _trace_m_superop(ds: int, dm: int) -> np.ndarray:
    """Superoperator of ``X -> Tr_M X`` on the ``(S, M)`` space."""
    n = ds * dm
    units = unvec(np.eye(n * n, dtype=complex), n).reshape(n * n, ds, dm, ds, dm)
    return vec(np.einsum("kambm->kab", units)).T


class LaplaceModel:
    """Cached superoperators for repeated evaluation at many frequencies."""

    def __init__(self, h_sm: HermitianOperator, eta_m, eta_bar_m):
        if len(h_sm.factor_dims) != 2:
            raise DimensionMismatch(f"expected factors (S, M), got {h_sm.factor_dims}")
        self.ds, self.dm = h_sm.factor_dims
        for name, st in (("eta_m", eta_m), ("eta_bar_m", eta_bar_m)):
            if as_array(st).shape != (self.dm, self.dm):
                raise DimensionMismatch(f"{name} does not match factor M of dimension {self.dm}")
        n = self.ds * self.dm
        self._ih = 1j * commutator(h_sm.mat)
        self._eye = np.eye(n * n)
        self._in_eta = _embed_superop(eta_m, self.ds)
        self._in_bar = _embed_superop(eta_bar_m, self.ds)
        self._trace = _trace_m_superop(self.ds, self.dm)

    def transformed_maps(self, s: complex) -> tuple[QuantumMap, QuantumMap]:
        a = s * self._eye + self._ih
        both = _checked_solve(a, np.hstack([self._in_eta, self._in_bar]))
        k = self.ds * self.ds
        return QuantumMap(self._trace @ both[:, :k]), QuantumMap(self._trace @ both[:, k:])

    def solution(self, gamma: float, rho0, s: complex) -> LaplacePoint:
        e_t, phi_t = self.transformed_maps(s + gamma)
        lhs = np.eye(self.ds * self.ds) - gamma * e_t.smat
        y = _checked_solve(lhs, phi_t.smat @ vec(as_array(rho0)), exc=SeriesDivergence)
        return LaplacePoint(s, unvec(y, self.ds))

    def image(self, gamma: float, rho0) -> Callable[[complex], np.ndarray]:
        return lambda s: self.solution(gamma, rho0, s).rho_tilde


def transformed_maps(h_sm, eta_m, eta_bar_m, s: complex) -> tuple[QuantumMap, QuantumMap]:
    return LaplaceModel(h_sm, eta_m, eta_bar_m).transformed_maps(s)


def laplace_solution(h_sm, eta_m, eta_bar_m, gamma: float, rho0, s: complex) -> LaplacePoint:
    return LaplaceModel(h_sm, eta_m, eta_bar_m).solution(gamma, rho0, s)


def laplace_partial_sum(h_sm, eta_m, eta_bar_m, gamma: float, rho0, s: complex,
                        k_terms: int) -> np.ndarray:
    """``sum_{k<=K} G^(k-1) E~^(k-1)(s+G) Phi~(s+G) [rho0]`` (geometric-series form)."""
    e_t, phi_t = transformed_maps(h_sm, eta_m, eta_bar_m, s + gamma)
    x = phi_t.smat @ vec(as_array(rho0))
    acc = np.zeros_like(x)
    for _ in range(k_terms):
        acc = acc + x
        x = gamma * (e_t.smat @ x)
    return unvec(acc, e_t.dim)


# -- fixed Talbot inversion ---------------------------------------------------

def _talbot(f, t: float, m: int) -> np.ndarray:
    # contour s(theta) = r theta (cot theta + i), theta in (-pi, pi), r = 2m / (5t);
    # trapezoid rule with step pi/m over the full contour (f may be complex-valued)
    r = 2.0 * m / (5.0 * t)
    acc = 0.5 * np.exp(r * t) * np.asarray(f(complex(r)), dtype=complex)
    for k in range(1, m):
        theta = k * np.pi / m
        cot = 1.0 / np.tan(theta)
        sigma = theta + (theta * cot - 1.0) * cot
        for sgn in (1.0, -1.0):
            s = r * theta * (cot + 1j * sgn)
            acc = acc + 0.5 * np.exp(t * s) * np.asarray(f(s), dtype=complex) * (1 + 1j * sgn * sigma)
    return (r / m) * acc


def talbot_invert(f: Callable[[complex], np.ndarray], t: float, n_nodes: int = 32,
                  check: bool = True, rtol: float = 1e-6) -> np.ndarray:
    """Inverse Laplace transform of ``f`` at time ``t`` by fixed-Talbot quadrature.

    ``n_nodes`` is the Abate-Valko parameter M: nodes ``theta_k = k pi / M`` on
    both halves of the contour.  If ``check`` is set, the result is compared
    with the one from ``M // 2`` nodes and :class:`NonConvergent` is raised when
    the relative change exceeds ``rtol``.
    """
    if not t > 0:
        raise ValueError("Talbot inversion needs t > 0")
    if n_nodes < 2:
        raise ValueError("n_nodes must be at least 2")
    out = _talbot(f, t, n_nodes)
    if check:
        coarse = _talbot(f, t, max(n_nodes // 2, 1))
        scale = max(np.max(np.abs(out)), 1e-300)
        change = np.max(np.abs(out - coarse)) / scale
        if not np.isfinite(change) or change > rtol:
            raise NonConvergent(f"relative change {change:.3e} between {n_nodes // 2} "
                                f"and {n_nodes} nodes")
    return out
