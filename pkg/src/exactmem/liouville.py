"""Superoperators and the swap-class bipartite master equation.

Vectorization convention (used everywhere in the package): column stacking,
``vec(X) = X.reshape(-1, order="F")``, so that ``vec(A X B) = (B.T kron A) vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import qmat
from .errors import DimensionMismatch, InvalidState, StateInvariantViolated, StepTooLarge
from .qmat import DensityMatrix, HermitianOperator, Trajectory, as_array

P_DROP = 1e-14


def vec(x) -> np.ndarray:
    """Column-stack the last two axes of ``x``."""
    x = np.asarray(x)
    return np.swapaxes(x, -1, -2).reshape(x.shape[:-2] + (-1,))


def unvec(v, d: int) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def left(a) -> np.ndarray:
    """Superoperator of ``X -> a X``."""
    a = as_array(a)
    return np.kron(np.eye(a.shape[0]), a)


def right(b) -> np.ndarray:
    """Superoperator of ``X -> X b``."""
    b = as_array(b)
    return np.kron(b.T, np.eye(b.shape[0]))


def sandwich(a, b=None) -> np.ndarray:
    """Superoperator of ``X -> a X b`` (``b`` defaults to ``a^dag``)."""
    a = as_array(a)
    b = a.conj().T if b is None else as_array(b)
    return np.kron(b.T, a)


def commutator(h) -> np.ndarray:
    """Superoperator of ``X -> [h, X]``."""
    return left(h) - right(h)


@dataclass(frozen=True)
class QuantumMap:
    """Linear map on ``dim x dim`` operators stored as a ``dim**2`` square matrix."""

    smat: np.ndarray

    def __post_init__(self):
        smat = np.array(self.smat, dtype=complex)
        n = smat.shape[0]
        d = int(round(np.sqrt(n)))
        if smat.shape != (n, n) or d * d != n:
            raise DimensionMismatch(f"superoperator shape {smat.shape} is not (d^2, d^2)")
        smat.flags.writeable = False
        object.__setattr__(self, "smat", smat)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.smat.shape[0])))

    def __call__(self, x) -> np.ndarray:
        x = as_array(x)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"map on {self.dim}-dim operators applied to shape {x.shape}")
        return unvec(vec(x) @ self.smat.T, self.dim)

    def __matmul__(self, other: "QuantumMap") -> "QuantumMap":
        return QuantumMap(self.smat @ other.smat)

    def tp_residual(self) -> float:
        """Max deviation of ``Tr(map(E_ij))`` from ``Tr(E_ij)`` over matrix units."""
        return trace_residual(self.smat)

    @classmethod
    def identity(cls, d: int) -> "QuantumMap":
        return cls(np.eye(d * d))


def trace_row(d: int) -> np.ndarray:
    """Row vector ``r`` with ``r @ vec(X) == Tr X``."""
    return vec(np.eye(d))


def trace_residual(smat) -> float:
    smat = np.asarray(smat)
    d = int(round(np.sqrt(smat.shape[-1])))
    r = trace_row(d)
    return float(np.max(np.abs(r @ smat - r)))


def vectorize_map(action: Callable[[np.ndarray], np.ndarray], dim: int) -> QuantumMap:
    """Superoperator of a linear ``action`` on ``dim x dim`` matrices."""
    cols = []
    for k in range(dim * dim):
        unit = np.zeros(dim * dim, dtype=complex)
        unit[k] = 1.0
        cols.append(vec(np.asarray(action(unvec(unit, dim)), dtype=complex)))
    return QuantumMap(np.stack(cols, axis=1))


# -- swap-class jump operators ------------------------------------------------

@dataclass(frozen=True)
class JumpOperatorSet:
    dim_m: int
    ops: tuple            # (mu, nu, matrix) triples
    probs: np.ndarray     # full spectrum of eta, including dropped entries
    basis: np.ndarray     # eigenvectors as columns

    def completeness_error(self) -> float:
        acc = sum(l.conj().T @ l for _, _, l in self.ops)
        return float(np.max(np.abs(acc - np.eye(self.dim_m))))


def build_swap_jump_ops(eta_m, eigvecs=None) -> JumpOperatorSet:
    """Jump operators ``sqrt(p_nu) |nu><mu|`` built from the spectrum of ``eta_m``.

    ``eigvecs`` may supply a particular orthonormal eigenbasis (useful when the
    spectrum is degenerate); otherwise ``numpy.linalg.eigh`` picks one.
    Eigenvalues at or below ``P_DROP`` contribute no operators.
    """
    if not isinstance(eta_m, DensityMatrix):
        eta_m = DensityMatrix(as_array(eta_m), name="eta_m")
    eta = eta_m.mat
    d = eta.shape[0]
    if eigvecs is None:
        probs, basis = np.linalg.eigh(eta)
    else:
        basis = np.asarray(eigvecs, dtype=complex)
        if basis.shape != (d, d) or np.max(np.abs(basis.conj().T @ basis - np.eye(d))) > 1e-12:
            raise InvalidState("eigvecs must be a unitary matrix of eigenvectors")
        probs = np.real(np.einsum("ik,ij,jk->k", basis.conj(), eta, basis))
        if np.max(np.abs(eta @ basis - basis * probs)) > 1e-10:
            raise InvalidState("eigvecs are not eigenvectors of eta_m")
    probs = np.clip(probs.real, 0.0, None)
    ops = []
    for nu in range(d):
        if probs[nu] <= P_DROP:
            continue
        ket_nu = basis[:, nu]
        for mu in range(d):
            ops.append((mu, nu, np.sqrt(probs[nu]) * np.outer(ket_nu, basis[:, mu].conj())))
    return JumpOperatorSet(d, tuple(ops), probs, basis)


def lindblad_dissipator(jump_ops: Sequence, rates=None) -> np.ndarray:
    """Superoperator of ``sum_k r_k (L X L^dag - {L^dag L, X}/2)``."""
    rates = np.ones(len(jump_ops)) if rates is None else rates
    d = as_array(jump_ops[0]).shape[0]
    out = np.zeros((d * d, d * d), dtype=complex)
    for r, l in zip(rates, jump_ops):
        l = as_array(l)
        ldl = l.conj().T @ l
        out += r * (sandwich(l) - 0.5 * (left(ldl) + right(ldl)))
    return out


def dissipator(ops: JumpOperatorSet) -> QuantumMap:
    return QuantumMap(lindblad_dissipator([l for _, _, l in ops.ops]))


def embed_on_factor(map_m: QuantumMap, factor_dims: Sequence[int], target: int) -> QuantumMap:
    """Act with ``map_m`` on factor ``target`` and as the identity elsewhere."""
    dims = tuple(int(d) for d in factor_dims)
    if not 0 <= target < len(dims):
        raise DimensionMismatch(f"target factor {target} outside {dims}")
    if map_m.dim != dims[target]:
        raise DimensionMismatch(
            f"map acts on dimension {map_m.dim}, factor {target} has dimension {dims[target]}")
    d = map_m.dim
    n = int(np.prod(dims))
    nf = len(dims)
    # smat[a' + d*b', a + d*b] becomes t[b', a', b, a]
    t = map_m.smat.reshape(d, d, d, d)
    rows, cols = "abcdefghij"[:nf], "klmnopqrst"[:nf]
    new_row, new_col = "y", "z"
    out_rows = rows[:target] + new_row + rows[target + 1:]
    out_cols = cols[:target] + new_col + cols[target + 1:]
    spec = (f"{new_col}{new_row}{cols[target]}{rows[target]},"
            f"K{rows}{cols}->K{out_rows}{out_cols}")
    units = unvec(np.eye(n * n, dtype=complex), n).reshape((n * n,) + dims + dims)
    images = np.einsum(spec, t, units).reshape(n * n, n, n)
    return QuantumMap(vec(images).T)


# -- bipartite generator ------------------------------------------------------

@dataclass(frozen=True)
class Lindbladian:
    generator: np.ndarray
    factor_dims: tuple[int, ...]

    @property
    def dim(self) -> int:
        return int(np.prod(self.factor_dims))

    def __call__(self, x) -> np.ndarray:
        return unvec(self.generator @ vec(as_array(x)), self.dim)

    def norm(self) -> float:
        return float(np.linalg.norm(self.generator, 2))


def swap_class_action(rho_sm, eta_m, factor_dims) -> np.ndarray:
    """Direct formula ``Tr_M(rho) kron eta - rho`` for a two-factor ``rho``."""
    rho_sm = as_array(rho_sm)
    return np.kron(qmat.ptrace(rho_sm, factor_dims, [0]), as_array(eta_m)) - rho_sm


def build_bipartite_generator(h_sm: HermitianOperator, gamma: float, eta_m) -> Lindbladian:
    """Generator ``-i[H, .] + gamma * L_M`` with the swap-class dissipator on factor M."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    dims = h_sm.factor_dims
    if len(dims) != 2:
        raise DimensionMismatch(f"expected factors (S, M), got {dims}")
    jumps = build_swap_jump_ops(eta_m)
    if jumps.dim_m != dims[1]:
        raise DimensionMismatch(f"eta_m has dimension {jumps.dim_m}, factor M has {dims[1]}")
    diss = embed_on_factor(dissipator(jumps), dims, 1)
    gen = -1j * commutator(h_sm.mat) + gamma * diss.smat
    return Lindbladian(gen, dims)


def uniform_step(times) -> float:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ValueError("time grid needs at least two points")
    steps = np.diff(times)
    h = steps[0]
    if h <= 0 or np.max(np.abs(steps - h)) > 1e-9 * max(1.0, abs(times[-1])):
        raise ValueError("time grid must be uniform and increasing")
    return float(h)


def integrate_bipartite(gen: Lindbladian, rho0_sm: DensityMatrix, times,
                        max_step_norm: float = 0.1, tol_psd: float = 1e-8) -> Trajectory:
    """Classical RK4 on ``d vec(rho)/dt = G vec(rho)`` over a uniform grid.

    For a constant generator one RK4 step is the degree-4 Taylor polynomial of
    ``exp(h G)``, which is what gets applied.
    """
    times = np.asarray(times, dtype=float)
    h = uniform_step(times)
    if gen.norm() * h > max_step_norm:
        raise StepTooLarge(f"||G|| h = {gen.norm() * h:.3g} exceeds {max_step_norm}")
    d = gen.dim
    hg = h * gen.generator
    step = np.eye(d * d, dtype=complex)
    term = np.eye(d * d, dtype=complex)
    for k in range(1, 5):
        term = term @ hg / k
        step = step + term
    x = vec(as_array(rho0_sm))
    out = np.empty((times.size, d, d), dtype=complex)
    out[0] = as_array(rho0_sm)
    for k in range(1, times.size):
        x = step @ x
        out[k] = unvec(x, d)
        try:
            qmat.check_state(out[k], tol_psd=tol_psd, name="bipartite state")
        except InvalidState as exc:
            raise StateInvariantViolated(str(exc), step=k) from None
    return Trajectory(times, out, gen.factor_dims, "traced_me")
