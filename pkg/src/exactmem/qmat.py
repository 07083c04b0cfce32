"""Dense complex linear algebra on labelled tensor-product spaces.

Matrices are plain ``numpy`` complex arrays.  :class:`DensityMatrix` and
:class:`HermitianOperator` wrap a read-only array together with the dimensions
of its tensor factors and check their invariants once, at construction.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidFactorSet, InvalidState, NotHermitian

TOL_HERM = 1e-12
TOL_TR = 1e-10
TOL_PSD = 1e-10


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.flags.writeable = False
    return a


def as_array(x) -> np.ndarray:
    """Return the matrix behind ``x`` (a wrapper with ``.mat`` or array-like)."""
    return np.asarray(getattr(x, "mat", x), dtype=complex)


def _check_dims(n: int, factor_dims) -> tuple[int, ...]:
    dims = (n,) if factor_dims is None else tuple(int(d) for d in factor_dims)
    if not dims or any(d < 1 for d in dims) or int(np.prod(dims)) != n:
        raise InvalidFactorSet(f"factor dims {dims} do not multiply to {n}")
    return dims


def hermiticity_error(a) -> float:
    a = as_array(a)
    return float(np.max(np.abs(a - a.conj().swapaxes(-1, -2)), initial=0.0))


def check_state(mat, factor_dims=None, *, tol_herm=TOL_HERM, tol_tr=TOL_TR,
                tol_psd=TOL_PSD, name="state") -> None:
    """Raise :class:`InvalidState` unless ``mat`` is a valid density matrix."""
    mat = as_array(mat)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidState(f"{name}: expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise InvalidState(f"{name}: non-finite entries")
    if factor_dims is not None:
        _check_dims(mat.shape[0], factor_dims)
    herr = hermiticity_error(mat)
    if herr > tol_herm:
        raise InvalidState(f"{name}: not Hermitian (max |A - A^dag| = {herr:.3e})")
    tr = np.trace(mat).real
    if abs(tr - 1.0) > tol_tr:
        raise InvalidState(f"{name}: trace {tr!r} differs from 1")
    lmin = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0]
    if lmin < -tol_psd:
        raise InvalidState(f"{name}: not positive semidefinite (min eigenvalue {lmin:.3e})")


@dataclass(frozen=True)
class HermitianOperator:
    mat: np.ndarray
    factor_dims: tuple[int, ...] = None
    tol_herm: InitVar[float] = TOL_HERM

    def __post_init__(self, tol_herm):
        mat = _frozen(self.mat)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise NotHermitian(f"expected a square matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise NotHermitian("non-finite entries")
        herr = hermiticity_error(mat)
        if herr > tol_herm:
            raise NotHermitian(f"max |A - A^dag| = {herr:.3e} exceeds {tol_herm:g}")
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "factor_dims", _check_dims(mat.shape[0], self.factor_dims))

    @property
    def dim(self) -> int:
        return self.mat.shape[0]


@dataclass(frozen=True)
class DensityMatrix:
    mat: np.ndarray
    factor_dims: tuple[int, ...] = None
    tol_herm: InitVar[float] = TOL_HERM
    tol_tr: InitVar[float] = TOL_TR
    tol_psd: InitVar[float] = TOL_PSD
    name: str = field(default="state", compare=False, repr=False)

    def __post_init__(self, tol_herm, tol_tr, tol_psd):
        mat = _frozen(self.mat)
        check_state(mat, None, tol_herm=tol_herm, tol_tr=tol_tr, tol_psd=tol_psd,
                    name=self.name)
        try:
            dims = _check_dims(mat.shape[0], self.factor_dims)
        except InvalidFactorSet as exc:
            raise InvalidState(f"{self.name}: {exc}") from None
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "factor_dims", dims)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.mat if dtype is None else self.mat.astype(dtype)


def kron(*ops) -> np.ndarray:
    """Kronecker product of one or more matrices, left factor outermost."""
    return reduce(np.kron, (as_array(o) for o in ops))


def tensor(*states: DensityMatrix) -> DensityMatrix:
    """Product state carrying the concatenated factor dims."""
    dims = sum((s.factor_dims for s in states), ())
    return DensityMatrix(kron(*states), dims)


def _keep_set(keep: Iterable[int], nfac: int) -> tuple[int, ...]:
    keep = tuple(int(k) for k in keep)
    if not keep:
        raise InvalidFactorSet("keep must be nonempty")
    if any(b <= a for a, b in zip(keep, keep[1:])):
        raise InvalidFactorSet(f"keep {keep} must be strictly increasing")
    if keep[0] < 0 or keep[-1] >= nfac:
        raise InvalidFactorSet(f"keep {keep} references a factor outside 0..{nfac - 1}")
    return keep


def ptrace(mat, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Array-level partial trace; leading axes of ``mat`` are treated as batch axes."""
    mat = np.asarray(mat)
    dims = tuple(dims)
    nfac = len(dims)
    keep = _keep_set(keep, nfac)
    batch = mat.shape[:-2]
    t = mat.reshape(batch + dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    rows = list(letters[:nfac])
    cols = [r if k not in keep else letters[nfac + k] for k, r in enumerate(rows)]
    out = "".join(rows[k] for k in keep) + "".join(cols[k] for k in keep)
    sub = "..." + "".join(rows) + "".join(cols) + "->..." + out
    dk = int(np.prod([dims[k] for k in keep]))
    return np.einsum(sub, t).reshape(batch + (dk, dk))


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    keep = _keep_set(keep, len(rho.factor_dims))
    red = ptrace(rho.mat, rho.factor_dims, keep)
    return DensityMatrix(red, tuple(rho.factor_dims[k] for k in keep), tol_tr=1e-9,
                         tol_psd=1e-9, name="reduced state")


def eig_hermitian(h) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and unitary eigenvector matrix (columns) of ``h``."""
    if not isinstance(h, HermitianOperator):
        h = HermitianOperator(as_array(h))
    w, v = np.linalg.eigh(h.mat)
    return w, v


def unitary_of(h, t: float) -> np.ndarray:
    """Propagator ``exp(-i h t)`` by spectral decomposition."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    w, v = eig_hermitian(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def propagators(h, times) -> np.ndarray:
    """Stack of ``exp(-i h t)`` for every entry of ``times``."""
    w, v = eig_hermitian(h)
    phases = np.exp(-1j * np.multiply.outer(np.asarray(times, float), w))
    return np.einsum("ik,tk,jk->tij", v, phases, v.conj())


def embed(op, dims: Sequence[int], targets: Sequence[int]) -> np.ndarray:
    """Place an operator acting on ``targets`` (in that order) into the full space."""
    op = as_array(op)
    dims = tuple(dims)
    targets = tuple(targets)
    nfac = len(dims)
    rest = [k for k in range(nfac) if k not in targets]
    drest = int(np.prod([dims[k] for k in rest])) if rest else 1
    full = np.kron(op, np.eye(drest))
    order = list(targets) + rest
    sub = [dims[k] for k in order]
    t = full.reshape(sub + sub)
    perm = np.argsort(order)
    t = t.transpose(list(perm) + [nfac + p for p in perm])
    n = int(np.prod(dims))
    return t.reshape(n, n)


def trace_norm(a) -> float:
    """Trace norm of a Hermitian matrix."""
    return float(np.abs(np.linalg.eigvalsh(as_array(a))).sum())


# -- random instances (tests, property checks) --------------------------------

def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)


def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


@dataclass(frozen=True)
class Trajectory:
    """States sampled on a uniform time grid.

    ``states`` has shape ``(len(times), d, d)``; entry ``k`` is the state at
    ``times[k]``.
    """

    times: np.ndarray
    states: np.ndarray
    factor_dims: tuple[int, ...] = None
    label: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=complex)
        if states.ndim != 3 or states.shape[0] != times.shape[0]:
            raise ValueError(f"states shape {states.shape} does not match {times.shape[0]} times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "factor_dims", _check_dims(states.shape[1], self.factor_dims))

    def __len__(self):
        return self.times.shape[0]

    def state(self, k: int, **tols) -> DensityMatrix:
        return DensityMatrix(self.states[k], self.factor_dims, **tols)

    def reduced(self, keep=(0,)) -> "Trajectory":
        red = ptrace(self.states, self.factor_dims, keep)
        return Trajectory(self.times, red, tuple(self.factor_dims[k] for k in keep), self.label)
