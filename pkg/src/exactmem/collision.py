"""Collision models.

Two microscopic pictures of the same reduced dynamics:

* a chain of ancillas where S collides with ancilla ``k`` at step ``k`` and,
  before that, ancillas ``k - 1`` and ``k`` swap their states with probability
  ``p`` (the memory);
* a memoryless bipartite model where S and a single memory M collide through
  ``U_tau`` and M is reset to ``eta`` with probability ``q = 1 - p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qmat
from .errors import ChainTooLarge, DimensionMismatch, InvalidState, StateInvariantViolated
from .liouville import Lindbladian, build_bipartite_generator
from .qmat import DensityMatrix, HermitianOperator, Trajectory, as_array

N_MAX = 6


def swap_unitary(d: int) -> np.ndarray:
    """Permutation matrix with ``S |a, b> = |b, a>`` on two ``d``-level factors."""
    if d < 2:
        raise ValueError("swap needs d >= 2")
    s = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            s[b * d + a, a * d + b] = 1.0
    return s


def _swap_factors(mat: np.ndarray, dims, i: int, j: int) -> np.ndarray:
    """``S_ij mat S_ij`` by permuting tensor axes."""
    dims = tuple(dims)
    nf = len(dims)
    perm = list(range(nf))
    perm[i], perm[j] = perm[j], perm[i]
    t = mat.reshape(dims + dims).transpose(perm + [nf + k for k in perm])
    return t.reshape(mat.shape)


def prob_swap(sigma: DensityMatrix, i: int, j: int, p: float) -> DensityMatrix:
    """``(1 - p) sigma + p S_ij sigma S_ij``."""
    dims = sigma.factor_dims
    if not (0 <= i < len(dims) and 0 <= j < len(dims)) or i == j:
        raise DimensionMismatch(f"factors ({i}, {j}) invalid for dims {dims}")
    if dims[i] != dims[j]:
        raise DimensionMismatch(f"cannot swap factors of dimension {dims[i]} and {dims[j]}")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    out = (1.0 - p) * sigma.mat + p * _swap_factors(sigma.mat, dims, i, j)
    return DensityMatrix(out, dims, tol_tr=1e-9, tol_psd=1e-9, name="swapped state")


@dataclass(frozen=True)
class CollisionConfig:
    """Shared parameters of both collision models.

    Give either ``p`` or ``gamma`` (or both, consistently); the other follows
    from ``p = exp(-gamma tau)``.  ``h_coll`` is the two-body collision
    Hamiltonian on (S, ancilla), which for the bipartite model is ``H_SM``.
    """

    tau: float
    h_coll: HermitianOperator
    eta: DensityMatrix
    eta_bar: DensityMatrix
    n_steps: int = 1
    p: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if self.p is None and self.gamma is None:
            raise ValueError("give p or gamma")
        if self.gamma is not None and self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.p is None:
            object.__setattr__(self, "p", float(np.exp(-self.gamma * self.tau)))
        elif not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.gamma is None:
            object.__setattr__(self, "gamma",
                               np.inf if self.p == 0 else float(-np.log(self.p) / self.tau))
        elif abs(self.p - np.exp(-self.gamma * self.tau)) > 1e-12:
            raise ValueError("p and gamma are inconsistent: p != exp(-gamma tau)")
        if len(self.h_coll.factor_dims) != 2:
            raise DimensionMismatch("h_coll must act on exactly two factors")
        da = self.h_coll.factor_dims[1]
        if self.eta.dim != da or self.eta_bar.dim != da:
            raise DimensionMismatch("eta and eta_bar must match the ancilla dimension")

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def d_s(self) -> int:
        return self.h_coll.factor_dims[0]

    @property
    def d_a(self) -> int:
        return self.h_coll.factor_dims[1]

    def unitary(self) -> np.ndarray:
        return qmat.unitary_of(self.h_coll, self.tau)


@dataclass(frozen=True)
class ChainState:
    n_ancillas: int
    dims: tuple[int, ...]
    sigma: DensityMatrix = field(repr=False)

    def __post_init__(self):
        dims = tuple(self.dims)
        if len(dims) != self.n_ancillas + 1 or len(set(dims[1:])) > 1:
            raise DimensionMismatch(f"chain dims {dims} must be (d_S, d_A, ..., d_A)")
        if self.sigma.factor_dims != dims:
            raise DimensionMismatch("sigma factor dims do not match the chain")
        object.__setattr__(self, "dims", dims)

    def reduced(self) -> DensityMatrix:
        return qmat.partial_trace(self.sigma, [0])


def chain_initial_state(config: CollisionConfig, rho0, n_ancillas: int) -> ChainState:
    """``rho0 kron eta_bar kron eta kron ... kron eta``."""
    rho0 = as_array(rho0)
    if rho0.shape != (config.d_s, config.d_s):
        raise DimensionMismatch("rho0 does not match the system dimension")
    dims = (config.d_s,) + (config.d_a,) * n_ancillas
    factors = [rho0, config.eta_bar] + [config.eta] * (n_ancillas - 1)
    sigma = DensityMatrix(qmat.kron(*factors), dims, name="chain state")
    return ChainState(n_ancillas, dims, sigma)


def simulate_chain(config: CollisionConfig, rho0, n: int | None = None,
                   n_max: int = N_MAX) -> list[ChainState]:
    """Exact density-matrix evolution of the chain for ``n`` steps.

    The chain holds exactly ``n`` ancillas.  Step ``k`` swaps ancillas
    ``k - 1`` and ``k`` with probability ``p`` (for ``k >= 2``) and then lets S
    collide with ancilla ``k``.  No swap follows the last collision.
    Returns the states ``sigma_0 .. sigma_n``.
    """
    n = config.n_steps if n is None else n
    if n < 1:
        raise ValueError("need at least one step")
    if n > n_max:
        raise ChainTooLarge(f"{n} ancillas exceed n_max = {n_max}")
    state = chain_initial_state(config, rho0, n)
    dims = state.dims
    u2 = config.unitary()
    out = [state]
    sigma = state.sigma
    for k in range(1, n + 1):
        if k >= 2:
            sigma = prob_swap(sigma, k - 1, k, config.p)
        u = qmat.embed(u2, dims, (0, k))
        mat = u @ sigma.mat @ u.conj().T
        try:
            sigma = DensityMatrix(0.5 * (mat + mat.conj().T), dims, tol_tr=1e-9,
                                  tol_psd=1e-9, name="chain state")
        except InvalidState as exc:
            raise StateInvariantViolated(str(exc), step=k) from None
        out.append(ChainState(n, dims, sigma))
    return out


def chain_trajectory(config: CollisionConfig, rho0, n: int | None = None,
                     n_max: int = N_MAX) -> Trajectory:
    """Reduced S states of :func:`simulate_chain` on the grid ``k tau``."""
    states = simulate_chain(config, rho0, n, n_max)
    red = np.stack([qmat.ptrace(s.sigma.mat, s.dims, [0]) for s in states])
    return Trajectory(config.tau * np.arange(len(states)), red, (config.d_s,), "chain_cm")


# -- bipartite model ----------------------------------------------------------

def map_s_via_swap(rho_sm, eta, dims) -> np.ndarray:
    """``Tr_n S_Mn (rho_SM kron eta_n) S_Mn^dag`` built with an explicit swap matrix."""
    ds, dm = dims
    big = np.kron(as_array(rho_sm), as_array(eta))
    sw = np.kron(np.eye(ds), swap_unitary(dm))
    return qmat.ptrace(sw @ big @ sw.conj().T, (ds, dm, dm), [0, 1])


def map_s(rho_sm, eta, dims=None, check: bool = False) -> np.ndarray:
    """``S[rho_SM] = Tr_M(rho_SM) kron eta``.

    With ``check`` set the result is compared against :func:`map_s_via_swap`.
    """
    rho = as_array(rho_sm)
    eta = as_array(eta)
    dims = getattr(rho_sm, "factor_dims", None) if dims is None else tuple(dims)
    if dims is None or len(dims) != 2:
        dm = eta.shape[0]
        dims = (rho.shape[0] // dm, dm)
    if dims[1] != eta.shape[0] or dims[0] * dims[1] != rho.shape[0]:
        raise DimensionMismatch(f"eta of dimension {eta.shape[0]} does not fit dims {dims}")
    out = np.kron(qmat.ptrace(rho, dims, [0]), eta)
    if check:
        err = np.max(np.abs(out - map_s_via_swap(rho, eta, dims)))
        if err > 1e-12:
            raise AssertionError(f"map S disagrees with its swap form by {err:.3e}")
    return out


def bipartite_step(rho_sm: np.ndarray, u: np.ndarray, config: CollisionConfig,
                   dims, reset: bool = True) -> np.ndarray:
    """One step ``p U[rho] + q U[S[rho]]`` (``reset=False`` skips the swap)."""
    if reset:
        # M swaps with a fresh ancilla with probability 1 - p
        rho_sm = config.p * rho_sm + config.q * map_s(rho_sm, config.eta, dims)
    return u @ rho_sm @ u.conj().T


def simulate_bipartite_cm(config: CollisionConfig, rho0, eta_bar=None, n: int | None = None,
                          verify_closed_form: bool = False) -> Trajectory:
    """States ``rho^(0..n)`` of the memoryless S-M collision model.

    ``rho^(0) = rho0 kron eta_bar`` and ``rho^(1) = U[rho^(0)]``; afterwards
    ``rho^(k) = p U[rho^(k-1)] + q U[S[rho^(k-1)]]``.  With
    ``verify_closed_form`` every iterate is compared with the unrolled sum
    ``q sum_j p^(j-1) U^j S[rho^(k-j)] + p^(k-1) U^k[rho^(0)]``.
    """
    n = config.n_steps if n is None else n
    eta_bar = config.eta_bar if eta_bar is None else eta_bar
    rho0 = as_array(rho0)
    ds, dm = config.d_s, config.d_a
    if rho0.shape != (ds, ds) or as_array(eta_bar).shape != (dm, dm):
        raise DimensionMismatch("rho0 / eta_bar do not match the collision Hamiltonian")
    dims = (ds, dm)
    u = config.unitary()
    out = np.empty((n + 1, ds * dm, ds * dm), dtype=complex)
    out[0] = np.kron(rho0, as_array(eta_bar))
    for k in range(1, n + 1):
        out[k] = bipartite_step(out[k - 1], u, config, dims, reset=k > 1)
        if verify_closed_form:
            err = np.max(np.abs(out[k] - _closed_form(out, k, u, config, dims)))
            if err > 1e-11:
                raise StateInvariantViolated(f"closed form mismatch {err:.3e}", step=k)
    return Trajectory(config.tau * np.arange(n + 1), out, dims, "bipartite_cm")


def _closed_form(states: np.ndarray, k: int, u: np.ndarray, config: CollisionConfig,
                 dims) -> np.ndarray:
    p, q = config.p, config.q
    acc = np.zeros_like(states[0])
    uj = np.eye(u.shape[0], dtype=complex)
    for j in range(1, k):
        uj = u @ uj
        acc += q * p ** (j - 1) * (uj @ map_s(states[k - j], config.eta, dims) @ uj.conj().T)
    uk = np.linalg.matrix_power(u, k)
    return acc + p ** (k - 1) * (uk @ states[0] @ uk.conj().T)


# -- microscopic generator check ----------------------------------------------

@dataclass(frozen=True)
class GeneratorCheckReport:
    taus: np.ndarray
    residuals: np.ndarray
    bounds: np.ndarray         # 10 tau (||H||^2 + G ||H|| + G^2)
    orders: np.ndarray         # log2 of successive residual ratios

    @property
    def within_bound(self) -> bool:
        return bool(np.all(self.residuals <= self.bounds))


def discrete_generator_check(config: CollisionConfig, state=None, n_halvings: int = 2
                             ) -> GeneratorCheckReport:
    """Compare one bipartite step with the continuous generator.

    For each ``tau`` in ``config.tau / 2^k`` the residual is the trace norm of
    ``(step(X) - X) / tau - G[X]``, with ``X`` the given S-M state (default
    ``I/d_S kron eta_bar``) and ``G`` the swap-class generator at
    ``gamma = config.gamma``.
    """
    if not np.isfinite(config.gamma):
        raise ValueError("generator check needs a finite gamma")
    ds, dm = config.d_s, config.d_a
    dims = (ds, dm)
    x = (np.kron(np.eye(ds) / ds, as_array(config.eta_bar)) if state is None
         else as_array(state))
    gen: Lindbladian = build_bipartite_generator(config.h_coll, config.gamma, config.eta)
    gx = gen(x)
    hnorm = float(np.linalg.norm(config.h_coll.mat, 2))
    g = config.gamma
    taus = config.tau / 2.0 ** np.arange(n_halvings + 1)
    res = []
    for tau in taus:
        sub = CollisionConfig(tau, config.h_coll, config.eta, config.eta_bar, gamma=g)
        step = bipartite_step(x, sub.unitary(), sub, dims)
        res.append(qmat.trace_norm((step - x) / tau - gx))
    res = np.array(res)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(res[:-1] / res[1:])
    bounds = 10 * taus * (hnorm ** 2 + g * hnorm + g ** 2)
    return GeneratorCheckReport(taus, res, bounds, orders)
