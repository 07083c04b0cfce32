"""Scenario builders: XX qubit pair, truncated Jaynes-Cummings, explicit matrices."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .errors import DimensionMismatch, InvalidState, NotHermitian, ParseError, TruncationTooSmall
from .qmat import DensityMatrix, HermitianOperator, as_array

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# |1> is the excited level
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.T.copy()


def ground(d: int = 2) -> np.ndarray:
    out = np.zeros((d, d), dtype=complex)
    out[0, 0] = 1.0
    return out


def excited(d: int = 2) -> np.ndarray:
    out = np.zeros((d, d), dtype=complex)
    out[1, 1] = 1.0
    return out


def maximally_mixed(d: int = 2) -> np.ndarray:
    return np.eye(d, dtype=complex) / d


def annihilation(dim: int) -> np.ndarray:
    """Truncated bosonic lowering operator on ``dim`` Fock levels."""
    return np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    h_sm: HermitianOperator
    eta_m: DensityMatrix
    eta_bar_m: DensityMatrix
    rho0: DensityMatrix
    gamma: float
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = self.h_sm.factor_dims
        if len(dims) != 2:
            raise DimensionMismatch(f"h_sm must have factors (S, M), got {dims}")
        ds, dm = dims
        if self.rho0.dim != ds:
            raise DimensionMismatch(f"rho0 has dimension {self.rho0.dim}, S has {ds}")
        for label, st in (("eta_m", self.eta_m), ("eta_bar_m", self.eta_bar_m)):
            if st.dim != dm:
                raise DimensionMismatch(f"{label} has dimension {st.dim}, M has {dm}")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and nonnegative")

    @property
    def dims(self) -> tuple[int, int]:
        return self.h_sm.factor_dims

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


def _state(x, default, dim: int, name: str) -> DensityMatrix:
    mat = default if x is None else as_array(x)
    if mat.shape != (dim, dim):
        raise DimensionMismatch(f"{name} must be {dim}x{dim}, got {mat.shape}")
    return DensityMatrix(mat, (dim,), name=name)


def xx_model(g: float = 1.0, eta_m=None, eta_bar_m=None, rho0=None,
             gamma: float = 1.0) -> ModelSpec:
    """Two qubits with ``H = g (sx sx + sy sy) / 2``; defaults rho0 excited, memory ground."""
    h = g * (np.kron(SX, SX) + np.kron(SY, SY)) / 2
    eta = _state(eta_m, ground(), 2, "eta_m")
    return ModelSpec("xx", HermitianOperator(h, (2, 2)), eta,
                     _state(eta_bar_m, eta.mat, 2, "eta_bar_m"),
                     _state(rho0, excited(), 2, "rho0"), float(gamma), {"g": float(g)})


def jaynes_cummings_model(g: float = 1.0, delta: float = 0.0, n_trunc: int = 2,
                          gamma: float = 1.0, eta_m=None, eta_bar_m=None,
                          rho0=None) -> ModelSpec:
    """Qubit S coupled to a mode M truncated at Fock level ``n_trunc``.

    ``H = delta a^dag a + g (sigma_+ a + sigma_- a^dag)``, used with the
    swap-class memory bath (defaults: vacuum ``eta_m = eta_bar_m``, excited S).
    """
    if int(n_trunc) != n_trunc or n_trunc < 2:
        raise TruncationTooSmall(f"n_trunc = {n_trunc}; need at least 2")
    dm = int(n_trunc) + 1
    a = annihilation(dm)
    h = (delta * np.kron(np.eye(2), a.conj().T @ a)
         + g * (np.kron(SIGMA_PLUS, a) + np.kron(SIGMA_MINUS, a.conj().T)))
    eta = _state(eta_m, ground(dm), dm, "eta_m")
    return ModelSpec("jaynes_cummings", HermitianOperator(h, (2, dm)), eta,
                     _state(eta_bar_m, eta.mat, dm, "eta_bar_m"),
                     _state(rho0, excited(), 2, "rho0"), float(gamma),
                     {"g": float(g), "delta": float(delta), "n_trunc": float(n_trunc)})


# -- config parsing -----------------------------------------------------------

NAMED_STATES = {"ground": ground, "vacuum": ground, "excited": excited,
                "mixed": maximally_mixed, "maximally_mixed": maximally_mixed}


def parse_matrix(value, field_name: str) -> np.ndarray:
    """Matrix literal: list of rows, entries numbers or strings such as ``"0.5-0.5j"``."""
    if not isinstance(value, (list, tuple)) or not value:
        raise ParseError("expected a nonempty list of rows", field_name)
    try:
        rows = [[complex(str(v).replace(" ", "")) if isinstance(v, str) else complex(v)
                 for v in row] for row in value]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad matrix entry ({exc})", field_name) from None
    if len({len(r) for r in rows}) != 1 or len(rows) != len(rows[0]):
        raise ParseError("matrix must be square", field_name)
    return np.array(rows, dtype=complex)


def parse_state(value, dim: int, field_name: str) -> DensityMatrix:
    if isinstance(value, str):
        if value not in NAMED_STATES:
            raise ParseError(f"unknown named state {value!r} (known: {sorted(NAMED_STATES)})",
                             field_name)
        mat = NAMED_STATES[value](dim)
    else:
        mat = parse_matrix(value, field_name)
    if mat.shape != (dim, dim):
        raise ParseError(f"expected a {dim}x{dim} matrix, got {mat.shape}", field_name)
    try:
        return DensityMatrix(mat, (dim,), name=field_name)
    except InvalidState as exc:
        raise InvalidState(f"{field_name}: {exc}") from None


def _number(section: Mapping, key: str, default=None, path: str = "") -> float:
    val = section.get(key, default)
    if val is None:
        raise ParseError("missing required value", f"{path}{key}")
    if isinstance(val, bool):
        raise ParseError("expected a number", f"{path}{key}")
    try:
        return float(val)
    except (TypeError, ValueError):
        raise ParseError(f"expected a number, got {val!r}", f"{path}{key}") from None


def from_config(cfg: Mapping[str, Any]) -> ModelSpec:
    """Build a validated :class:`ModelSpec` from a parsed scenario document.

    Uses the ``model`` section, the optional ``states`` section (``rho0``,
    ``eta_m``, ``eta_bar_m``; named states or matrix literals) and ``gamma``.
    """
    if not isinstance(cfg, Mapping):
        raise ParseError("scenario must be a mapping")
    model = cfg.get("model")
    if not isinstance(model, Mapping):
        raise ParseError("missing or malformed section", "model")
    name = model.get("name")
    gamma = _number(cfg, "gamma")
    if gamma < 0:
        raise ParseError("must be nonnegative", "gamma")
    states = cfg.get("states", {}) or {}
    if not isinstance(states, Mapping):
        raise ParseError("must be a mapping", "states")

    if name == "xx":
        base = xx_model(_number(model, "g", 1.0, "model."))
        h, params = base.h_sm, base.parameters
    elif name == "jaynes_cummings":
        n_trunc = model.get("n_trunc", 2)
        if not isinstance(n_trunc, int) or isinstance(n_trunc, bool):
            raise ParseError("must be an integer", "model.n_trunc")
        base = jaynes_cummings_model(_number(model, "g", 1.0, "model."),
                                     _number(model, "delta", 0.0, "model."), n_trunc)
        h, params = base.h_sm, base.parameters
    elif name == "custom":
        mat = parse_matrix(model.get("h_sm"), "model.h_sm")
        dims = model.get("factor_dims")
        if (not isinstance(dims, (list, tuple)) or len(dims) != 2
                or not all(isinstance(d, int) and d >= 1 for d in dims)):
            raise ParseError("must be two positive integers [d_S, d_M]", "model.factor_dims")
        if dims[0] * dims[1] != mat.shape[0]:
            raise ParseError(f"{dims} does not match a {mat.shape[0]}x{mat.shape[0]} h_sm",
                             "model.factor_dims")
        try:
            h = HermitianOperator(mat, tuple(dims))
        except NotHermitian as exc:
            raise NotHermitian(f"model.h_sm: {exc}") from None
        params = {}
    else:
        raise ParseError(f"unknown model {name!r} (xx, jaynes_cummings, custom)", "model.name")

    ds, dm = h.factor_dims
    eta = parse_state(states.get("eta_m", "ground"), dm, "states.eta_m")
    eta_bar = (eta if states.get("eta_bar_m") is None
               else parse_state(states["eta_bar_m"], dm, "states.eta_bar_m"))
    rho0 = parse_state(states.get("rho0", "excited"), ds, "states.rho0")
    return ModelSpec(str(name), h, eta, eta_bar, rho0, gamma, params)
