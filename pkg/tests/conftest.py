import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


def loop_ptrace(rho, da, db, keep):
    """Partial trace of a bipartite matrix by explicit index loops (test oracle)."""
    out = np.zeros((da, da) if keep == 0 else (db, db), dtype=complex)
    for i in range(da):
        for j in range(da):
            for k in range(db):
                for m in range(db):
                    val = rho[i * db + k, j * db + m]
                    if keep == 0 and k == m:
                        out[i, j] += val
                    elif keep == 1 and i == j:
                        out[k, m] += val
    return out


def expm_eig(a):
    """Matrix exponential through a diagonalization (generic non-normal matrices)."""
    w, v = np.linalg.eig(a)
    return v @ np.diag(np.exp(w)) @ np.linalg.inv(v)


def rand_density(rng, d, rank=None):
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def rand_herm(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
