import numpy as np
import pytest

from exactmem import laplace as lp
from exactmem import liouville as lv
from exactmem import memkernel as mk
from exactmem import qmat
from exactmem.errors import DimensionMismatch, NonConvergent
from exactmem.models import SZ, xx_model
from exactmem.qmat import HermitianOperator
from exactmem.verify import trace_distance

from conftest import loop_ptrace, rand_density, rand_herm


@pytest.fixture
def model():
    return xx_model(1.0, eta_bar_m=np.eye(2) / 2, gamma=1.0)


def lt_quadrature(model, s, which="e", t_end=30.0, panels=600):
    """int_0^T e^{-s t} E(t) dt by Gauss-Legendre panels (direct transform oracle)."""
    nodes, weights = np.polynomial.legendre.leggauss(12)
    edges = np.linspace(0, t_end, panels + 1)
    ts, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ts.append(0.5 * (b - a) * nodes + 0.5 * (a + b))
        ws.append(0.5 * (b - a) * weights)
    ts, ws = np.concatenate(ts), np.concatenate(ws)
    eta = model.eta_m if which == "e" else model.eta_bar_m
    maps = mk.reduced_map_stack(model.h_sm, eta, ts)
    return np.einsum("t,tab->ab", ws * np.exp(-s * ts), maps)


class TestResolvent:
    def test_zero_hamiltonian(self, rng):
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        y = lp.resolvent_apply(np.zeros((4, 4)), 2.0 - 1.0j, x)
        assert np.allclose(y, x / (2.0 - 1.0j))

    def test_spectral_oracle(self, rng):
        h = np.kron(SZ, SZ)
        w, v = np.linalg.eigh(h)
        x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        xt = v.conj().T @ x @ v
        yt = xt / (1.0 + 1j * (w[:, None] - w[None, :]))
        y = lp.resolvent_apply(h, 1.0, x)
        assert np.max(np.abs(y - v @ yt @ v.conj().T)) < 1e-13

    def test_defining_equation(self, rng):
        h = rand_herm(rng, 6)
        x = rng.normal(size=(6, 6))
        s = 0.3 + 2.0j
        y = lp.resolvent_apply(h, s, x)
        residual = s * y + 1j * (h @ y - y @ h) - x
        assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(x)

    def test_resolvent_identity(self, rng):
        h = rand_herm(rng, 4)
        for _ in range(5):
            x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            s1, s2 = complex(*rng.uniform(0.1, 2, 2)), complex(*rng.uniform(0.1, 2, 2))
            lhs = lp.resolvent_apply(h, s1, x) - lp.resolvent_apply(h, s2, x)
            rhs = (s2 - s1) * lp.resolvent_apply(h, s1, lp.resolvent_apply(h, s2, x))
            assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_ill_conditioned(self):
        from exactmem.errors import IllConditioned
        with pytest.raises(IllConditioned):
            # s = 0 is an eigenvalue of -i[H, .] for any H
            lp.resolvent_apply(np.kron(SZ, SZ), 0.0, np.eye(4))


class TestTransformedMaps:
    def test_zero_hamiltonian(self):
        h = HermitianOperator(np.zeros((4, 4)), (2, 2))
        e, phi = lp.transformed_maps(h, np.diag([1.0, 0]), np.eye(2) / 2, 0.5)
        assert np.allclose(e.smat, 2.0 * np.eye(4))
        assert np.allclose(phi.smat, 2.0 * np.eye(4))

    @pytest.mark.parametrize("s", [1.0, 0.8 + 1.5j])
    def test_direct_transform(self, model, s):
        e, phi = lp.transformed_maps(model.h_sm, model.eta_m, model.eta_bar_m, s)
        assert np.max(np.abs(e.smat - lt_quadrature(model, s, "e"))) < 1e-6
        assert np.max(np.abs(phi.smat - lt_quadrature(model, s, "phi"))) < 1e-6

    def test_equal_states_give_equal_maps(self):
        m = xx_model(1.0)
        e, phi = lp.transformed_maps(m.h_sm, m.eta_m, m.eta_bar_m, 1.3)
        assert np.array_equal(e.smat, phi.smat)

    def test_dimension_mismatch(self, model):
        with pytest.raises(DimensionMismatch):
            lp.transformed_maps(model.h_sm, np.eye(3) / 3, model.eta_bar_m, 1.0)


class TestLaplaceSolution:
    def test_unitary_limit(self, model):
        _, phi = lp.transformed_maps(model.h_sm, model.eta_m, model.eta_bar_m, 0.7)
        pt = lp.laplace_solution(model.h_sm, model.eta_m, model.eta_bar_m, 0.0, model.rho0, 0.7)
        assert np.allclose(pt.rho_tilde, phi(model.rho0.mat))

    @pytest.mark.parametrize("s", [0.1, 1.0, 2.0 + 3.0j])
    def test_trace(self, model, s):
        pt = lp.laplace_solution(model.h_sm, model.eta_m, model.eta_bar_m, 1.5, model.rho0, s)
        assert abs(np.trace(pt.rho_tilde) - 1 / s) < 1e-9

    def test_partial_sums_converge(self, model):
        s = 1.0 + 0.5j
        full = lp.laplace_solution(model.h_sm, model.eta_m, model.eta_bar_m, 1.0, model.rho0, s)
        errs = [np.max(np.abs(lp.laplace_partial_sum(model.h_sm, model.eta_m, model.eta_bar_m,
                                                     1.0, model.rho0, s, k) - full.rho_tilde))
                for k in (1, 5, 20, 80)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-10

    def test_bipartite_expansion_terms(self, rng):
        # rho~(1) = U~(s+G)[rho0 kron eta_bar], rho~(k) = U~(s+G)[Tr_M rho~(k-1) kron eta]
        h = HermitianOperator(rand_herm(rng, 4), (2, 2))
        eta, eta_bar = rand_density(rng, 2), rand_density(rng, 2)
        rho0 = rand_density(rng, 2)
        s, g = 0.7 + 0.4j, 1.3
        e, phi = lp.transformed_maps(h, eta, eta_bar, s + g)
        term = lp.resolvent_apply(h, s + g, np.kron(rho0, eta_bar))
        reduced = phi(rho0)
        for k in range(1, 5):
            assert np.max(np.abs(loop_ptrace(term, 2, 2, 0) - reduced)) < 1e-10
            term = lp.resolvent_apply(h, s + g, np.kron(loop_ptrace(term, 2, 2, 0), eta))
            reduced = e(reduced)

    def test_point_rejects_non_finite(self):
        from exactmem.errors import IllConditioned
        with pytest.raises(IllConditioned):
            lp.LaplacePoint(1.0, np.array([[np.nan]]))


class TestTalbot:
    def test_exponential(self):
        assert abs(lp.talbot_invert(lambda s: 1 / (s + 1), 2.0) - np.exp(-2)) < 1e-8

    def test_ramp(self):
        assert abs(lp.talbot_invert(lambda s: 1 / s ** 2, 3.0) - 3.0) < 1e-8

    def test_oscillation(self):
        assert abs(lp.talbot_invert(lambda s: 1 / (s * s + 1), 1.2) - np.sin(1.2)) < 1e-8

    def test_matrix_valued(self):
        f = lambda s: np.array([[1 / (s + 1), 1 / s], [0, 1 / (s + 2)]])
        got = lp.talbot_invert(f, 0.5)
        assert np.allclose(got, [[np.exp(-0.5), 1], [0, np.exp(-1)]], atol=1e-8)

    def test_discontinuous_target_does_not_converge(self):
        # inverse of e^{-s}/s is a unit step at t = 1
        with pytest.raises(NonConvergent):
            lp.talbot_invert(lambda s: np.exp(-s) / s, 1.0)

    def test_requires_positive_time(self):
        with pytest.raises(ValueError):
            lp.talbot_invert(lambda s: 1 / s, 0.0)

    @pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
    def test_against_recursion(self, t):
        m = xx_model(1.0, gamma=1.0)
        tau = 1e-3
        n = int(round(t / tau))
        tab = mk.tabulate_maps(m.h_sm, m.eta_m, m.eta_bar_m, tau, n)
        rec = mk.solve_recursion(tab, m.rho0, 1.0).states[n]
        img = lp.LaplaceModel(m.h_sm, m.eta_m, m.eta_bar_m).image(1.0, m.rho0)
        inv = lp.talbot_invert(img, t)
        assert trace_distance(0.5 * (inv + inv.conj().T), rec) < 1e-5

    def test_against_exact_bipartite_dynamics(self, model):
        from conftest import expm_eig
        gen = lv.build_bipartite_generator(model.h_sm, 1.0, model.eta_m).generator
        x0 = lv.vec(np.kron(model.rho0.mat, model.eta_bar_m.mat))
        exact = qmat.ptrace(lv.unvec(expm_eig(1.5 * gen) @ x0, 4), (2, 2), [0])
        img = lp.LaplaceModel(model.h_sm, model.eta_m, model.eta_bar_m).image(1.0, model.rho0)
        assert np.max(np.abs(lp.talbot_invert(img, 1.5) - exact)) < 1e-9
