import numpy as np
import pytest

from exactmem import liouville as lv
from exactmem import memkernel as mk
from exactmem import qmat
from exactmem.errors import InvalidState, SingularImplicitStep, TruncationNotConverged
from exactmem.models import jaynes_cummings_model, xx_model
from exactmem.verify import choi_of, trace_distances

from conftest import expm_eig, loop_ptrace, rand_density, rand_herm


def reduced_map_oracle(h, eta, t, ds, dm):
    u = qmat.unitary_of(h, t)

    def action(rho):
        return loop_ptrace(u @ np.kron(rho, eta) @ u.conj().T, ds, dm, 0)
    return lv.vectorize_map(action, ds).smat


def exact_reduced(model, times):
    """Reduced states from the exponential of the bipartite generator."""
    gen = lv.build_bipartite_generator(model.h_sm, model.gamma, model.eta_m).generator
    x0 = lv.vec(np.kron(model.rho0.mat, model.eta_bar_m.mat))
    ds, dm = model.dims
    dt = times[1] - times[0]
    step = expm_eig(dt * gen)
    out = [x0]
    for _ in times[1:]:
        out.append(step @ out[-1])
    return qmat.ptrace(lv.unvec(np.array(out), ds * dm), (ds, dm), [0])


@pytest.fixture
def mixed_xx():
    return xx_model(1.0, eta_bar_m=np.eye(2) / 2, gamma=1.0)


class TestMapTable:
    def test_matches_oracle(self, rng):
        h = qmat.HermitianOperator(rand_herm(rng, 6), (2, 3))
        eta, eta_bar = rand_density(rng, 3), rand_density(rng, 3)
        tab = mk.tabulate_maps(h, eta, eta_bar, 0.3, 4)
        for j in (1, 4):
            assert np.max(np.abs(tab.e_maps[j] - reduced_map_oracle(h.mat, eta, 0.3 * j, 2, 3))) < 1e-13
            assert np.max(np.abs(tab.phi_maps[j] - reduced_map_oracle(h.mat, eta_bar, 0.3 * j, 2, 3))) < 1e-13

    def test_identity_at_zero_and_cptp(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.1, 20)
        assert np.allclose(tab.e_maps[0], np.eye(4))
        for j in range(0, 21, 5):
            assert choi_of(tab.e(j)).eigenvalues()[0] > -1e-12
            assert tab.phi(j).tp_residual() < 1e-13

    def test_rejects_non_identity_start(self):
        bad = np.stack([2 * np.eye(4), np.eye(4)])
        with pytest.raises(InvalidState):
            mk.MapTable(0.1, bad, bad)

    def test_rejects_non_tp(self):
        bad = np.stack([np.eye(4), 0.5 * np.eye(4)])
        with pytest.raises(InvalidState):
            mk.MapTable(0.1, bad, bad)

    def test_truncated(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.1, 10)
        assert tab.truncated(3).n_steps == 3
        assert np.allclose(tab.times, 0.1 * np.arange(11))


class TestRecursion:
    def test_first_step_is_phi(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.05, 3)
        sol = mk.solve_recursion(tab, mixed_xx.rho0, 1.0)
        assert np.allclose(sol.states[1], tab.phi(1)(mixed_xx.rho0.mat), atol=1e-15)

    def test_second_step_by_hand(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.05, 2)
        g = 1.3
        p = np.exp(-g * 0.05)
        rho0 = mixed_xx.rho0.mat
        rho1 = tab.phi(1)(rho0)
        expected = (1 - p) * tab.e(1)(rho1) + p * tab.phi(2)(rho0)
        assert np.allclose(mk.solve_recursion(tab, rho0, g).states[2], expected, atol=1e-15)

    def test_unitary_limit(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 100)
        sol = mk.solve_recursion(tab, mixed_xx.rho0, 0.0)
        expected = lv.unvec(tab.phi_maps @ lv.vec(mixed_xx.rho0.mat), 2)
        assert np.max(np.abs(sol.states - expected)) < 1e-14

    def test_dynamical_map_reproduces_states(self, mixed_xx, rng):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.02, 50)
        lam = mk.dynamical_map_recursion(tab, 0.8)
        rho0 = rand_density(rng, 2)
        sol = mk.solve_recursion(tab, rho0, 0.8)
        assert np.max(np.abs(lv.unvec(lam @ lv.vec(rho0), 2) - sol.states)) < 1e-14
        assert lv.trace_residual(lam) < 1e-13

    def test_memoryless_limit_is_semigroup(self):
        m = xx_model(1.0)
        tab = mk.tabulate_maps(m.h_sm, m.eta_m, m.eta_bar_m, 0.1, 6)
        sol = mk.solve_recursion(tab, m.rho0, np.inf)
        e1 = tab.e_maps[1]
        for n in range(7):
            expected = lv.unvec(np.linalg.matrix_power(e1, n) @ lv.vec(m.rho0.mat), 2)
            assert np.max(np.abs(sol.states[n] - expected)) < 1e-14

    def test_memory_probability(self):
        assert mk.memory_probability(2.0, 0.5) == pytest.approx(np.exp(-1.0))
        with pytest.raises(ValueError):
            mk.memory_probability(-1.0, 0.1)


class TestPanelWeights:
    @pytest.mark.parametrize("x", [1e-6, 5e-5, 1e-4, 2e-4, 0.3, 3.0])
    def test_against_numerical_integral(self, x):
        # int_0^1 x e^{-x u} (1 - u) du and int_0^1 x e^{-x u} u du
        nodes, weights = np.polynomial.legendre.leggauss(40)
        u = 0.5 * (nodes + 1)
        w = 0.5 * weights * x * np.exp(-x * u)
        a0, b0 = mk._panel_weights(x)
        assert a0 == pytest.approx(np.sum(w * (1 - u)), rel=1e-12, abs=1e-18)
        assert b0 == pytest.approx(np.sum(w * u), rel=1e-9, abs=1e-18)

    def test_weights_sum_to_decay(self):
        w, _, b0 = mk._kernel_weights(1.5, 0.01, 200)
        # node 0 carries a0, interior nodes w[j], the far node only b0
        total = np.sum(w[:-1]) + b0 * np.exp(-1.5 * 0.01 * 199)
        assert total == pytest.approx(-np.expm1(-1.5 * 2.0), rel=1e-12)


class TestQuadrature:
    def test_unitary_limit(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 100)
        sol = mk.solve_quadrature(tab, mixed_xx.rho0, 0.0)
        expected = lv.unvec(tab.phi_maps @ lv.vec(mixed_xx.rho0.mat), 2)
        assert np.max(np.abs(sol.states - expected)) < 1e-14

    def test_trace_exact(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 500)
        sol = mk.solve_quadrature(tab, mixed_xx.rho0, 2.0)
        assert np.max(np.abs(np.trace(sol.states, axis1=1, axis2=2) - 1)) < 1e-13

    def test_second_order_against_exponential(self, mixed_xx):
        errs = []
        for tau in (0.02, 0.01):
            n = int(round(2.0 / tau))
            tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, tau, n)
            sol = mk.solve_quadrature(tab, mixed_xx.rho0, 1.0)
            errs.append(np.max(trace_distances(sol.states, exact_reduced(mixed_xx, tab.times))))
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_coincides_with_recursion_when_memory_states_agree(self):
        m = xx_model(1.0)
        tab = mk.tabulate_maps(m.h_sm, m.eta_m, m.eta_bar_m, 0.01, 300)
        a = mk.solve_quadrature(tab, m.rho0, 1.7).states
        b = mk.solve_recursion(tab, m.rho0, 1.7).states
        assert np.max(np.abs(a - b)) < 1e-13

    def test_singular_implicit_step(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 1.0, 3)
        with pytest.raises(SingularImplicitStep):
            mk.solve_quadrature(tab, mixed_xx.rho0, 1e9)

    def test_jaynes_cummings(self):
        m = jaynes_cummings_model(1.0, 0.3, 3, gamma=0.5)
        tab = mk.tabulate_maps(m.h_sm, m.eta_m, m.eta_bar_m, 0.01, 200)
        sol = mk.solve_quadrature(tab, m.rho0, m.gamma)
        exact = exact_reduced(m, tab.times)
        assert np.max(trace_distances(sol.states, exact)) < 1e-5


class TestSeries:
    def test_matches_quadrature(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 300)
        series = mk.dynamical_map_series(tab, 1.0)
        a = series.apply(mixed_xx.rho0).states
        b = mk.solve_quadrature(tab, mixed_xx.rho0, 1.0).states
        assert np.max(np.abs(a - b)) < 1e-12
        assert series.last_term_ratio <= 1e-13

    def test_first_term_only(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 50)
        s1 = mk.dynamical_map_series(tab, 1.0, k_max=1, check=False)
        decay = np.exp(-tab.times)[:, None, None]
        assert np.allclose(s1.maps, decay * tab.phi_maps)

    def test_truncation_not_converged(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 300)
        with pytest.raises(TruncationNotConverged):
            mk.dynamical_map_series(tab, 1.0, k_max=3)

    def test_partial_sums_are_cp(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.02, 100)
        for k in (1, 2, 4):
            part = mk.dynamical_map_series(tab, 2.0, k_max=k, check=False)
            for j in (10, 50, 100):
                assert choi_of(part.map(j)).eigenvalues()[0] > -1e-12

    def test_unitary_limit(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 50)
        s = mk.dynamical_map_series(tab, 0.0)
        assert s.n_terms == 1
        assert np.array_equal(s.maps, tab.phi_maps)

    def test_bad_arguments(self, mixed_xx):
        tab = mk.tabulate_maps(mixed_xx.h_sm, mixed_xx.eta_m, mixed_xx.eta_bar_m, 0.01, 5)
        with pytest.raises(ValueError):
            mk.dynamical_map_series(tab, -1.0)
        with pytest.raises(ValueError):
            mk.dynamical_map_series(tab, 1.0, k_max=0)
