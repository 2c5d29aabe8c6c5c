import numpy as np
import pytest

from mflq.equivalence import nc_reduce
from mflq.problem import MatrixPath, TimeGrid, check_assumption_S, make_problem
from mflq.riccati import (NonFiniteState, RiccatiSolution, SigmaSingular,
                          centered_bundle, g_function, mean_bundle,
                          riccati_residual, riccati_rhs, sigma_pair,
                          solve_riccati)

from conftest import random_definite_spec


def zero_dynamics(n, m):
    return {"A": np.zeros((n, n)), "Abar": np.zeros((n, n)),
            "B": np.zeros((n, m)), "Bbar": np.zeros((n, m)),
            "C": np.zeros((n, n)), "Cbar": np.zeros((n, n)),
            "D": np.zeros((n, m)), "Dbar": np.zeros((n, m))}


class TestSigmaPair:
    def test_scalar_jump_values(self, ex51):
        pair = sigma_pair(ex51["spec"], np.array([[2.0]]), 0.25)
        assert pair.sigma0[0, 0] == pytest.approx(4.0, rel=1e-14)
        assert pair.sigma1[0, 0] == pytest.approx(2.0 * ex51["delta"], rel=1e-13)

    def test_zero_matrix_reduces_to_control_weights(self, ex51):
        spec = ex51["spec"]
        pair = sigma_pair(spec, np.zeros((1, 1)), 0.5)
        assert pair.sigma0[0, 0] == -4.0
        assert pair.sigma1[0, 0] == -2.0

    def test_matches_direct_assembly(self):
        spec = random_definite_spec(seed=21, n=2, m=2, n_atoms=2,
                                    time_varying=True)
        rng = np.random.default_rng(3)
        P = rng.standard_normal((2, 2))
        P = 0.5 * (P + P.T)
        t = 0.63
        pair = sigma_pair(spec, P, t)
        D = spec.D.at(t)
        Ds = D + spec.Dbar.at(t)
        want0 = spec.weights.R.at(t) + D.T @ P @ D
        want1 = spec.weights.R.at(t) + spec.weights.Rbar.at(t) + Ds.T @ P @ Ds
        for atom in spec.jumps:
            F = atom.F.at(t)
            Fs = F + atom.Fbar.at(t)
            want0 = want0 + atom.rate * (F.T @ P @ F)
            want1 = want1 + atom.rate * (Fs.T @ P @ Fs)
        np.testing.assert_allclose(pair.sigma0, 0.5 * (want0 + want0.T),
                                   rtol=0, atol=1e-14)
        np.testing.assert_allclose(pair.sigma1, 0.5 * (want1 + want1.T),
                                   rtol=0, atol=1e-14)


class TestRhs:
    def test_stationary_point_of_scalar_jump(self, ex51):
        pdot, _ = riccati_rhs(ex51["spec"], [[2.0]], [[1.0]], 0.4)
        assert pdot[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_mean_equation_slope_at_terminal_data(self, ex51):
        delta = ex51["delta"]
        _, pidot = riccati_rhs(ex51["spec"], [[2.0]], [[1.0]], 1.0)
        assert pidot[0, 0] == pytest.approx(2.0 / delta, rel=1e-12)

    def test_degenerate_zero_problem_is_stationary(self):
        grid = TimeGrid(1.0, 10)
        spec = make_problem(
            n=1, m=1, grid=grid, dynamics=zero_dynamics(1, 1), jumps=[],
            weights={"Q": 0.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        pdot, pidot = riccati_rhs(spec, [[0.7]], [[-0.3]], 0.5)
        assert pdot[0, 0] == 0.0
        assert pidot[0, 0] == 0.0


class TestGFunction:
    def test_scalar_jump_bracket_vanishes_at_fixed_point(self, ex51):
        bundle = centered_bundle(ex51["spec"], 0.2)
        out = g_function(bundle, np.array([[2.0]]))
        assert out[0, 0] == pytest.approx(0.0, abs=1e-14)

    def test_matches_rhs_bracket_without_cross_weights(self, definite_spec):
        spec = definite_spec
        rng = np.random.default_rng(4)
        P = rng.standard_normal((2, 2))
        P = 0.5 * (P + P.T)
        Pi = rng.standard_normal((2, 2))
        Pi = 0.5 * (Pi + Pi.T)
        t = 0.52
        pdot, pidot = riccati_rhs(spec, P, Pi, t)
        gc = g_function(centered_bundle(spec, t), P)
        gm = g_function(mean_bundle(spec, t), P, Pi)
        np.testing.assert_allclose(pdot, -0.5 * (gc + gc.T), atol=1e-14)
        np.testing.assert_allclose(pidot, -0.5 * (gm + gm.T), atol=1e-14)

    def test_cross_weight_elimination_identity(self):
        # the drift bracket is unchanged by the no-cross reduction
        spec = random_definite_spec(seed=33, n=2, m=3, n_atoms=2,
                                    time_varying=True)
        reduced = nc_reduce(spec)
        rng = np.random.default_rng(5)
        P = rng.standard_normal((2, 2))
        P = 0.5 * (P + P.T)
        Pi = rng.standard_normal((2, 2))
        Pi = 0.5 * (Pi + Pi.T)
        for t in (0.0, 0.31, 0.87, 1.0):
            a = g_function(centered_bundle(spec, t), P)
            b = g_function(centered_bundle(reduced, t), P)
            scale = max(1.0, float(np.max(np.abs(a))))
            assert np.max(np.abs(a - b)) <= 1e-10 * scale
            am = g_function(mean_bundle(spec, t), P, Pi)
            bm = g_function(mean_bundle(reduced, t), P, Pi)
            scale = max(1.0, float(np.max(np.abs(am))))
            assert np.max(np.abs(am - bm)) <= 1e-10 * scale


class TestSolve:
    def test_scalar_jump_closed_forms(self, ex51):
        sol, forms = ex51["sol"], ex51["forms"]
        nodes = ex51["spec"].grid.nodes
        p_exact = np.array([forms["P"](t) for t in nodes])
        pi_exact = np.array([forms["Pi"](t) for t in nodes])
        assert np.max(np.abs(sol.P.samples[:, 0, 0] - p_exact)) <= 1e-8
        assert np.max(np.abs(sol.Pi.samples[:, 0, 0] - pi_exact)) <= 1e-6

    def test_terminal_samples_are_weights_exactly(self, definite_spec):
        sol = solve_riccati(definite_spec)
        assert np.array_equal(sol.P.samples[-1], definite_spec.weights.G)
        assert np.array_equal(
            sol.Pi.samples[-1],
            definite_spec.weights.G + definite_spec.weights.Gbar)

    def test_zero_terminal_and_running_weights_give_zero(self):
        grid = TimeGrid(1.0, 50)
        spec = make_problem(
            n=2, m=1, grid=grid,
            dynamics={"A": [[0.3, 0.1], [0.0, -0.2]],
                      "Abar": [[0.1, 0.0], [0.0, 0.1]],
                      "B": [[1.0], [0.5]], "Bbar": [[0.0], [0.0]],
                      "C": [[0.2, 0.0], [0.0, 0.2]],
                      "Cbar": np.zeros((2, 2)),
                      "D": [[0.1], [0.3]], "Dbar": [[0.0], [0.0]]},
            jumps=[],
            weights={"Q": np.zeros((2, 2)), "Qbar": np.zeros((2, 2)),
                     "S": np.zeros((2, 1)), "Sbar": np.zeros((2, 1)),
                     "R": 1.0, "Rbar": 0.0,
                     "G": np.zeros((2, 2)), "Gbar": np.zeros((2, 2))},
            x0=[1.0, 0.0],
        )
        sol = solve_riccati(spec)
        assert np.max(np.abs(sol.P.samples)) == 0.0
        assert np.max(np.abs(sol.Pi.samples)) == 0.0

    def test_symmetry_preserved_everywhere(self, definite_spec):
        sol = solve_riccati(definite_spec)
        for path in (sol.P, sol.Pi):
            asym = np.max(np.abs(path.samples
                                 - np.transpose(path.samples, (0, 2, 1))))
            scale = max(1.0, float(np.max(np.abs(path.samples))))
            assert asym <= 1e-10 * scale

    def test_positive_semidefinite_under_definiteness(self, definite_spec):
        report = check_assumption_S(definite_spec.weights, definite_spec.grid)
        assert report.passed
        sol = solve_riccati(definite_spec)
        for path in (sol.P, sol.Pi):
            eigs = np.linalg.eigvalsh(path.samples)
            assert eigs.min() >= -1e-8
        for path in (sol.sigma0, sol.sigma1):
            eigs = np.linalg.eigvalsh(path.samples)
            assert eigs.min() >= report.alpha0 - 1e-8

    def test_sigma_singular_reported_with_time(self):
        # D = 0 and R crossing zero makes sigma0 singular mid-run
        grid = TimeGrid(1.0, 100)
        r_path = np.linspace(-0.5, 0.5, 101)
        spec = make_problem(
            n=1, m=1, grid=grid, dynamics=zero_dynamics(1, 1), jumps=[],
            weights={"Q": 1.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": r_path, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        with pytest.raises(SigmaSingular) as err:
            solve_riccati(spec)
        assert 0.0 <= err.value.t <= 1.0

    def test_blow_up_raises_non_finite(self):
        grid = TimeGrid(1.0, 200)
        spec = make_problem(
            n=1, m=1, grid=grid,
            dynamics={"A": 0.0, "Abar": 0.0, "B": 1.0, "Bbar": 0.0,
                      "C": 0.0, "Cbar": 0.0, "D": 0.0, "Dbar": 0.0},
            jumps=[],
            weights={"Q": -10.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        with pytest.raises(NonFiniteState):
            solve_riccati(spec)

    def test_substeps_must_be_positive(self, definite_spec):
        with pytest.raises(ValueError):
            solve_riccati(definite_spec, substeps=0)


class TestResidual:
    def test_scalar_jump_residual_small(self, ex51):
        res_p, res_pi = riccati_residual(ex51["spec"], ex51["sol"])
        assert res_p <= 1e-5
        assert res_pi <= 1e-5

    def test_zero_problem_residual_exact(self):
        grid = TimeGrid(1.0, 40)
        spec = make_problem(
            n=1, m=1, grid=grid, dynamics=zero_dynamics(1, 1), jumps=[],
            weights={"Q": 0.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        sol = solve_riccati(spec)
        assert riccati_residual(spec, sol) == (0.0, 0.0)

    def test_corrupted_solution_detected(self, ex51):
        sol = ex51["sol"]
        shifted = RiccatiSolution(
            spec=sol.spec,
            P=MatrixPath(sol.P.grid, sol.P.samples + 0.1),
            Pi=sol.Pi, sigma0=sol.sigma0, sigma1=sol.sigma1, stats=sol.stats)
        res_p, _ = riccati_residual(ex51["spec"], shifted)
        assert res_p > 1e-2

    def test_residual_shrinks_under_grid_refinement(self):
        res = {}
        for M in (200, 400):
            spec = random_definite_spec(seed=11, M=M, time_varying=True)
            sol = solve_riccati(spec)
            res[M] = max(riccati_residual(spec, sol))
        assert res[400] <= res[200] / 2.0
