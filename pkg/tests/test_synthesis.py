import numpy as np
import pytest

from mflq import registry
from mflq.equivalence import nc_reduce, transform_pair
from mflq.problem import TimeGrid, make_problem
from mflq.riccati import solve_riccati
from mflq.simulation import simulate_paths, solve_mean_ode
from mflq.synthesis import (adjoint_representation, optimal_value,
                            stationarity_residual, synthesize_feedback,
                            zero_control)

from conftest import random_definite_spec


class TestFeedback:
    def test_scalar_jump_gains(self, ex51):
        law, forms = ex51["law"], ex51["forms"]
        nodes = ex51["spec"].grid.nodes
        assert np.max(np.abs(law.K0.samples[:, 0, 0] - 0.5)) <= 1e-8
        k1_exact = np.array([forms["K1"](t) for t in nodes])
        assert np.max(np.abs(law.K1.samples[:, 0, 0] - k1_exact)) <= 1e-6

    def test_zero_weight_problem_gives_zero_gains(self):
        grid = TimeGrid(1.0, 50)
        spec = make_problem(
            n=1, m=1, grid=grid,
            dynamics={"A": 0.4, "Abar": 0.1, "B": 1.0, "Bbar": 0.2,
                      "C": 0.3, "Cbar": 0.0, "D": 0.5, "Dbar": 0.0},
            jumps=[],
            weights={"Q": 0.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        sol = solve_riccati(spec)
        law = synthesize_feedback(spec, sol)
        assert np.max(np.abs(law.K0.samples)) == 0.0
        assert np.max(np.abs(law.K1.samples)) == 0.0

    def test_asset_liability_gains_match_reduced_formula(self):
        spec, _ = registry.asset_liability(M=200)
        sol = solve_riccati(spec)
        law = synthesize_feedback(spec, sol)
        for k in (0, 50, 199):
            t = spec.grid.nodes[k]
            P = sol.P.samples[k]
            Pi = sol.Pi.samples[k]
            B, C, D = spec.B.at(t), spec.C.at(t), spec.D.at(t)
            sigma = (D.T @ P @ D)[0, 0]
            np.testing.assert_allclose(
                law.K0.samples[k], (B.T @ P + D.T @ P @ C) / sigma,
                rtol=0, atol=1e-13)
            np.testing.assert_allclose(
                law.K1.samples[k], (B.T @ Pi + D.T @ P @ C) / sigma,
                rtol=0, atol=1e-13)


class TestOptimalValue:
    def test_scalar_jump_value(self, ex51):
        assert optimal_value(ex51["sol"], [1.0]) == pytest.approx(
            ex51["forms"]["value"], abs=1e-6)

    def test_zero_state_gives_zero(self, ex51):
        assert optimal_value(ex51["sol"], [0.0]) == 0.0

    def test_quadratic_scaling_exact(self, definite_spec):
        sol = solve_riccati(definite_spec)
        x = np.array([0.75, -0.5])
        # scaling by a power of two is exact in binary floating point
        assert optimal_value(sol, 2.0 * x) == 4.0 * optimal_value(sol, x)


class TestAdjoint:
    def test_scalar_jump_gain_paths(self, ex51):
        spec, sol, delta = ex51["spec"], ex51["sol"], ex51["delta"]
        triple = adjoint_representation(spec, sol)
        nodes = spec.grid.nodes
        k1 = 1.0 / (2.0 * 1.0 - 2.0 * nodes + delta)
        # Y maps are the solution pair itself
        assert triple.y_centered is sol.P
        assert triple.y_mean is sol.Pi
        assert np.max(np.abs(triple.z_centered.samples[:, 0, 0] + 2.0)) <= 1e-8
        # mean gains of Z and r carry the sign that makes the pointwise
        # optimality relation vanish identically
        assert np.max(np.abs(triple.z_mean.samples[:, 0, 0] + 2.0 * k1)) <= 1e-6
        fbar = float(spec.jumps.atoms[0].Fbar.samples[0, 0, 0])
        assert np.max(np.abs(triple.r_mean[0].samples[:, 0, 0]
                             + 2.0 * fbar * k1)) <= 1e-6
        assert np.max(np.abs(triple.r_centered[0].samples)) == 0.0

    def test_terminal_gains_are_terminal_weights(self, definite_spec):
        sol = solve_riccati(definite_spec)
        triple = adjoint_representation(definite_spec, sol)
        assert np.array_equal(triple.y_centered.samples[-1],
                              definite_spec.weights.G)
        assert np.array_equal(
            triple.y_mean.samples[-1],
            definite_spec.weights.G + definite_spec.weights.Gbar)

    def test_zero_weight_problem_gives_zero_triple(self):
        grid = TimeGrid(1.0, 40)
        spec = make_problem(
            n=1, m=1, grid=grid,
            dynamics={"A": 0.4, "Abar": 0.1, "B": 1.0, "Bbar": 0.2,
                      "C": 0.3, "Cbar": 0.0, "D": 0.5, "Dbar": 0.0},
            jumps=[{"rate": 1.0, "mark": 1.0, "E": 0.2, "Ebar": 0.0,
                    "F": 0.1, "Fbar": 0.0}],
            weights={"Q": 0.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[1.0],
        )
        sol = solve_riccati(spec)
        triple = adjoint_representation(spec, sol)
        for path in (triple.y_centered, triple.y_mean, triple.z_centered,
                     triple.z_mean, triple.r_centered[0], triple.r_mean[0]):
            assert np.max(np.abs(path.samples)) == 0.0


class TestStationarity:
    def test_identity_under_synthesized_feedback(self, ex51_m500):
        spec, sol, law, mean = (ex51_m500["spec"], ex51_m500["sol"],
                                ex51_m500["law"], ex51_m500["mean"])
        ens = simulate_paths(spec, law, mean, 42, 100)
        triple = adjoint_representation(spec, sol)
        assert stationarity_residual(spec, ens, triple) <= 1e-8

    def test_zero_control_violates_stationarity(self, ex51_m500):
        spec, sol = ex51_m500["spec"], ex51_m500["sol"]
        law = zero_control(spec)
        mean = solve_mean_ode(spec, law)
        ens = simulate_paths(spec, law, mean, 42, 100)
        triple = adjoint_representation(spec, sol)
        assert stationarity_residual(spec, ens, triple) > 0.01

    def test_zero_problem_zero_control_is_stationary(self):
        grid = TimeGrid(1.0, 30)
        spec = make_problem(
            n=1, m=1, grid=grid,
            dynamics={"A": 0.4, "Abar": 0.0, "B": 1.0, "Bbar": 0.0,
                      "C": 0.2, "Cbar": 0.0, "D": 0.3, "Dbar": 0.0},
            jumps=[],
            weights={"Q": 0.0, "Qbar": 0.0, "S": 0.0, "Sbar": 0.0,
                     "R": 1.0, "Rbar": 0.0, "G": 0.0, "Gbar": 0.0},
            x0=[0.5],
        )
        sol = solve_riccati(spec)
        law = zero_control(spec)
        mean = solve_mean_ode(spec, law)
        ens = simulate_paths(spec, law, mean, 5, 50)
        triple = adjoint_representation(spec, sol)
        assert stationarity_residual(spec, ens, triple) == 0.0

    def test_holds_on_random_definite_instance(self, definite_spec):
        spec = definite_spec
        sol = solve_riccati(spec)
        law = synthesize_feedback(spec, sol)
        mean = solve_mean_ode(spec, law)
        ens = simulate_paths(spec, law, mean, 123, 200)
        triple = adjoint_representation(spec, sol)
        assert stationarity_residual(spec, ens, triple) <= 1e-8


class TestFeedbackInvariance:
    def test_gains_commute_with_cross_weight_removal(self):
        # synthesizing on the reduced problem and transforming the control
        # back reproduces the original feedback on the same paths
        spec = random_definite_spec(seed=29, n=2, m=2, M=300, n_atoms=2)
        reduced = nc_reduce(spec)
        sol = solve_riccati(spec)
        law = synthesize_feedback(spec, sol)
        law_nc = synthesize_feedback(reduced, solve_riccati(reduced))
        mean = solve_mean_ode(spec, law)
        ens = simulate_paths(spec, law, mean, 17, 50)

        moved = transform_pair(ens.states, ens.controls, mean.states,
                               mean.controls, spec, "to_nc")
        # feedback of the reduced problem applied to the transformed pair
        xc = moved.X - mean.states[None, :, :]
        u_nc = (moved.mean_u[None, :, :]
                - np.einsum("kij,pkj->pki", law_nc.K0.samples, xc))
        # the reduced mean control must also satisfy its own feedback rule
        assert np.max(np.abs(
            moved.mean_u + np.einsum("kij,kj->ki", law_nc.K1.samples,
                                     mean.states))) <= 1e-9
        assert np.max(np.abs(u_nc - moved.u)) <= 1e-9
