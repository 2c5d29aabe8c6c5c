"""Verification pipelines for the built-in examples.

Each pipeline runs the full production path (validate, check definiteness,
shift, solve, synthesize, simulate) and compares observables against known
values: closed forms where they exist, structural identities (forced zeros,
algebraic stationarity) elsewhere.  Results come back as a
:class:`VerificationReport` of per-check records plus artifacts (solutions,
gain schedules, sweep curves) for file emission.

Tolerances tied to grid resolution scale explicitly with the step size: the
finite-difference Riccati residual probe is second order, so those records
scale with (dt/dt_ref)^2, and the backward-dynamics consistency of the
first-order path scheme scales with dt^1.5.
"""

from dataclasses import dataclass, field

import numpy as np

from .equivalence import canonical_shift, pullback_hamiltonian, pullback_riccati, shift_weights
from .problem import check_assumption_S, with_weights
from .registry import (asset_liability, fbsde_pair, scalar_jump,
                       scalar_jump_closed_forms, shifted_cubic)
from .riccati import riccati_residual, solve_riccati
from .simulation import (perturbation_test, simulate_cost, simulate_paths,
                         solve_mean_ode)
from .synthesis import (adjoint_representation, evaluate_adjoint,
                        optimal_value, stationarity_residual,
                        synthesize_feedback)

#: grid density at which the resolution-scaled tolerances are calibrated
REFERENCE_STEPS_PER_UNIT_TIME = 16000


@dataclass(frozen=True)
class RunConfig:
    """Numerical knobs shared by the verification pipelines and the CLI."""

    M: int = 1000
    substeps: int = 1
    n_paths: int = 100_000
    seed: int = 42
    delta: float = 1.0
    directions: int = 8
    epsilons: tuple = (0.4, 0.2)
    out_dir: str = "out"


@dataclass(frozen=True)
class CheckRecord:
    name: str
    expected: str
    observed: str
    tolerance: str
    passed: bool


@dataclass(frozen=True)
class VerificationReport:
    title: str
    records: tuple
    artifacts: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.records)

    def to_dict(self):
        return {
            "title": self.title,
            "passed": self.passed,
            "records": [
                {"name": r.name, "expected": r.expected,
                 "observed": r.observed, "tolerance": r.tolerance,
                 "passed": r.passed}
                for r in self.records
            ],
        }

    def to_table(self):
        lines = [f"== {self.title} =="]
        width = max((len(r.name) for r in self.records), default=0)
        for r in self.records:
            status = "PASS" if r.passed else "FAIL"
            lines.append(
                f"[{status}] {r.name:<{width}}  observed {r.observed}"
                f"  (expected {r.expected}, tol {r.tolerance})"
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def value_record(name, observed, tolerance, expected=0.0):
    """Record |observed - expected| <= tolerance."""
    return CheckRecord(
        name=name, expected=f"{expected:.6g}", observed=f"{observed:.6g}",
        tolerance=f"{tolerance:.3g}",
        passed=bool(abs(observed - expected) <= tolerance),
    )


def bound_record(name, observed, bound):
    """Record observed <= bound."""
    return CheckRecord(
        name=name, expected=f"<= {bound:.3g}", observed=f"{observed:.6g}",
        tolerance=f"{bound:.3g}", passed=bool(observed <= bound),
    )


def flag_record(name, ok, expected="yes", observed=None):
    return CheckRecord(
        name=name, expected=expected,
        observed=observed if observed is not None else ("yes" if ok else "no"),
        tolerance="-", passed=bool(ok),
    )


@dataclass(frozen=True)
class SweepResult:
    """Control curves along the closed-loop mean across a parameter sweep."""

    param: str
    values: tuple
    ts: np.ndarray
    curves: tuple


def _resolution_scale(grid, power=2.0):
    ref_dt = 1.0 / REFERENCE_STEPS_PER_UNIT_TIME
    return max(1.0, (grid.dt / ref_dt) ** power)


def run_example(example_id, config=None):
    """Run the verification pipeline of one built-in example."""
    config = config or RunConfig()
    pipelines = {
        "5.1": _verify_scalar_jump,
        "5.2": _verify_shifted_cubic,
        "5.3": _verify_fbsde,
        "5.4": _verify_asset_liability,
    }
    if example_id not in pipelines:
        known = ", ".join(sorted(pipelines))
        raise KeyError(f"unknown example id {example_id!r} (known: {known})")
    return pipelines[example_id](config)


def _verify_scalar_jump(config):
    T = 1.0
    delta = config.delta
    spec, _ = scalar_jump(M=config.M, T=T, delta=delta)
    forms = scalar_jump_closed_forms(T=T, delta=delta, x0=float(spec.x0[0]))
    nodes = spec.grid.nodes
    records = []

    original = check_assumption_S(spec.weights, spec.grid)
    records.append(flag_record(
        "original weights fail the definiteness check (R indefinite)",
        not original.passed and any(v[0] == "R" for v in original.violations),
    ))

    sol = solve_riccati(spec, substeps=config.substeps)
    p_dev = float(np.max(np.abs(
        sol.P.samples[:, 0, 0] - np.array([forms["P"](t) for t in nodes]))))
    pi_dev = float(np.max(np.abs(
        sol.Pi.samples[:, 0, 0] - np.array([forms["Pi"](t) for t in nodes]))))
    records.append(bound_record("max |P - closed form|", p_dev, 1e-8))
    records.append(bound_record("max |Pi - closed form|", pi_dev, 1e-6))

    law = synthesize_feedback(spec, sol)
    k0_dev = float(np.max(np.abs(law.K0.samples[:, 0, 0] - 0.5)))
    k1_dev = float(np.max(np.abs(
        law.K1.samples[:, 0, 0] - np.array([forms["K1"](t) for t in nodes]))))
    records.append(bound_record("max |K0 - 1/2|", k0_dev, 1e-8))
    records.append(bound_record("max |K1 - closed form|", k1_dev, 1e-6))

    value = optimal_value(sol, spec.x0)
    records.append(value_record("optimal value at x0", value, 1e-6,
                                expected=forms["value"]))

    shift = canonical_shift(sol)
    shifted = shift_weights(spec, shift)
    shifted_report = check_assumption_S(shifted, spec.grid)
    records.append(flag_record(
        "canonical shift passes the definiteness check", shifted_report.passed))
    forced = max(
        float(np.max(np.abs(shifted.G))),
        float(np.max(np.abs(shifted.G + shifted.Gbar))),
        float(np.max(np.abs(
            shifted.Q.samples
            - shifted.S.samples ** 2 / shifted.R.samples))),
    )
    records.append(bound_record(
        "canonical shift forced values (terminal, Schur)", forced, 1e-8))

    mean = solve_mean_ode(spec, law, substeps=config.substeps)
    mean_dev = float(np.max(np.abs(
        mean.states[:, 0] - np.array([forms["mean"](t) for t in nodes]))))
    records.append(bound_record(
        "closed-loop mean vs analytic solution", mean_dev,
        1e-6 * max(1.0, (spec.grid.dt * 500.0) ** 2)))

    est = simulate_cost(spec, law, mean, config.seed, config.n_paths)
    mc_tol = max(3.0 * est.standard_error, 2e-3)
    records.append(value_record(
        f"Monte Carlo cost of the synthesized control (N={config.n_paths})",
        est.mean, mc_tol, expected=forms["value"]))

    cert_paths = min(1000, config.n_paths)
    ens = simulate_paths(spec, law, mean, config.seed, cert_paths)
    triple = adjoint_representation(spec, sol)
    records.append(bound_record(
        f"stationarity residual over {cert_paths} paths",
        stationarity_residual(spec, ens, triple), 1e-8))

    pert = perturbation_test(
        spec, law, sol, n_directions=config.directions,
        epsilons=config.epsilons, rng_seed=config.seed,
        n_paths=config.n_paths)
    records.append(flag_record(
        "all cost perturbations nonnegative within 3 standard errors",
        pert.all_nonnegative,
        observed=f"min margin {pert.min_margin:.3g}"))
    records.append(flag_record(
        "perturbation growth quadratic (ratio within [3.5, 4.5])",
        pert.ratios_ok,
        observed=", ".join(f"{r.ratio:.2f}" for r in pert.ratios if r.testable)
        or "no ratio above signal threshold"))

    return VerificationReport(
        title="scalar jump problem with closed-form solution (5.1)",
        records=tuple(records),
        artifacts={"riccati": sol, "gains": law, "mean": mean,
                   "grid": spec.grid},
    )


def _verify_shifted_cubic(config):
    T = 1.0
    spec, shift = shifted_cubic(M=config.M, T=T)
    alpha = (T + 1.0) ** 2
    nodes = spec.grid.nodes
    records = []

    original = check_assumption_S(spec.weights, spec.grid)
    records.append(flag_record(
        "original weights fail the definiteness check (R < 0 near t=0)",
        not original.passed and any(v[0] == "R" for v in original.violations),
    ))

    shifted = shift_weights(spec, shift)
    r_dev = float(np.max(np.abs(shifted.R.samples[:, 0, 0] - (nodes + 1.0) ** 3)))
    rsum_dev = float(np.max(np.abs(
        shifted.R.samples[:, 0, 0] + shifted.Rbar.samples[:, 0, 0] - 1.0)))
    ssum_dev = float(np.max(np.abs(
        shifted.S.samples[:, 0, 0] + shifted.Sbar.samples[:, 0, 0]
        - 1.0 / (1.0 + T - nodes))))
    g_dev = abs(float(shifted.G[0, 0]) - (alpha - 0.5 * (T + 1.0) ** 2))
    gsum_dev = abs(float((shifted.G + shifted.Gbar)[0, 0]))
    records.append(bound_record(
        "shifted control weight equals (t+1)^3", r_dev, 1e-9))
    records.append(bound_record(
        "shifted weight identities (sums, terminal)",
        max(rsum_dev, ssum_dev, g_dev, gsum_dev), 1e-9))

    shifted_report = check_assumption_S(shifted, spec.grid)
    records.append(flag_record(
        "shifted weights pass the definiteness check", shifted_report.passed))
    records.append(CheckRecord(
        name="certified margin alpha0 of the shifted weights",
        expected=">= 1", observed=f"{shifted_report.alpha0:.9g}",
        tolerance="1e-9", passed=bool(shifted_report.alpha0 >= 1.0 - 1e-9)))

    spec_shifted = with_weights(spec, shifted)
    sol_shifted = solve_riccati(spec_shifted, substeps=config.substeps)
    sol_pull = pullback_riccati(sol_shifted, shift, spec)
    res_p, res_pi = riccati_residual(spec, sol_pull)
    scale = _resolution_scale(spec.grid)
    records.append(bound_record(
        "pulled-back solution residual on the original problem",
        max(res_p, res_pi), 1e-5 * scale))

    sol_direct = solve_riccati(spec, substeps=config.substeps)
    match = max(
        float(np.max(np.abs(sol_direct.P.samples - sol_pull.P.samples))),
        float(np.max(np.abs(sol_direct.Pi.samples - sol_pull.Pi.samples))),
    )
    records.append(bound_record(
        "direct indefinite solve matches the pullback", match, 1e-6 * scale))

    law = synthesize_feedback(spec, sol_pull)
    return VerificationReport(
        title="cubic control weight restored by a quadratic shift (5.2)",
        records=tuple(records),
        artifacts={"riccati": sol_pull, "gains": law, "grid": spec.grid},
    )


def fbsde_dynamics_residuals(spec, ensemble, triple):
    """Consistency of the adjoint path with the backward dynamics.

    Returns (forward_max, backward_max, backward_rms).  The forward value
    re-evaluates the path scheme from stored data (pure bookkeeping, zero
    up to round-off); the backward values measure the one-step defect of
    Y against its backward equation driven by the stored increments, which
    for the first-order scheme scales like dt^1.5 path-wise.
    """
    if ensemble.brownian is None:
        raise ValueError("ensemble must be simulated with store_increments=True")
    grid = spec.grid
    dt = grid.dt
    mean = ensemble.mean
    m = mean.states
    ub = mean.controls
    w = spec.weights
    Y, Z, R = evaluate_adjoint(triple, ensemble.states, mean)

    driver = np.zeros_like(Y)
    for k, t in enumerate(grid.nodes):
        A = spec.A.at(t)
        Abar = spec.Abar.at(t)
        C = spec.C.at(t)
        Cbar = spec.Cbar.at(t)
        Q = w.Q.at(t)
        Qbar = w.Qbar.at(t)
        S = w.S.at(t)
        Sbar = w.Sbar.at(t)
        y_bar = triple.y_mean.samples[k] @ m[k]
        z_bar = triple.z_mean.samples[k] @ m[k]
        driver[:, k] = (Y[:, k] @ A + (Abar.T @ y_bar)[None, :]
                        + Z[:, k] @ C + (Cbar.T @ z_bar)[None, :]
                        + ensemble.states[:, k] @ Q.T + (Qbar @ m[k])[None, :]
                        + ensemble.controls[:, k] @ S.T
                        + (Sbar @ ub[k])[None, :])
        for i, atom in enumerate(spec.jumps):
            E = atom.E.at(t)
            Ebar = atom.Ebar.at(t)
            r_bar = triple.r_mean[i].samples[k] @ m[k]
            driver[:, k] += atom.rate * (R[i][:, k] @ E
                                         + (Ebar.T @ r_bar)[None, :])

    backward = Y[:, 1:] - Y[:, :-1] + dt * driver[:, :-1] \
        - Z[:, :-1] * ensemble.brownian[:, :, None]
    for i, atom in enumerate(spec.jumps):
        compensated = (ensemble.jump_counts[:, :, i][:, :, None]
                       - atom.rate * dt)
        backward = backward - R[i][:, :-1] * compensated
    backward_max = float(np.max(np.abs(backward)))
    backward_rms = float(np.sqrt(np.mean(backward ** 2)))

    forward = 0.0
    for k in range(grid.steps):
        t = grid.nodes[k]
        X = ensemble.states[:, k]
        u = ensemble.controls[:, k]
        drift = (X @ spec.A.at(t).T + u @ spec.B.at(t).T
                 + (spec.Abar.at(t) @ m[k] + spec.Bbar.at(t) @ ub[k])[None, :])
        loading = (X @ spec.C.at(t).T + u @ spec.D.at(t).T
                   + (spec.Cbar.at(t) @ m[k]
                      + spec.Dbar.at(t) @ ub[k])[None, :])
        step = X + loading * ensemble.brownian[:, k, None]
        for i, atom in enumerate(spec.jumps):
            bracket = (X @ atom.E.at(t).T + u @ atom.F.at(t).T
                       + (atom.Ebar.at(t) @ m[k]
                          + atom.Fbar.at(t) @ ub[k])[None, :])
            drift = drift - atom.rate * bracket
            step = step + ensemble.jump_counts[:, k, i][:, None] * bracket
        step = step + dt * drift
        forward = max(forward, float(np.max(np.abs(
            ensemble.states[:, k + 1] - step))))
    return forward, backward_max, backward_rms


def _verify_fbsde(config):
    T = 1.0
    spec, shift = fbsde_pair(M=config.M, T=T)
    records = []

    shifted = shift_weights(spec, shift)
    jump_moment = sum(a.rate * float(a.Ebar.samples[0, 0, 0]) ** 2
                      for a in spec.jumps)
    expected = {
        "Q": 7.0, "S": 2.0, "R": 1.0,
        "Q+Qbar": 6.0 + 2.0 * jump_moment, "S+Sbar": 1.0, "R+Rbar": 1.0,
    }
    devs = [
        float(np.max(np.abs(shifted.Q.samples - expected["Q"]))),
        float(np.max(np.abs(shifted.S.samples - expected["S"]))),
        float(np.max(np.abs(shifted.R.samples - expected["R"]))),
        float(np.max(np.abs(shifted.Q.samples + shifted.Qbar.samples
                            - expected["Q+Qbar"]))),
        float(np.max(np.abs(shifted.S.samples + shifted.Sbar.samples
                            - expected["S+Sbar"]))),
        float(np.max(np.abs(shifted.R.samples + shifted.Rbar.samples
                            - expected["R+Rbar"]))),
        float(np.max(np.abs(shifted.G))),
        float(np.max(np.abs(shifted.G + shifted.Gbar))),
    ]
    records.append(bound_record(
        "shifted weights equal the constant-shift values", max(devs), 1e-12))

    report = check_assumption_S(shifted, spec.grid)
    records.append(flag_record(
        "shifted weights pass the definiteness check", report.passed))
    records.append(value_record(
        "certified margin alpha0", report.alpha0, 1e-12, expected=1.0))

    spec_shifted = with_weights(spec, shifted)
    sol_shifted = solve_riccati(spec_shifted, substeps=config.substeps)
    sol = pullback_riccati(sol_shifted, shift, spec)
    law = synthesize_feedback(spec, sol)
    mean = solve_mean_ode(spec, law, substeps=config.substeps)

    cert_paths = 100
    ens = simulate_paths(spec, law, mean, config.seed, cert_paths,
                         store_increments=True)
    triple = adjoint_representation(spec, sol)
    Y, Z, _ = evaluate_adjoint(triple, ens.states, mean)
    records.append(bound_record(
        "control equals Y + Z along simulated paths",
        float(np.max(np.abs(ens.controls - (Y + Z)))), 1e-8))
    records.append(bound_record(
        "stationarity residual along simulated paths",
        stationarity_residual(spec, ens, triple), 1e-8))

    triple_shifted = adjoint_representation(spec_shifted, sol_shifted)
    Ys, Zs, Rs = evaluate_adjoint(triple_shifted, ens.states, mean)
    Yp, Zp, Rp = pullback_hamiltonian(
        ens.states, ens.controls, Ys, Zs, Rs, shift, spec, mean)
    _, _, R = evaluate_adjoint(triple, ens.states, mean)
    pull_dev = max(
        float(np.max(np.abs(Yp - Y))),
        float(np.max(np.abs(Zp - Z))),
        max((float(np.max(np.abs(a - b))) for a, b in zip(Rp, R)),
            default=0.0),
    )
    records.append(bound_record(
        "adjoints of the shifted problem pull back to the original",
        pull_dev, 1e-10))

    fwd, bwd_max, bwd_rms = fbsde_dynamics_residuals(spec, ens, triple)
    dt_scale = (spec.grid.dt / 1e-3) ** 1.5
    records.append(bound_record(
        "forward dynamics re-evaluation (bookkeeping)", fwd, 1e-10))
    records.append(bound_record(
        "backward dynamics defect, worst step", bwd_max,
        0.2 * max(1.0, dt_scale)))
    records.append(bound_record(
        "backward dynamics defect, root mean square", bwd_rms,
        0.01 * max(1.0, dt_scale)))

    value = optimal_value(sol, spec.x0)
    est = simulate_cost(spec, law, mean, config.seed, config.n_paths)
    records.append(value_record(
        f"Monte Carlo cost vs optimal value (N={config.n_paths})",
        est.mean, 3.0 * est.standard_error + 5e-3, expected=value))

    return VerificationReport(
        title="forward-backward system certified via synthesis (5.3)",
        records=tuple(records),
        artifacts={"riccati": sol, "gains": law, "mean": mean,
                   "grid": spec.grid},
    )


def control_along_mean(spec, shift, config):
    """Mean-control curve of the synthesized law (shift restores
    definiteness first when given)."""
    if shift is not None:
        shifted = shift_weights(spec, shift)
        sol = pullback_riccati(
            solve_riccati(with_weights(spec, shifted),
                          substeps=config.substeps),
            shift, spec)
    else:
        sol = solve_riccati(spec, substeps=config.substeps)
    law = synthesize_feedback(spec, sol)
    mean = solve_mean_ode(spec, law, substeps=config.substeps)
    return mean.controls[:, 0], sol, law, mean


def sweep_asset_liability(param, values, config):
    """Sweep one scalar parameter of the asset-liability model."""
    curves = []
    for value in values:
        spec, shift = asset_liability(M=config.M, **{param: value})
        curve, _, _, _ = control_along_mean(spec, shift, config)
        curves.append(curve)
    spec, _ = asset_liability(M=config.M)
    return SweepResult(param=param, values=tuple(values),
                       ts=spec.grid.nodes, curves=tuple(curves))


def _monotone_record(sweep, grid, label):
    """Strict increase of the control across the sweep at interior times."""
    sample_ts = np.linspace(0.1, 0.9, 9) * grid.horizon
    idx = [int(round(t / grid.dt)) for t in sample_ts]
    gaps = []
    for k in idx:
        row = [curve[k] for curve in sweep.curves]
        gaps.append(min(np.diff(row)))
    worst = float(min(gaps))
    return CheckRecord(
        name=f"control along the mean increases with {label}",
        expected="> 0 at 9 interior times",
        observed=f"min adjacent gap {worst:.3g}",
        tolerance="0", passed=bool(worst > 0.0))


def _verify_asset_liability(config):
    spec, shift = asset_liability(M=config.M)
    records = []

    lam = shift.H.samples[:, 1, 1]
    records.append(CheckRecord(
        name="shift weight from the backward scalar ODE stays positive",
        expected="> 0", observed=f"min {float(lam.min()):.6g}",
        tolerance="0", passed=bool(lam.min() > 0.0)))

    shifted = shift_weights(spec, shift)
    report = check_assumption_S(shifted, spec.grid)
    records.append(flag_record(
        "shifted weights pass the definiteness check", report.passed,
        observed=f"alpha0 {report.alpha0:.6g}"))

    sol = solve_riccati(spec, substeps=config.substeps)
    res_p, res_pi = riccati_residual(spec, sol)
    scale = max(1.0, (spec.grid.dt / 1e-3) ** 2)
    records.append(bound_record(
        "Riccati pair solves with bounded residual",
        max(res_p, res_pi), 1e-5 * scale))

    law = synthesize_feedback(spec, sol)
    gain_dev = 0.0
    for k, t in enumerate(spec.grid.nodes):
        P = sol.P.samples[k]
        Pi = sol.Pi.samples[k]
        B = spec.B.at(t)
        C = spec.C.at(t)
        D = spec.D.at(t)
        sigma = (D.T @ P @ D)[0, 0]
        k0_direct = (B.T @ P + D.T @ P @ C) / sigma
        k1_direct = (B.T @ Pi + D.T @ P @ C) / sigma
        gain_dev = max(gain_dev,
                       float(np.max(np.abs(law.K0.samples[k] - k0_direct))),
                       float(np.max(np.abs(law.K1.samples[k] - k1_direct))))
    records.append(bound_record(
        "gains match the no-jump closed-form specialization",
        gain_dev, 1e-12))

    r_sweep = sweep_asset_liability("r", (0.05, 0.1, 0.15, 0.2), config)
    a_sweep = sweep_asset_liability("a", (0.1, 0.2, 0.3, 0.4), config)
    records.append(_monotone_record(r_sweep, spec.grid, "the risk-free rate"))
    records.append(_monotone_record(a_sweep, spec.grid,
                                    "the liability appreciation rate"))

    return VerificationReport(
        title="asset-liability model with rate/appreciation sweeps (5.4)",
        records=tuple(records),
        artifacts={"riccati": sol, "gains": law, "grid": spec.grid,
                   "sweep_r": r_sweep, "sweep_a": a_sweep},
    )
