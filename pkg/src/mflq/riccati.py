"""Backward integration of the coupled matrix Riccati pair.

The value function of the control problem is encoded by two symmetric
matrix paths: P weights the centered state X - E[X] and Pi weights the
mean E[X].  Both satisfy backward matrix Riccati differential equations
that share the effective control weights

    Sigma0 = R + D^T P D + sum_i rate_i F_i^T P F_i
    Sigma1 = R + Rbar + (D+Dbar)^T P (D+Dbar)
             + sum_i rate_i (F_i+Fbar_i)^T P (F_i+Fbar_i)

whose invertibility gates the whole synthesis.  The solver steps both
equations jointly with classical fourth-order Runge-Kutta on the reversed
time axis, symmetrizing after every stage to suppress drift of the
symmetry invariant.
"""

from dataclasses import dataclass

import numpy as np

from .problem import GridMismatch, MatrixPath, sym

# a control-weight matrix counts as singular when its smallest absolute
# eigenvalue falls below this fraction of max(1, largest eigenvalue)
SINGULARITY_RTOL = 1e-12


class SigmaSingular(RuntimeError):
    """An effective control weight is numerically singular.

    Signals that the problem is not solvable on this grid along the
    integrated path: either genuine indefiniteness or finite-time blow-up.
    """

    def __init__(self, t, which, cond):
        self.t = t
        self.which = which
        self.cond = cond
        at = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"{which} singular{at} (condition number {cond:.3g})")


class NonFiniteState(RuntimeError):
    """The backward integration overflowed (finite-time blow-up)."""

    def __init__(self, t):
        self.t = t
        super().__init__(f"non-finite Riccati iterate at t={t:.6g}")


@dataclass(frozen=True)
class SigmaPair:
    """Effective control weights at one time for one P matrix."""

    sigma0: np.ndarray
    sigma1: np.ndarray


@dataclass(frozen=True)
class CoefficientBundle:
    """Coefficients of one Riccati drift bracket at a fixed time.

    ``atoms`` holds (rate, E, F) triples; for the mean equation the entries
    are the barred sums (A+Abar, ..., Q+Qbar, R+Rbar, S+Sbar).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    atoms: tuple
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray


def centered_bundle(spec, t):
    """Bundle driving the centered-state equation of ``spec`` at time t."""
    w = spec.weights
    atoms = tuple((a.rate, a.E.at(t), a.F.at(t)) for a in spec.jumps)
    return CoefficientBundle(
        A=spec.A.at(t), B=spec.B.at(t), C=spec.C.at(t), D=spec.D.at(t),
        atoms=atoms, Q=w.Q.at(t), R=w.R.at(t), S=w.S.at(t),
    )


def mean_bundle(spec, t):
    """Bundle driving the mean-state equation (barred sums) at time t."""
    w = spec.weights
    atoms = tuple(
        (a.rate, a.E.at(t) + a.Ebar.at(t), a.F.at(t) + a.Fbar.at(t))
        for a in spec.jumps
    )
    return CoefficientBundle(
        A=spec.A.at(t) + spec.Abar.at(t),
        B=spec.B.at(t) + spec.Bbar.at(t),
        C=spec.C.at(t) + spec.Cbar.at(t),
        D=spec.D.at(t) + spec.Dbar.at(t),
        atoms=atoms,
        Q=w.Q.at(t) + w.Qbar.at(t),
        R=w.R.at(t) + w.Rbar.at(t),
        S=w.S.at(t) + w.Sbar.at(t),
    )


def guarded_solve(sigma, rhs, t=None, which="sigma0", stats=None):
    """Solve sigma @ X = rhs with a singularity guard on sigma.

    sigma is symmetrized first; it counts as singular when its smallest
    absolute eigenvalue is below SINGULARITY_RTOL * max(1, largest), which
    for well-scaled problems is the 1e12 condition-number guard.
    """
    sigma = sym(sigma)
    eigs = np.abs(np.linalg.eigvalsh(sigma))
    smallest = float(eigs.min())
    largest = float(eigs.max())
    if smallest <= SINGULARITY_RTOL * max(1.0, largest):
        cond = np.inf if smallest == 0.0 else largest / smallest
        raise SigmaSingular(t, which, cond)
    if stats is not None:
        cond = largest / smallest
        if cond > stats[which]:
            stats[which] = cond
    return np.linalg.solve(sigma, rhs)


def g_function(bundle, P, Pi=None, t=None, which="sigma0", stats=None):
    """Drift bracket of a Riccati equation for the given bundle.

    Returns  lin A + A^T lin + C^T P C + sum_i rate_i E_i^T P E_i + Q
             - N Sigma^-1 N^T
    with N = S + lin B + C^T P D + sum_i rate_i E_i^T P F_i and
    Sigma = R + D^T P D + sum_i rate_i F_i^T P F_i, where ``lin`` is ``Pi``
    when given and ``P`` otherwise.  The centered equation uses lin = P;
    the mean equation uses the barred-sum bundle with lin = Pi.  The time
    derivative of the corresponding Riccati solution is the negative of
    this bracket.
    """
    lin = P if Pi is None else Pi
    CtP = bundle.C.T @ P
    N = bundle.S + lin @ bundle.B + CtP @ bundle.D
    curv = CtP @ bundle.C
    sig = bundle.R + bundle.D.T @ P @ bundle.D
    for rate, E, F in bundle.atoms:
        EtP = E.T @ P
        N = N + rate * (EtP @ F)
        curv = curv + rate * (EtP @ E)
        sig = sig + rate * (F.T @ P @ F)
    quad = N @ guarded_solve(sig, N.T, t=t, which=which, stats=stats)
    return lin @ bundle.A + bundle.A.T @ lin + curv + bundle.Q - quad


def sigma_pair(spec, P, t):
    """Effective control weights of ``spec`` at time t for matrix P."""
    w = spec.weights
    D = spec.D.at(t)
    Ds = D + spec.Dbar.at(t)
    s0 = w.R.at(t) + D.T @ P @ D
    s1 = w.R.at(t) + w.Rbar.at(t) + Ds.T @ P @ Ds
    for a in spec.jumps:
        F = a.F.at(t)
        Fs = F + a.Fbar.at(t)
        s0 = s0 + a.rate * (F.T @ P @ F)
        s1 = s1 + a.rate * (Fs.T @ P @ Fs)
    return SigmaPair(sigma0=sym(s0), sigma1=sym(s1))


def riccati_rhs(spec, P, Pi, t, stats=None):
    """Time derivatives (Pdot, Pidot) of the coupled pair at (t, P, Pi)."""
    P = sym(np.asarray(P, dtype=float))
    Pi = sym(np.asarray(Pi, dtype=float))
    pdot = -sym(g_function(centered_bundle(spec, t), P,
                           t=t, which="sigma0", stats=stats))
    pidot = -sym(g_function(mean_bundle(spec, t), P, Pi,
                            t=t, which="sigma1", stats=stats))
    return pdot, pidot


@dataclass(frozen=True)
class RiccatiSolution:
    """Node-sampled solution pair with its effective control weights."""

    spec: object
    P: MatrixPath
    Pi: MatrixPath
    sigma0: MatrixPath
    sigma1: MatrixPath
    stats: dict


class _Lattice:
    """Coefficient snapshots on the half-step lattice used by the solver."""

    def __init__(self, spec, n_steps, h):
        ts = np.arange(2 * n_steps + 1) * (0.5 * h)
        # guard the last lattice point against accumulating past the horizon
        ts[-1] = min(ts[-1], spec.grid.horizon)
        w = spec.weights
        A = spec.A.at_many(ts)
        B = spec.B.at_many(ts)
        C = spec.C.at_many(ts)
        D = spec.D.at_many(ts)
        Q = w.Q.at_many(ts)
        R = w.R.at_many(ts)
        S = w.S.at_many(ts)
        self.centered = (A, B, C, D, Q, R, S)
        self.mean = (
            A + spec.Abar.at_many(ts),
            B + spec.Bbar.at_many(ts),
            C + spec.Cbar.at_many(ts),
            D + spec.Dbar.at_many(ts),
            Q + w.Qbar.at_many(ts),
            R + w.Rbar.at_many(ts),
            S + w.Sbar.at_many(ts),
        )
        self.atoms_centered = tuple(
            (a.rate, a.E.at_many(ts), a.F.at_many(ts)) for a in spec.jumps
        )
        self.atoms_mean = tuple(
            (a.rate,
             a.E.at_many(ts) + a.Ebar.at_many(ts),
             a.F.at_many(ts) + a.Fbar.at_many(ts))
            for a in spec.jumps
        )
        self.ts = ts

    def bundle(self, i, which):
        if which == "sigma0":
            A, B, C, D, Q, R, S = self.centered
            atoms = tuple((r, E[i], F[i]) for r, E, F in self.atoms_centered)
        else:
            A, B, C, D, Q, R, S = self.mean
            atoms = tuple((r, E[i], F[i]) for r, E, F in self.atoms_mean)
        return CoefficientBundle(A=A[i], B=B[i], C=C[i], D=D[i],
                                 atoms=atoms, Q=Q[i], R=R[i], S=S[i])


def solve_riccati(spec, substeps=1):
    """Integrate the coupled pair backward from the horizon.

    Classical RK4 on the reversed time axis with ``substeps`` internal
    steps per grid interval; the pair is stepped jointly so the mean
    equation always consumes the concurrent centered solution.  Node
    samples are stored; the terminal samples are the terminal weights
    exactly, not integrated values.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    grid = spec.grid
    M = grid.steps
    h = grid.dt / substeps
    K = M * substeps
    lat = _Lattice(spec, K, h)
    stats = {"sigma0": 0.0, "sigma1": 0.0}

    def slope(i, P, Pi):
        # d/ds of (P, Pi) on the reversed axis s = horizon - t
        gp = g_function(lat.bundle(i, "sigma0"), P,
                        t=lat.ts[i], which="sigma0", stats=stats)
        gpi = g_function(lat.bundle(i, "sigma1"), P, Pi,
                         t=lat.ts[i], which="sigma1", stats=stats)
        return sym(gp), sym(gpi)

    P = sym(spec.weights.G.copy())
    Pi = sym(spec.weights.G + spec.weights.Gbar)
    n = spec.n
    p_samples = np.empty((M + 1, n, n))
    pi_samples = np.empty((M + 1, n, n))
    p_samples[M] = spec.weights.G
    pi_samples[M] = spec.weights.G + spec.weights.Gbar

    half = 0.5 * h
    sixth = h / 6.0
    # overflow here is the blow-up failure mode, reported by the isfinite
    # check below rather than by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(K):
            i0 = 2 * (K - j)
            k1p, k1q = slope(i0, P, Pi)
            k2p, k2q = slope(i0 - 1, sym(P + half * k1p), sym(Pi + half * k1q))
            k3p, k3q = slope(i0 - 1, sym(P + half * k2p), sym(Pi + half * k2q))
            k4p, k4q = slope(i0 - 2, sym(P + h * k3p), sym(Pi + h * k3q))
            P = sym(P + sixth * (k1p + 2.0 * k2p + 2.0 * k3p + k4p))
            Pi = sym(Pi + sixth * (k1q + 2.0 * k2q + 2.0 * k3q + k4q))
            if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Pi))):
                raise NonFiniteState(lat.ts[i0 - 2])
            steps_done = j + 1
            if steps_done % substeps == 0:
                node = M - steps_done // substeps
                p_samples[node] = P
                pi_samples[node] = Pi

    s0_samples = np.empty((M + 1, spec.m, spec.m))
    s1_samples = np.empty((M + 1, spec.m, spec.m))
    for k, t in enumerate(grid.nodes):
        pair = sigma_pair(spec, p_samples[k], t)
        s0_samples[k] = pair.sigma0
        s1_samples[k] = pair.sigma1

    return RiccatiSolution(
        spec=spec,
        P=MatrixPath(grid, p_samples),
        Pi=MatrixPath(grid, pi_samples),
        sigma0=MatrixPath(grid, s0_samples),
        sigma1=MatrixPath(grid, s1_samples),
        stats={"steps": K,
               "max_cond_sigma0": stats["sigma0"],
               "max_cond_sigma1": stats["sigma1"]},
    )


def riccati_residual(spec, sol):
    """A-posteriori defect of a solution pair on its own grid.

    Central finite differences of the node samples at interior nodes are
    compared against the analytic right-hand side; returns the maximum
    absolute residuals (resP, resPi).  The probe is second-order, so on
    smooth problems the result shrinks like the squared node spacing.
    """
    if sol.P.grid != spec.grid:
        raise GridMismatch("solution and problem grids differ")
    grid = spec.grid
    dt = grid.dt
    nodes = grid.nodes
    p = sol.P.samples
    q = sol.Pi.samples
    res_p = 0.0
    res_pi = 0.0
    for k in range(1, grid.steps):
        fd_p = (p[k + 1] - p[k - 1]) / (2.0 * dt)
        fd_q = (q[k + 1] - q[k - 1]) / (2.0 * dt)
        pdot, pidot = riccati_rhs(spec, p[k], q[k], nodes[k])
        res_p = max(res_p, float(np.max(np.abs(fd_p - pdot))))
        res_pi = max(res_pi, float(np.max(np.abs(fd_q - pidot))))
    return res_p, res_pi
