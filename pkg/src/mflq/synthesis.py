"""Feedback synthesis and adjoint reconstruction from a Riccati solution.

The optimal control is linear state feedback acting separately on the
centered state and the mean:

    u = -K0 (X - E[X]) - K1 E[X]

with K0 = Sigma0^-1 (S^T + B^T P + D^T P C + sum_i rate_i F_i^T P E_i) and
K1 the barred-sum analogue built from Pi.  The backward adjoint components
(Y, Z, per-atom r) admit closed-form representations as linear maps of the
same two state components, which makes the pointwise stationarity relation
an exact algebraic identity under the synthesized feedback; the residual
diagnostic here measures how far any simulated ensemble is from that
identity.
"""

from dataclasses import dataclass

import numpy as np

from .problem import GridMismatch, MatrixPath
from .riccati import guarded_solve


@dataclass(frozen=True)
class FeedbackLaw:
    """Gain pair acting on (X - E[X], E[X]), plus an optional open-loop
    offset added per node (used for perturbation studies)."""

    K0: MatrixPath
    K1: MatrixPath
    offset: np.ndarray = None

    @property
    def grid(self):
        return self.K0.grid

    def with_offset(self, offset):
        offset = np.asarray(offset, dtype=float)
        if self.offset is not None:
            offset = offset + self.offset
        return FeedbackLaw(K0=self.K0, K1=self.K1, offset=offset)


def zero_control(spec):
    """The zero feedback law for ``spec`` (u identically 0)."""
    zero = MatrixPath.constant(spec.grid, np.zeros((spec.m, spec.n)))
    return FeedbackLaw(K0=zero, K1=zero)


def open_loop_control(spec, values):
    """Open-loop law for ``spec`` holding the given per-node values."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape != (spec.grid.steps + 1, spec.m):
        raise GridMismatch(
            f"open-loop values must be ({spec.grid.steps + 1}, {spec.m}), "
            f"got {values.shape}"
        )
    return zero_control(spec).with_offset(values)


def synthesize_feedback(spec, sol):
    """Optimal gain pair from a Riccati solution on the same problem."""
    grid = spec.grid
    if sol.P.grid != grid:
        raise GridMismatch("solution and problem grids differ")
    w = spec.weights
    k0 = np.empty((grid.steps + 1, spec.m, spec.n))
    k1 = np.empty_like(k0)
    for k, t in enumerate(grid.nodes):
        P = sol.P.samples[k]
        Pi = sol.Pi.samples[k]
        B = spec.B.at(t)
        C = spec.C.at(t)
        D = spec.D.at(t)
        n0t = w.S.at(t).T + B.T @ P + D.T @ P @ C
        Bs = B + spec.Bbar.at(t)
        Cs = C + spec.Cbar.at(t)
        Ds = D + spec.Dbar.at(t)
        n1t = (w.S.at(t) + w.Sbar.at(t)).T + Bs.T @ Pi + Ds.T @ P @ Cs
        for atom in spec.jumps:
            E = atom.E.at(t)
            F = atom.F.at(t)
            n0t = n0t + atom.rate * (F.T @ P @ E)
            Es = E + atom.Ebar.at(t)
            Fs = F + atom.Fbar.at(t)
            n1t = n1t + atom.rate * (Fs.T @ P @ Es)
        k0[k] = guarded_solve(sol.sigma0.samples[k], n0t, t=t, which="sigma0")
        k1[k] = guarded_solve(sol.sigma1.samples[k], n1t, t=t, which="sigma1")
    return FeedbackLaw(K0=MatrixPath(grid, k0), K1=MatrixPath(grid, k1))


def optimal_value(sol, x):
    """Minimal cost from initial state ``x``: <Pi(0) x, x> / 2."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return 0.5 * float(x @ sol.Pi.samples[0] @ x)


@dataclass(frozen=True)
class AdjointTriple:
    """Linear maps sending (X - E[X], E[X]) to the adjoint components.

    ``y_centered``/``y_mean`` reproduce the Riccati pair itself; the z and
    per-atom r gains additionally absorb one feedback factor through the
    effective control weights.
    """

    y_centered: MatrixPath
    y_mean: MatrixPath
    z_centered: MatrixPath
    z_mean: MatrixPath
    r_centered: tuple
    r_mean: tuple


def adjoint_representation(spec, sol):
    """Closed-form adjoint gains along a Riccati solution."""
    law = synthesize_feedback(spec, sol)
    grid = spec.grid
    nn = (grid.steps + 1, spec.n, spec.n)
    z_c = np.empty(nn)
    z_m = np.empty(nn)
    r_c = [np.empty(nn) for _ in spec.jumps]
    r_m = [np.empty(nn) for _ in spec.jumps]
    for k, t in enumerate(grid.nodes):
        P = sol.P.samples[k]
        K0 = law.K0.samples[k]
        K1 = law.K1.samples[k]
        C = spec.C.at(t)
        D = spec.D.at(t)
        z_c[k] = P @ (C - D @ K0)
        Cs = C + spec.Cbar.at(t)
        Ds = D + spec.Dbar.at(t)
        z_m[k] = P @ (Cs - Ds @ K1)
        for i, atom in enumerate(spec.jumps):
            E = atom.E.at(t)
            F = atom.F.at(t)
            r_c[i][k] = P @ (E - F @ K0)
            Es = E + atom.Ebar.at(t)
            Fs = F + atom.Fbar.at(t)
            r_m[i][k] = P @ (Es - Fs @ K1)
    return AdjointTriple(
        y_centered=sol.P,
        y_mean=sol.Pi,
        z_centered=MatrixPath(grid, z_c),
        z_mean=MatrixPath(grid, z_m),
        r_centered=tuple(MatrixPath(grid, arr) for arr in r_c),
        r_mean=tuple(MatrixPath(grid, arr) for arr in r_m),
    )


def evaluate_adjoint(triple, states, mean):
    """Adjoint paths (Y, Z, [r_i]) on an ensemble of state paths.

    ``states`` is (paths, nodes, n); the mean trajectory supplies E[X].
    """
    m = mean.states
    xc = states - m[None, :, :]

    def combine(gc, gm):
        cen = np.einsum("kij,pkj->pki", gc.samples, xc)
        det = np.einsum("kij,kj->ki", gm.samples, m)
        return cen + det[None, :, :]

    y = combine(triple.y_centered, triple.y_mean)
    z = combine(triple.z_centered, triple.z_mean)
    r = [combine(rc, rm) for rc, rm in zip(triple.r_centered, triple.r_mean)]
    return y, z, r


def stationarity_residual(spec, ensemble, triple):
    """Largest pointwise defect of the optimality (stationarity) relation.

    Evaluates, at every node on every path,

        R u + Rbar E[u] + S^T X + Sbar^T E[X] + B^T Y + Bbar^T E[Y]
        + D^T Z + Dbar^T E[Z] + sum_i rate_i (F_i^T r_i + Fbar_i^T E[r_i])

    with Y, Z, r taken from the adjoint representation and the state being
    the pre-increment node state the stored control was computed from;
    expectations use the ensemble's deterministic mean trajectory.  Under
    the synthesized feedback this is zero in exact arithmetic.
    """
    grid = spec.grid
    if ensemble.states.shape[1] != grid.steps + 1:
        raise GridMismatch("ensemble and problem grids differ")
    w = spec.weights
    mean = ensemble.mean
    worst = 0.0
    for k, t in enumerate(grid.nodes):
        X = ensemble.states[:, k]
        u = ensemble.controls[:, k]
        mk = mean.states[k]
        ubk = mean.controls[k]
        xc = X - mk[None, :]

        y_c = triple.y_centered.samples[k]
        y_m = triple.y_mean.samples[k]
        z_c = triple.z_centered.samples[k]
        z_m = triple.z_mean.samples[k]
        y_bar = y_m @ mk
        z_bar = z_m @ mk
        Y = xc @ y_c.T + y_bar[None, :]
        Z = xc @ z_c.T + z_bar[None, :]

        R = w.R.at(t)
        Rbar = w.Rbar.at(t)
        S = w.S.at(t)
        Sbar = w.Sbar.at(t)
        B = spec.B.at(t)
        Bbar = spec.Bbar.at(t)
        D = spec.D.at(t)
        Dbar = spec.Dbar.at(t)

        expr = (u @ R.T + (Rbar @ ubk)[None, :]
                + X @ S + (Sbar.T @ mk)[None, :]
                + Y @ B + (Bbar.T @ y_bar)[None, :]
                + Z @ D + (Dbar.T @ z_bar)[None, :])
        for i, atom in enumerate(spec.jumps):
            r_c = triple.r_centered[i].samples[k]
            r_m = triple.r_mean[i].samples[k]
            r_bar = r_m @ mk
            r_vals = xc @ r_c.T + r_bar[None, :]
            F = atom.F.at(t)
            Fbar = atom.Fbar.at(t)
            expr = expr + atom.rate * (r_vals @ F + (Fbar.T @ r_bar)[None, :])
        worst = max(worst, float(np.max(np.abs(expr))))
    return worst
