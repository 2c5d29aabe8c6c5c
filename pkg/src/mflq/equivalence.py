"""Equivalent-cost shifts and the no-cross reduction.

Two symmetric differentiable matrix paths (H, K) define a shifted cost
that differs from the original only by the constant -<K(0) x0, x0>/2, so
both costs rank all controls identically.  Shifting rewrites the weight
set; a well-chosen shift turns an indefinite problem into one that passes
the definiteness check, and the Riccati solutions of the two problems
differ exactly by (H, K).  The canonical shift H = P, K = Pi annihilates
the shifted state and terminal weights and exposes the effective control
weights directly.

The no-cross reduction removes the state-control cross weights S, Sbar by
an invertible block-triangular change of the control variable; it leaves
the Riccati equations unchanged, which this module's helpers let tests
verify numerically.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .problem import (
    AsymmetricWeight,
    CostWeights,
    GridMismatch,
    JumpAtom,
    JumpMeasure,
    MatrixPath,
    ProblemSpec,
    is_symmetric,
)
from .riccati import RiccatiSolution, riccati_rhs, sigma_pair


class RSingular(ValueError):
    """A control weight that must be inverted node-wise is singular."""

    def __init__(self, t, which="R"):
        self.t = t
        self.which = which
        super().__init__(f"{which} singular at t={t:.6g}")


def _mm(x, y):
    return np.einsum("kij,kjl->kil", x, y)


def _tr(x):
    return np.transpose(x, (0, 2, 1))


def _sym_nodes(x):
    return 0.5 * (x + _tr(x))


def _fd_derivative(samples, dt):
    """Second-order finite differences along the node axis."""
    out = np.empty_like(samples)
    out[1:-1] = (samples[2:] - samples[:-2]) / (2.0 * dt)
    out[0] = (-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * dt)
    out[-1] = (3.0 * samples[-1] - 4.0 * samples[-2] + samples[-3]) / (2.0 * dt)
    return out


@dataclass(frozen=True)
class FunctionalShift:
    """Symmetric matrix paths (H, K) with their time derivatives."""

    H: MatrixPath
    K: MatrixPath
    Hdot: MatrixPath
    Kdot: MatrixPath

    def __post_init__(self):
        grid = self.H.grid
        for name, path in (("K", self.K), ("Hdot", self.Hdot),
                           ("Kdot", self.Kdot)):
            if path.grid != grid:
                raise GridMismatch(f"shift component {name} on a different grid")
        for name, path in (("H", self.H), ("K", self.K)):
            for k in range(grid.steps + 1):
                if not is_symmetric(path.samples[k]):
                    raise AsymmetricWeight(f"shift {name} asymmetric at node {k}")

    @property
    def grid(self):
        return self.H.grid

    @classmethod
    def from_node_samples(cls, grid, H, K, Hdot=None, Kdot=None,
                          finite_difference=False):
        """Build a shift from node samples.

        Derivatives must be supplied; pass ``finite_difference=True`` to
        request the second-order difference approximation explicitly
        (silent differencing is deliberately not offered, since the
        shifted weights are sensitive to the derivative paths).
        """
        hpath = H if isinstance(H, MatrixPath) else MatrixPath(grid, H)
        kpath = K if isinstance(K, MatrixPath) else MatrixPath(grid, K)
        if Hdot is None or Kdot is None:
            if not finite_difference:
                raise ValueError(
                    "shift derivatives missing; supply Hdot/Kdot or pass "
                    "finite_difference=True to accept a difference estimate"
                )
            if Hdot is None:
                Hdot = _fd_derivative(hpath.samples, grid.dt)
            if Kdot is None:
                Kdot = _fd_derivative(kpath.samples, grid.dt)
        hdpath = Hdot if isinstance(Hdot, MatrixPath) else MatrixPath(grid, Hdot)
        kdpath = Kdot if isinstance(Kdot, MatrixPath) else MatrixPath(grid, Kdot)
        return cls(H=hpath, K=kpath, Hdot=hdpath, Kdot=kdpath)

    @classmethod
    def zero(cls, grid, n):
        z = MatrixPath.constant(grid, np.zeros((n, n)))
        return cls(H=z, K=z, Hdot=z, Kdot=z)

    def derivative_gap(self):
        """Worst interior deviation between the supplied derivatives and
        central differences of H and K, relative to 1 + the derivative
        scale.  Second order in the node spacing for smooth analytic
        derivatives; a large value flags an inconsistent shift."""
        dt = self.grid.dt
        gap = 0.0
        for path, dot in ((self.H, self.Hdot), (self.K, self.Kdot)):
            fd = (path.samples[2:] - path.samples[:-2]) / (2.0 * dt)
            scale = 1.0 + float(np.max(np.abs(dot.samples)))
            gap = max(gap, float(np.max(np.abs(fd - dot.samples[1:-1])))
                      / scale)
        return gap


def shift_weights(spec, shift):
    """Weight set of the cost shifted by (H, K).

    The shifted running weights absorb the quadratic expansion of
    <H (X - E[X]), X - E[X]> + <K E[X], E[X]> along the dynamics; the
    terminal weights lose H(T) and K(T).  Barred weights are recovered by
    subtracting the plain entries from the shifted barred sums, matching
    how the dynamics only ever use those two combinations.
    """
    grid = spec.grid
    if shift.grid != grid:
        raise GridMismatch("shift and problem grids differ")
    w = spec.weights
    H = shift.H.samples
    Hd = shift.Hdot.samples
    Km = shift.K.samples
    Kd = shift.Kdot.samples

    A = spec.A.samples
    B = spec.B.samples
    C = spec.C.samples
    D = spec.D.samples
    As = A + spec.Abar.samples
    Bs = B + spec.Bbar.samples
    Cs = C + spec.Cbar.samples
    Ds = D + spec.Dbar.samples

    q = w.Q.samples + Hd + _mm(H, A) + _mm(_tr(A), H) + _mm(_mm(_tr(C), H), C)
    s = w.S.samples + _mm(H, B) + _mm(_mm(_tr(C), H), D)
    r = w.R.samples + _mm(_mm(_tr(D), H), D)
    qsum = (w.Q.samples + w.Qbar.samples + Kd + _mm(Km, As) + _mm(_tr(As), Km)
            + _mm(_mm(_tr(Cs), H), Cs))
    ssum = w.S.samples + w.Sbar.samples + _mm(Km, Bs) + _mm(_mm(_tr(Cs), H), Ds)
    rsum = w.R.samples + w.Rbar.samples + _mm(_mm(_tr(Ds), H), Ds)

    for atom in spec.jumps:
        E = atom.E.samples
        F = atom.F.samples
        Es = E + atom.Ebar.samples
        Fs = F + atom.Fbar.samples
        EtH = _mm(_tr(E), H)
        EstH = _mm(_tr(Es), H)
        q = q + atom.rate * _mm(EtH, E)
        s = s + atom.rate * _mm(EtH, F)
        r = r + atom.rate * _mm(_mm(_tr(F), H), F)
        qsum = qsum + atom.rate * _mm(EstH, Es)
        ssum = ssum + atom.rate * _mm(EstH, Fs)
        rsum = rsum + atom.rate * _mm(_mm(_tr(Fs), H), Fs)

    q = _sym_nodes(q)
    r = _sym_nodes(r)
    qsum = _sym_nodes(qsum)
    rsum = _sym_nodes(rsum)

    g = w.G - H[-1]
    gsum = w.G + w.Gbar - Km[-1]
    return CostWeights(
        Q=MatrixPath(grid, q),
        Qbar=MatrixPath(grid, qsum - q),
        S=MatrixPath(grid, s),
        Sbar=MatrixPath(grid, ssum - s),
        R=MatrixPath(grid, r),
        Rbar=MatrixPath(grid, rsum - r),
        G=g,
        Gbar=gsum - g,
    )


def canonical_shift(sol):
    """The shift H = P, K = Pi taken from a Riccati solution.

    Derivatives are evaluated analytically from the Riccati right-hand
    side along the solution, not finite-differenced, so the shifted state
    and terminal weights vanish up to round-off whenever the solution pair
    satisfies its equations.
    """
    spec = sol.spec
    grid = spec.grid
    p = sol.P.samples
    q = sol.Pi.samples
    hdot = np.empty_like(p)
    kdot = np.empty_like(q)
    for k, t in enumerate(grid.nodes):
        hdot[k], kdot[k] = riccati_rhs(spec, p[k], q[k], t)
    return FunctionalShift(
        H=sol.P, K=sol.Pi,
        Hdot=MatrixPath(grid, hdot), Kdot=MatrixPath(grid, kdot),
    )


def pullback_riccati(shifted_sol, shift, spec):
    """Map a shifted-problem Riccati solution back to the original problem.

    The original pair is P = P_shifted + H, Pi = Pi_shifted + K; the
    effective control weights are recomputed against ``spec``.
    """
    grid = spec.grid
    if shifted_sol.P.grid != grid or shift.grid != grid:
        raise GridMismatch("solution, shift and problem grids must agree")
    p = shifted_sol.P.samples + shift.H.samples
    q = shifted_sol.Pi.samples + shift.K.samples
    s0 = np.empty((grid.steps + 1, spec.m, spec.m))
    s1 = np.empty_like(s0)
    for k, t in enumerate(grid.nodes):
        pair = sigma_pair(spec, p[k], t)
        s0[k] = pair.sigma0
        s1[k] = pair.sigma1
    return RiccatiSolution(
        spec=spec,
        P=MatrixPath(grid, p),
        Pi=MatrixPath(grid, q),
        sigma0=MatrixPath(grid, s0),
        sigma1=MatrixPath(grid, s1),
        stats=dict(shifted_sol.stats, pulled_back=True),
    )


def pullback_hamiltonian(X, u, Y, Z, r_list, shift, spec, mean):
    """Map shifted-problem adjoint paths to original-problem adjoints.

    The state and control are unchanged; Y gains H on the centered state
    and K on the mean, Z gains H times the diffusion loading, and each
    per-atom r gains H times that atom's jump loading.  Arrays are indexed
    (path, node, component); ``mean`` supplies E[X] and E[u].
    """
    grid = spec.grid
    if shift.grid != grid:
        raise GridMismatch("shift and problem grids differ")
    H = shift.H.samples
    Km = shift.K.samples
    m = mean.states
    ub = mean.controls
    Xc = X - m[None, :, :]

    def apply(gain, vec):
        return np.einsum("kij,pkj->pki", gain, vec)

    def apply_det(gain, vec):
        return np.einsum("kij,kj->ki", gain, vec)

    y_new = Y + apply(H, Xc) + apply_det(Km, m)[None, :, :]

    diff = (apply(spec.C.samples, X) + apply(spec.D.samples, u)
            + (apply_det(spec.Cbar.samples, m)
               + apply_det(spec.Dbar.samples, ub))[None, :, :])
    z_new = Z + apply(H, diff)

    r_new = []
    for atom, r_arr in zip(spec.jumps, r_list):
        load = (apply(atom.E.samples, X) + apply(atom.F.samples, u)
                + (apply_det(atom.Ebar.samples, m)
                   + apply_det(atom.Fbar.samples, ub))[None, :, :])
        r_new.append(r_arr + apply(H, load))
    return y_new, z_new, r_new


def _node_inverse_products(R, S, grid, label):
    """R_k^-1 S_k^T for every node, guarding node-wise invertibility."""
    eigs = np.abs(np.linalg.eigvalsh(_sym_nodes(R)))
    bad = eigs.min(axis=1) <= 1e-12 * np.maximum(1.0, eigs.max(axis=1))
    if np.any(bad):
        raise RSingular(t=grid.nodes[int(np.argmax(bad))], which=label)
    return np.linalg.solve(_sym_nodes(R), _tr(S))


def nc_reduce(spec):
    """Equivalent problem with the state-control cross weights removed.

    The reduced drift, diffusion, jump and state-weight coefficients
    absorb R^-1 S^T (and the barred-sum analogue); the control-side
    coefficients B, D, F, R and the terminal weights are unchanged.
    Barred coefficients are stored as (reduced sum) - (reduced plain),
    matching how the dynamics only use those combinations.
    """
    grid = spec.grid
    w = spec.weights
    R = w.R.samples
    S = w.S.samples
    Rsum = R + w.Rbar.samples
    Ssum = S + w.Sbar.samples
    rinv_st = _node_inverse_products(R, S, grid, "R")
    rsum_inv_st = _node_inverse_products(Rsum, Ssum, grid, "R+Rbar")

    A = spec.A.samples
    C = spec.C.samples
    As = A + spec.Abar.samples
    Cs = C + spec.Cbar.samples
    B = spec.B.samples
    D = spec.D.samples
    Bs = B + spec.Bbar.samples
    Ds = D + spec.Dbar.samples

    a1 = A - _mm(B, rinv_st)
    a1s = As - _mm(Bs, rsum_inv_st)
    c1 = C - _mm(D, rinv_st)
    c1s = Cs - _mm(Ds, rsum_inv_st)
    q1 = _sym_nodes(w.Q.samples - _mm(S, rinv_st))
    q1s = _sym_nodes(w.Q.samples + w.Qbar.samples - _mm(Ssum, rsum_inv_st))

    atoms = []
    for atom in spec.jumps:
        E = atom.E.samples
        F = atom.F.samples
        Es = E + atom.Ebar.samples
        Fs = F + atom.Fbar.samples
        e1 = E - _mm(F, rinv_st)
        e1s = Es - _mm(Fs, rsum_inv_st)
        atoms.append(JumpAtom(
            rate=atom.rate, mark=atom.mark,
            E=MatrixPath(grid, e1),
            Ebar=MatrixPath(grid, e1s - e1),
            F=atom.F, Fbar=atom.Fbar,
        ))

    zero_s = MatrixPath.constant(grid, np.zeros((spec.n, spec.m)))
    weights = CostWeights(
        Q=MatrixPath(grid, q1),
        Qbar=MatrixPath(grid, q1s - q1),
        S=zero_s, Sbar=zero_s,
        R=w.R, Rbar=w.Rbar, G=w.G, Gbar=w.Gbar,
    )
    return ProblemSpec(
        n=spec.n, m=spec.m, grid=grid,
        A=MatrixPath(grid, a1), Abar=MatrixPath(grid, a1s - a1),
        B=spec.B, Bbar=spec.Bbar,
        C=MatrixPath(grid, c1), Cbar=MatrixPath(grid, c1s - c1),
        D=spec.D, Dbar=spec.Dbar,
        jumps=JumpMeasure(atoms=tuple(atoms)), weights=weights, x0=spec.x0,
    )


TransformedPair = namedtuple("TransformedPair", "X u mean_x mean_u")


def transform_pair(X, u, mean_x, mean_u, spec, direction):
    """Block-triangular control transformation between the original and
    no-cross coordinates.

    ``direction`` is "to_nc" or "from_nc"; the two are exact mutual
    inverses.  The state and its mean are unchanged; the centered control
    shifts by R^-1 S^T applied to the centered state, and the mean control
    by the barred-sum analogue applied to the mean state.
    """
    if direction not in ("to_nc", "from_nc"):
        raise ValueError(f"unknown direction {direction!r}")
    w = spec.weights
    grid = spec.grid
    R = w.R.samples
    S = w.S.samples
    rinv_st = _node_inverse_products(R, S, grid, "R")
    rsum_inv_st = _node_inverse_products(
        R + w.Rbar.samples, S + w.Sbar.samples, grid, "R+Rbar")

    sign = 1.0 if direction == "to_nc" else -1.0
    Xc = X - mean_x[None, :, :]
    uc = u - mean_u[None, :, :]
    uc_new = uc + sign * np.einsum("kij,pkj->pki", rinv_st, Xc)
    ub_new = mean_u + sign * np.einsum("kij,kj->ki", rsum_inv_st, mean_x)
    return TransformedPair(X=X, u=uc_new + ub_new[None, :, :],
                           mean_x=mean_x, mean_u=ub_new)
