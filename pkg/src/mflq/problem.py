"""Problem data for linear-quadratic control of mean-field jump diffusions.

A problem instance bundles a uniform time grid, time-sampled dynamics
coefficients, a finite-activity jump measure, quadratic cost weights and an
initial state.  Every coefficient function is stored as one matrix sample
per grid node with piecewise-linear interpolation in between, which keeps
instances serializable and makes all jump integrals exact finite sums.

State dynamics use the coefficient names A, Abar, B, Bbar (drift), C, Cbar,
D, Dbar (diffusion) and per-atom E, Ebar, F, Fbar (jumps); barred matrices
multiply expectations of the state/control.  Costs carry running weights
Q, Qbar, S, Sbar, R, Rbar and terminal weights G, Gbar.
"""

from dataclasses import dataclass

import numpy as np

SYMMETRY_RTOL = 1e-12
DEFAULT_EIG_TOL = 1e-10

# relative distance below which a query time is snapped to the nearest node
_NODE_SNAP = 1e-9


class ShapeMismatch(ValueError):
    """A matrix or sample array does not have the required shape."""


class AsymmetricWeight(ValueError):
    """A weight matrix that must be symmetric is not."""


class GridMismatch(ValueError):
    """Two objects that must share a time grid do not."""


def sym(mat):
    """Symmetric part (M + M^T)/2."""
    return 0.5 * (mat + mat.T)


def is_symmetric(mat, rtol=SYMMETRY_RTOL):
    scale = max(1.0, float(np.max(np.abs(mat))))
    return float(np.max(np.abs(mat - mat.T))) <= rtol * scale


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * horizon / steps for k = 0..steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 2:
            raise ValueError(f"grid needs at least 2 steps, got {self.steps}")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def nodes(self):
        return np.linspace(0.0, self.horizon, self.steps + 1)


class MatrixPath:
    """Matrix-valued function of time sampled on a :class:`TimeGrid`.

    Between nodes the value is the linear interpolant of the neighbouring
    samples; at a node the stored sample is returned exactly (queries within
    a tiny relative distance of a node are snapped onto it).
    """

    __slots__ = ("grid", "samples", "shape")

    def __init__(self, grid, samples):
        samples = np.array(samples, dtype=float)
        if samples.ndim == 1:
            # per-node scalar samples
            samples = samples[:, None, None]
        if samples.ndim != 3:
            raise ShapeMismatch(
                f"samples must be (nodes, rows, cols), got shape {samples.shape}"
            )
        if samples.shape[0] != grid.steps + 1:
            raise GridMismatch(
                f"expected {grid.steps + 1} samples, got {samples.shape[0]}"
            )
        samples.flags.writeable = False
        self.grid = grid
        self.samples = samples
        self.shape = samples.shape[1:]

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        samples = np.broadcast_to(value, (grid.steps + 1,) + value.shape)
        return cls(grid, samples.copy())

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(t)`` (returning a matrix or scalar) at every node."""
        samples = np.stack(
            [np.atleast_2d(np.asarray(fn(t), dtype=float)) for t in grid.nodes]
        )
        return cls(grid, samples)

    def _position(self, t):
        pos = t / self.grid.dt
        near = round(pos)
        if abs(pos - near) <= _NODE_SNAP * max(1.0, abs(pos)):
            pos = float(near)
        if pos < 0.0 or pos > self.grid.steps:
            raise ValueError(
                f"time {t} outside [0, {self.grid.horizon}]"
            )
        return pos

    def at(self, t):
        """Value at time ``t`` in [0, horizon]."""
        pos = self._position(t)
        k = int(pos)
        if pos == k:
            return self.samples[k]
        w = pos - k
        return (1.0 - w) * self.samples[k] + w * self.samples[k + 1]

    def at_many(self, ts):
        """Vectorized :meth:`at` for an array of times, stacked on axis 0."""
        ts = np.asarray(ts, dtype=float)
        pos = ts / self.grid.dt
        near = np.round(pos)
        snap = np.abs(pos - near) <= _NODE_SNAP * np.maximum(1.0, np.abs(pos))
        pos = np.where(snap, near, pos)
        if np.any(pos < 0.0) or np.any(pos > self.grid.steps):
            raise ValueError("some times fall outside the grid")
        k = np.minimum(pos.astype(int), self.grid.steps - 1)
        w = (pos - k)[:, None, None]
        return (1.0 - w) * self.samples[k] + w * self.samples[k + 1]

    def __eq__(self, other):
        return (
            isinstance(other, MatrixPath)
            and self.grid == other.grid
            and np.array_equal(self.samples, other.samples)
        )

    def __repr__(self):
        r, c = self.shape
        return f"MatrixPath({r}x{c}, {self.samples.shape[0]} nodes)"


def as_path(grid, value, rows, cols, name=""):
    """Coerce ``value`` (path, matrix, scalar or samples) into a MatrixPath."""
    if isinstance(value, MatrixPath):
        path = value
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 3:
            path = MatrixPath(grid, arr)
        elif (arr.ndim == 1 and (rows, cols) == (1, 1)
              and arr.shape[0] == grid.steps + 1):
            # per-node samples of a scalar entry
            path = MatrixPath(grid, arr)
        else:
            path = MatrixPath.constant(grid, arr)
    if path.shape != (rows, cols):
        raise ShapeMismatch(
            f"{name or 'path'}: expected shape ({rows}, {cols}), got {path.shape}"
        )
    if path.grid != grid:
        raise GridMismatch(f"{name or 'path'} is sampled on a different grid")
    return path


@dataclass(frozen=True)
class JumpAtom:
    """One atom of the jump measure: arrival rate, mark label and loadings."""

    rate: float
    mark: float
    E: MatrixPath
    Ebar: MatrixPath
    F: MatrixPath
    Fbar: MatrixPath


@dataclass(frozen=True)
class JumpMeasure:
    """Finite atomic jump measure; an empty atom tuple means no jumps."""

    atoms: tuple

    @property
    def total_rate(self):
        return sum(a.rate for a in self.atoms)

    def __len__(self):
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)


@dataclass(frozen=True)
class CostWeights:
    Q: MatrixPath
    Qbar: MatrixPath
    S: MatrixPath
    Sbar: MatrixPath
    R: MatrixPath
    Rbar: MatrixPath
    G: np.ndarray
    Gbar: np.ndarray


@dataclass(frozen=True)
class ProblemSpec:
    """A complete control problem instance on a shared time grid."""

    n: int
    m: int
    grid: TimeGrid
    A: MatrixPath
    Abar: MatrixPath
    B: MatrixPath
    Bbar: MatrixPath
    C: MatrixPath
    Cbar: MatrixPath
    D: MatrixPath
    Dbar: MatrixPath
    jumps: JumpMeasure
    weights: CostWeights
    x0: np.ndarray


def make_problem(n, m, grid, dynamics, jumps, weights, x0):
    """Assemble and validate a :class:`ProblemSpec` from loose inputs.

    ``dynamics`` maps the eight coefficient names to paths/matrices/scalars,
    ``jumps`` is a list of dicts with keys rate, mark, E, Ebar, F, Fbar, and
    ``weights`` maps the weight names (G, Gbar are constant matrices).
    """
    dyn = {}
    for name in ("A", "Abar", "C", "Cbar"):
        dyn[name] = as_path(grid, dynamics[name], n, n, f"dynamics.{name}")
    for name in ("B", "Bbar", "D", "Dbar"):
        dyn[name] = as_path(grid, dynamics[name], n, m, f"dynamics.{name}")

    atoms = []
    for i, atom in enumerate(jumps):
        rate = float(atom["rate"])
        if rate <= 0.0:
            raise ValueError(f"jump atom {i}: rate must be positive, got {rate}")
        atoms.append(
            JumpAtom(
                rate=rate,
                mark=float(atom.get("mark", 0.0)),
                E=as_path(grid, atom["E"], n, n, f"jumps[{i}].E"),
                Ebar=as_path(grid, atom["Ebar"], n, n, f"jumps[{i}].Ebar"),
                F=as_path(grid, atom["F"], n, m, f"jumps[{i}].F"),
                Fbar=as_path(grid, atom["Fbar"], n, m, f"jumps[{i}].Fbar"),
            )
        )

    w = CostWeights(
        Q=as_path(grid, weights["Q"], n, n, "weights.Q"),
        Qbar=as_path(grid, weights["Qbar"], n, n, "weights.Qbar"),
        S=as_path(grid, weights["S"], n, m, "weights.S"),
        Sbar=as_path(grid, weights["Sbar"], n, m, "weights.Sbar"),
        R=as_path(grid, weights["R"], m, m, "weights.R"),
        Rbar=as_path(grid, weights["Rbar"], m, m, "weights.Rbar"),
        G=np.atleast_2d(np.asarray(weights["G"], dtype=float)),
        Gbar=np.atleast_2d(np.asarray(weights["Gbar"], dtype=float)),
    )

    x0 = np.asarray(x0, dtype=float).reshape(-1)
    spec = ProblemSpec(
        n=n, m=m, grid=grid,
        A=dyn["A"], Abar=dyn["Abar"], B=dyn["B"], Bbar=dyn["Bbar"],
        C=dyn["C"], Cbar=dyn["Cbar"], D=dyn["D"], Dbar=dyn["Dbar"],
        jumps=JumpMeasure(atoms=tuple(atoms)), weights=w, x0=x0,
    )
    return validate_spec(spec)


def validate_spec(spec):
    """Check shapes, grid sharing and weight symmetry; return the spec.

    Raises :class:`GridMismatch`, :class:`ShapeMismatch` or
    :class:`AsymmetricWeight` on the first violated category, with every
    violation of that category listed in the message.
    """
    n, m, grid = spec.n, spec.m, spec.grid

    grid_errors = []
    shape_errors = []
    paths = {
        "A": (spec.A, n, n), "Abar": (spec.Abar, n, n),
        "B": (spec.B, n, m), "Bbar": (spec.Bbar, n, m),
        "C": (spec.C, n, n), "Cbar": (spec.Cbar, n, n),
        "D": (spec.D, n, m), "Dbar": (spec.Dbar, n, m),
        "Q": (spec.weights.Q, n, n), "Qbar": (spec.weights.Qbar, n, n),
        "S": (spec.weights.S, n, m), "Sbar": (spec.weights.Sbar, n, m),
        "R": (spec.weights.R, m, m), "Rbar": (spec.weights.Rbar, m, m),
    }
    for i, atom in enumerate(spec.jumps):
        paths[f"jumps[{i}].E"] = (atom.E, n, n)
        paths[f"jumps[{i}].Ebar"] = (atom.Ebar, n, n)
        paths[f"jumps[{i}].F"] = (atom.F, n, m)
        paths[f"jumps[{i}].Fbar"] = (atom.Fbar, n, m)

    for name, (path, rows, cols) in paths.items():
        if path.grid != grid:
            grid_errors.append(f"{name}: grid {path.grid} != problem grid {grid}")
        if path.shape != (rows, cols):
            shape_errors.append(
                f"{name}: expected ({rows}, {cols}), got {path.shape}"
            )
    for name, mat, rows in (("G", spec.weights.G, n), ("Gbar", spec.weights.Gbar, n)):
        if mat.shape != (rows, rows):
            shape_errors.append(f"{name}: expected ({rows}, {rows}), got {mat.shape}")
    if spec.x0.shape != (n,):
        shape_errors.append(f"x0: expected ({n},), got {spec.x0.shape}")

    if grid_errors:
        raise GridMismatch("; ".join(grid_errors))
    if shape_errors:
        raise ShapeMismatch("; ".join(shape_errors))

    sym_errors = []
    for name, path in (
        ("Q", spec.weights.Q), ("Qbar", spec.weights.Qbar),
        ("R", spec.weights.R), ("Rbar", spec.weights.Rbar),
    ):
        for k in range(grid.steps + 1):
            if not is_symmetric(path.samples[k]):
                sym_errors.append(f"{name} at node {k}")
                break
    for name, mat in (("G", spec.weights.G), ("Gbar", spec.weights.Gbar)):
        if not is_symmetric(mat):
            sym_errors.append(name)
    if sym_errors:
        raise AsymmetricWeight(
            "asymmetric weight matrices: " + ", ".join(sym_errors)
        )
    return spec


def with_weights(spec, weights):
    """Copy of ``spec`` with its cost weights replaced (same dynamics)."""
    return ProblemSpec(
        n=spec.n, m=spec.m, grid=spec.grid,
        A=spec.A, Abar=spec.Abar, B=spec.B, Bbar=spec.Bbar,
        C=spec.C, Cbar=spec.Cbar, D=spec.D, Dbar=spec.Dbar,
        jumps=spec.jumps, weights=weights, x0=spec.x0,
    )


_SELECTORS = {
    "E": lambda a, t: a.E.at(t),
    "Ebar": lambda a, t: a.Ebar.at(t),
    "E+Ebar": lambda a, t: a.E.at(t) + a.Ebar.at(t),
    "F": lambda a, t: a.F.at(t),
    "Fbar": lambda a, t: a.Fbar.at(t),
    "F+Fbar": lambda a, t: a.F.at(t) + a.Fbar.at(t),
}


def jump_bilinear(jumps, left, P, right, t, shape=None):
    """Rate-weighted bilinear jump sum ``sum_i rate_i L_i(t)^T P R_i(t)``.

    ``left`` and ``right`` name the per-atom loading to use on each side,
    one of E, Ebar, E+Ebar, F, Fbar, F+Fbar.  The integral of the
    corresponding product against the jump measure is exactly this sum
    because the measure is atomic.  ``shape`` fixes the output shape when
    the measure has no atoms (otherwise it is inferred from the loadings).
    """
    if left not in _SELECTORS or right not in _SELECTORS:
        raise ValueError(f"unknown selector: {left!r} or {right!r}")
    P = np.asarray(P, dtype=float)
    out = None
    for atom in jumps:
        lmat = _SELECTORS[left](atom, t)
        rmat = _SELECTORS[right](atom, t)
        if lmat.shape[0] != P.shape[0] or rmat.shape[0] != P.shape[1]:
            raise ShapeMismatch(
                f"jump loadings {lmat.shape}, {rmat.shape} incompatible with "
                f"P {P.shape}"
            )
        term = atom.rate * (lmat.T @ P @ rmat)
        out = term if out is None else out + term
    if out is None:
        if shape is None:
            raise ValueError("empty jump measure: pass shape=(rows, cols)")
        out = np.zeros(shape)
    return out


@dataclass(frozen=True)
class SReport:
    """Result of the uniform-definiteness check on a weight set.

    ``alpha0`` is the smallest eigenvalue of the two control-weight
    conditions over all nodes (the certified uniform margin when positive);
    ``violations`` lists (quantity, node index, minimal eigenvalue) for
    every failed condition.
    """

    alpha0: float
    passed: bool
    violations: tuple


def check_assumption_S(weights, grid, alpha0_min=1e-8, eig_tol=DEFAULT_EIG_TOL):
    """Node-wise definiteness check of a weight set.

    Conditions, checked at every grid node: R and R + Rbar uniformly
    positive definite (eigenvalues >= ``alpha0_min``), the two Schur
    complements Q - S R^-1 S^T and (Q+Qbar) - (S+Sbar)(R+Rbar)^-1(S+Sbar)^T
    positive semidefinite (eigenvalues >= -``eig_tol``), and the terminal
    weights G, G + Gbar positive semidefinite.  Failures are reported, not
    raised.
    """
    violations = []
    alpha0 = np.inf

    def eig_min(mat):
        return float(np.linalg.eigvalsh(sym(mat))[0])

    def schur_min(qmat, smat, rmat):
        # -inf marks an unformable Schur complement (singular control weight)
        try:
            rinv_st = np.linalg.solve(sym(rmat), smat.T)
        except np.linalg.LinAlgError:
            return -np.inf
        if not np.all(np.isfinite(rinv_st)):
            return -np.inf
        return eig_min(qmat - smat @ rinv_st)

    for k, t in enumerate(grid.nodes):
        R = weights.R.at(t)
        Rbar = weights.Rbar.at(t)
        Q = weights.Q.at(t)
        Qbar = weights.Qbar.at(t)
        S = weights.S.at(t)
        Sbar = weights.Sbar.at(t)

        e_r = eig_min(R)
        e_rsum = eig_min(R + Rbar)
        alpha0 = min(alpha0, e_r, e_rsum)
        if e_r < alpha0_min:
            violations.append(("R", k, e_r))
        if e_rsum < alpha0_min:
            violations.append(("R+Rbar", k, e_rsum))

        e_q = schur_min(Q, S, R)
        if e_q < -eig_tol:
            violations.append(("Q - S R^-1 S^T", k, e_q))
        e_qsum = schur_min(Q + Qbar, S + Sbar, R + Rbar)
        if e_qsum < -eig_tol:
            violations.append(("(Q+Qbar) Schur", k, e_qsum))

    last = grid.steps
    e_g = float(np.linalg.eigvalsh(sym(weights.G))[0])
    if e_g < -eig_tol:
        violations.append(("G", last, e_g))
    e_gsum = float(np.linalg.eigvalsh(sym(weights.G + weights.Gbar))[0])
    if e_gsum < -eig_tol:
        violations.append(("G+Gbar", last, e_gsum))

    return SReport(
        alpha0=float(alpha0),
        passed=not violations,
        violations=tuple(violations),
    )
