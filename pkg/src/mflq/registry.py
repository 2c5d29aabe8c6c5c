"""Built-in benchmark problems with known structure or closed forms.

Four instances ship with the package, addressed by the ids 5.1 to 5.4:

5.1  scalar problem with an indefinite control weight whose Riccati pair
     has closed-form solutions, so every synthesis output can be compared
     against exact formulas;
5.2  scalar problem with a cubic-in-time control weight that is negative
     near t = 0; a quadratic/hyperbolic shift pair restores definiteness
     and the shifted solution pulls back to the original problem;
5.3  scalar problem whose optimality system doubles as a coupled
     forward-backward system with jumps, certified by simulation through
     the constant shift H = 2, K = 1;
5.4  two-dimensional asset-liability model (liability and net wealth)
     with a singular control weight, made definite by a shift built from
     a scalar backward ODE; used for the rate/appreciation sweeps.
"""

import math

import numpy as np

from .equivalence import FunctionalShift
from .problem import TimeGrid, make_problem


def scalar_jump_closed_forms(T=1.0, delta=1.0, x0=1.0):
    """Exact solution formulas for the 5.1 instance, keyed by name."""
    return {
        "P": lambda t: 2.0,
        "Pi": lambda t: delta / (2.0 * T - 2.0 * t + delta),
        "K0": lambda t: 0.5,
        "K1": lambda t: 1.0 / (2.0 * T - 2.0 * t + delta),
        "value": 0.5 * x0 * x0 * delta / (2.0 * T + delta),
        "mean": lambda t: x0 * (2.0 * T - 2.0 * t + delta) / (2.0 * T + delta),
    }


def scalar_jump(M=1000, T=1.0, delta=1.0, x0=1.0):
    """Scalar instance with indefinite control weights and one jump atom.

    The single atom is placed at mark 1 with rate delta * e^2 and loading
    e^-1 on the mean control, which realises the jump second moment
    ``delta`` exactly; the jump feeds only through E[u], so the centered
    Riccati equation is jump-free.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    grid = TimeGrid(horizon=T, steps=M)
    mark = 1.0
    atom = {
        "rate": delta * math.exp(2.0 * mark),
        "mark": mark,
        "E": 0.0, "Ebar": 0.0, "F": 0.0,
        "Fbar": math.exp(-mark),
    }
    spec = make_problem(
        n=1, m=1, grid=grid,
        dynamics={"A": 1.0, "Abar": -1.0, "B": 1.0, "Bbar": 1.0,
                  "C": 0.0, "Cbar": 0.0, "D": 2.0, "Dbar": -1.0},
        jumps=[atom],
        weights={"Q": -3.0, "Qbar": 3.0, "S": 0.0, "Sbar": 0.0,
                 "R": -4.0, "Rbar": 2.0, "G": 2.0, "Gbar": -1.0},
        x0=[x0],
    )
    return spec, None


def shifted_cubic(M=1000, T=1.0, alpha=None):
    """Scalar instance whose control weight (t+1)^3 - 2(t+1)^2 dips
    negative; shipped with the shift H = (t+1)^2 / 2, K = 1/(1+T-t) - 2
    that restores definiteness.

    ``alpha`` is the terminal state weight and must exceed (T+1)^2 / 2 so
    the shifted terminal weight stays positive; the default is (T+1)^2.
    The jump atom uses loadings 0.1 (state) and 0.05 (mean state), keeping
    the jump second moments small so the backward pair stays moderately
    sized on [0, T].
    """
    if alpha is None:
        alpha = (T + 1.0) ** 2
    if alpha <= 0.5 * (T + 1.0) ** 2:
        raise ValueError(f"alpha must exceed (T+1)^2/2, got {alpha}")
    grid = TimeGrid(horizon=T, steps=M)
    nodes = grid.nodes
    r_t = (nodes + 1.0) ** 3 - 2.0 * (nodes + 1.0) ** 2
    rbar_t = 1.0 - (nodes + 1.0) ** 3
    spec = make_problem(
        n=1, m=1, grid=grid,
        dynamics={"A": 2.0, "Abar": -1.0, "B": 1.0, "Bbar": 0.0,
                  "C": 0.0, "Cbar": 0.0, "D": 2.0, "Dbar": 0.0},
        jumps=[{"rate": 1.0, "mark": 1.0,
                "E": 0.1, "Ebar": 0.05, "F": 0.0, "Fbar": 0.0}],
        weights={"Q": 0.0, "Qbar": 4.0, "S": 0.0, "Sbar": 2.0,
                 "R": r_t, "Rbar": rbar_t,
                 "G": alpha, "Gbar": -(alpha + 1.0)},
        x0=[1.0],
    )
    h = 0.5 * (nodes + 1.0) ** 2
    hdot = nodes + 1.0
    kk = 1.0 / (1.0 + T - nodes) - 2.0
    kdot = 1.0 / (1.0 + T - nodes) ** 2
    shift = FunctionalShift.from_node_samples(grid, h, kk, hdot, kdot)
    return spec, shift


def fbsde_pair(M=1000, T=1.0):
    """Scalar instance whose optimality system is a coupled
    forward-backward system with jumps; the constant shift H = 2, K = 1
    makes the cost definite, so solvability is certified by synthesis and
    simulation rather than by contraction arguments."""
    grid = TimeGrid(horizon=T, steps=M)
    spec = make_problem(
        n=1, m=1, grid=grid,
        dynamics={"A": 2.0, "Abar": 1.0, "B": 1.0, "Bbar": 0.0,
                  "C": 0.0, "Cbar": 0.0, "D": 1.0, "Dbar": 0.0},
        jumps=[{"rate": 1.0, "mark": 1.0,
                "E": 0.0, "Ebar": 1.0, "F": 0.0, "Fbar": 0.0}],
        weights={"Q": -1.0, "Qbar": 1.0, "S": 0.0, "Sbar": 0.0,
                 "R": -1.0, "Rbar": 0.0, "G": 2.0, "Gbar": -1.0},
        x0=[1.0],
    )
    shift = FunctionalShift.from_node_samples(
        grid,
        H=np.full((M + 1, 1, 1), 2.0),
        K=np.full((M + 1, 1, 1), 1.0),
        Hdot=np.zeros((M + 1, 1, 1)),
        Kdot=np.zeros((M + 1, 1, 1)),
    )
    return spec, shift


def liability_weight_ode(grid, r, a, mu, sigma, b, substeps=4):
    """Backward scalar ODE for the shift weight of the asset-liability
    model: lamdot = ((mu-r)/sigma)^2 - 2r) lam + (r - a + b(mu-r)/sigma)^2
    lam^2 with terminal value 1/2.  Returns node samples of lam and lamdot.
    """
    lin = ((mu - r) / sigma) ** 2 - 2.0 * r
    quad = (r - a + b * (mu - r) / sigma) ** 2

    def f(lam):
        return lin * lam + quad * lam * lam

    M = grid.steps
    h = grid.dt / substeps
    lam = np.empty(M + 1)
    lam[M] = 0.5
    val = 0.5
    for k in range(M, 0, -1):
        for _ in range(substeps):
            # backward step: d(lam)/ds = -f(lam) on s = horizon - t
            f1 = -f(val)
            f2 = -f(val + 0.5 * h * f1)
            f3 = -f(val + 0.5 * h * f2)
            f4 = -f(val + h * f3)
            val = val + (h / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        lam[k - 1] = val
    lamdot = np.array([f(v) for v in lam])
    return lam, lamdot


def asset_liability(M=1000, T=1.0, r=0.05, a=0.2, mu=0.3, sigma=0.5,
                    b=0.3, c=0.5, n0=1.0, l0=0.5):
    """Two-dimensional asset-liability model: state (liability, net wealth),
    scalar control = amount invested in the risky asset.

    The control weight R is identically zero, so the definiteness check
    fails; the shift H = diag(0, lam) with lam from
    :func:`liability_weight_ode` (and K = 0) restores it.  Parameters: r
    risk-free rate, a liability appreciation rate, mu/sigma risky-asset
    drift and volatility, b liability volatility, c mean-coupling of the
    liability, n0/l0 initial assets and liability.
    """
    grid = TimeGrid(horizon=T, steps=M)
    A = np.array([[a, 0.0], [r - a, r]])
    Abar = np.array([[c, c], [-c, -c]])
    B = np.array([[0.0], [mu - r]])
    C = np.array([[b, 0.0], [-b, 0.0]])
    D = np.array([[0.0], [sigma]])
    zeros_nm = np.zeros((2, 1))
    spec = make_problem(
        n=2, m=1, grid=grid,
        dynamics={"A": A, "Abar": Abar, "B": B, "Bbar": zeros_nm,
                  "C": C, "Cbar": np.zeros((2, 2)),
                  "D": D, "Dbar": zeros_nm},
        jumps=[],
        weights={"Q": np.eye(2), "Qbar": np.diag([0.0, -1.0]),
                 "S": zeros_nm, "Sbar": zeros_nm,
                 "R": 0.0, "Rbar": 0.0,
                 "G": np.diag([0.0, 1.0]), "Gbar": np.diag([0.0, -1.0])},
        x0=[l0, n0 - l0],
    )
    lam, lamdot = liability_weight_ode(grid, r, a, mu, sigma, b)
    h = np.zeros((M + 1, 2, 2))
    hdot = np.zeros_like(h)
    h[:, 1, 1] = lam
    hdot[:, 1, 1] = lamdot
    zero = np.zeros((M + 1, 2, 2))
    shift = FunctionalShift.from_node_samples(grid, h, zero, hdot, zero.copy())
    return spec, shift


def _build_scalar_jump(config, **params):
    return scalar_jump(M=config.M, delta=params.get("delta", config.delta))


def _build_shifted_cubic(config, **params):
    return shifted_cubic(M=config.M, alpha=params.get("alpha"))


def _build_fbsde(config, **params):
    return fbsde_pair(M=config.M)


def _build_asset_liability(config, **params):
    return asset_liability(M=config.M, **params)


BUILTIN_EXAMPLES = {
    "5.1": {
        "build": _build_scalar_jump,
        "sweep_params": ("delta",),
        "description": "scalar jump problem with closed-form solution",
    },
    "5.2": {
        "build": _build_shifted_cubic,
        "sweep_params": (),
        "description": "cubic control weight restored by a quadratic shift",
    },
    "5.3": {
        "build": _build_fbsde,
        "sweep_params": (),
        "description": "forward-backward system certified via synthesis",
    },
    "5.4": {
        "build": _build_asset_liability,
        "sweep_params": ("r", "a"),
        "description": "asset-liability model with rate/appreciation sweeps",
    },
}


def build_example(example_id, config, **params):
    """Instantiate a built-in example; returns (problem, shift or None)."""
    if example_id not in BUILTIN_EXAMPLES:
        known = ", ".join(sorted(BUILTIN_EXAMPLES))
        raise KeyError(f"unknown example id {example_id!r} (known: {known})")
    return BUILTIN_EXAMPLES[example_id]["build"](config, **params)
