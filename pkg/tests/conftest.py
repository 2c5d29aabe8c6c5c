import numpy as np
import pytest

from mflq import registry
from mflq.problem import TimeGrid, make_problem
from mflq.riccati import solve_riccati
from mflq.simulation import solve_mean_ode
from mflq.synthesis import synthesize_feedback


@pytest.fixture(scope="session")
def ex51():
    """Scalar jump instance at M=1000 with its solution and closed forms."""
    spec, _ = registry.scalar_jump(M=1000, T=1.0, delta=1.0)
    forms = registry.scalar_jump_closed_forms(T=1.0, delta=1.0, x0=1.0)
    sol = solve_riccati(spec)
    law = synthesize_feedback(spec, sol)
    mean = solve_mean_ode(spec, law)
    return {"spec": spec, "forms": forms, "sol": sol, "law": law,
            "mean": mean, "T": 1.0, "delta": 1.0}


@pytest.fixture(scope="session")
def ex51_m500():
    spec, _ = registry.scalar_jump(M=500, T=1.0, delta=1.0)
    forms = registry.scalar_jump_closed_forms(T=1.0, delta=1.0, x0=1.0)
    sol = solve_riccati(spec)
    law = synthesize_feedback(spec, sol)
    mean = solve_mean_ode(spec, law)
    return {"spec": spec, "forms": forms, "sol": sol, "law": law,
            "mean": mean}


def random_definite_spec(seed=0, n=2, m=2, M=400, n_atoms=2, scale=0.4,
                         time_varying=False):
    """Random instance with uniformly positive definite control weights."""
    rng = np.random.default_rng(seed)
    grid = TimeGrid(1.0, M)

    def rm(r, c):
        return scale * rng.standard_normal((r, c))

    def spd(dim, floor):
        mat = rng.standard_normal((dim, dim))
        return mat @ mat.T * 0.2 + floor * np.eye(dim)

    def entry(r, c):
        base = rm(r, c)
        if not time_varying:
            return base
        wobble = rm(r, c)
        return np.stack([base + np.sin(2.0 * t) * wobble for t in grid.nodes])

    dynamics = {name: entry(n, n) for name in ("A", "Abar", "C", "Cbar")}
    dynamics.update({name: entry(n, m) for name in ("B", "Bbar", "D", "Dbar")})
    jumps = [
        {"rate": float(rng.uniform(0.3, 1.5)), "mark": float(i + 1),
         "E": entry(n, n), "Ebar": entry(n, n),
         "F": entry(n, m), "Fbar": entry(n, m)}
        for i in range(n_atoms)
    ]
    weights = {
        "Q": spd(n, 0.5), "Qbar": 0.1 * np.eye(n),
        "S": rm(n, m), "Sbar": rm(n, m),
        "R": spd(m, 1.0), "Rbar": 0.2 * np.eye(m),
        "G": spd(n, 0.3), "Gbar": 0.1 * np.eye(n),
    }
    x0 = rng.standard_normal(n)
    return make_problem(n=n, m=m, grid=grid, dynamics=dynamics, jumps=jumps,
                        weights=weights, x0=x0)


@pytest.fixture(scope="session")
def definite_spec():
    return random_definite_spec(seed=11, time_varying=True)
