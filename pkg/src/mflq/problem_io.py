"""Problem files (JSON) and delimited exports (CSV).

A problem file is a JSON object with sections ``dimensions``, ``grid``,
``dynamics``, ``jumps``, ``weights`` and ``x0``, plus an optional ``shift``
section.  Matrix entries are stored row-major as nested arrays; any
time-varying entry is either a constant (a number for 1x1, or a nested
rows-by-cols array) broadcast over the grid, or a per-node sample array of
length M+1 (a flat number list for 1x1 entries, or a list of M+1 nested
matrices otherwise).

CSV output follows RFC 4180 (CRLF line endings); floats are written with
``repr`` so a round-trip through text reproduces them bit-exactly.
"""

import csv
import json

import numpy as np

from .equivalence import FunctionalShift
from .problem import GridMismatch, TimeGrid, make_problem


class ParseError(ValueError):
    """A problem file is missing a field or holds a malformed value."""


_DYNAMICS_KEYS = ("A", "Abar", "B", "Bbar", "C", "Cbar", "D", "Dbar")
_WEIGHT_KEYS = ("Q", "Qbar", "S", "Sbar", "R", "Rbar", "G", "Gbar")
_ATOM_KEYS = ("E", "Ebar", "F", "Fbar")


def _section(doc, name):
    if name not in doc:
        raise ParseError(f"missing section {name!r}")
    return doc[name]


def _field(section, name, where):
    if name not in section:
        raise ParseError(f"missing field {where}.{name}")
    return section[name]


def _coerce_entry(value, grid, rows, cols, where):
    """Turn a JSON value into either a constant matrix or node samples."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        if (rows, cols) != (1, 1):
            raise ParseError(
                f"{where}: scalar given for a {rows}x{cols} entry"
            )
        return float(arr)
    if arr.ndim == 1:
        # flat list: per-node samples of a scalar entry
        if (rows, cols) != (1, 1):
            raise ParseError(
                f"{where}: flat array given for a {rows}x{cols} entry"
            )
        if arr.shape[0] != grid.steps + 1:
            raise GridMismatch(
                f"{where}: expected {grid.steps + 1} samples, got {arr.shape[0]}"
            )
        return arr
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ParseError(
                f"{where}: constant matrix has shape {arr.shape}, "
                f"expected ({rows}, {cols})"
            )
        return arr
    if arr.ndim == 3:
        if arr.shape[0] != grid.steps + 1:
            raise GridMismatch(
                f"{where}: expected {grid.steps + 1} samples, got {arr.shape[0]}"
            )
        if arr.shape[1:] != (rows, cols):
            raise ParseError(
                f"{where}: samples have shape {arr.shape[1:]}, "
                f"expected ({rows}, {cols})"
            )
        return arr
    raise ParseError(f"{where}: cannot interpret value of ndim {arr.ndim}")


def parse_problem_dict(doc):
    """Build (problem, shift or None) from a decoded problem-file object."""
    dims = _section(doc, "dimensions")
    n = int(_field(dims, "n", "dimensions"))
    m = int(_field(dims, "m", "dimensions"))
    if n < 1 or m < 1:
        raise ParseError(f"dimensions must be positive, got n={n}, m={m}")

    gsec = _section(doc, "grid")
    grid = TimeGrid(horizon=float(_field(gsec, "T", "grid")),
                    steps=int(_field(gsec, "M", "grid")))

    dsec = _section(doc, "dynamics")
    shapes = {"A": (n, n), "Abar": (n, n), "C": (n, n), "Cbar": (n, n),
              "B": (n, m), "Bbar": (n, m), "D": (n, m), "Dbar": (n, m)}
    dynamics = {
        key: _coerce_entry(_field(dsec, key, "dynamics"), grid, *shapes[key],
                           where=f"dynamics.{key}")
        for key in _DYNAMICS_KEYS
    }

    atoms = []
    for i, atom in enumerate(_section(doc, "jumps")):
        where = f"jumps[{i}]"
        entry = {"rate": float(_field(atom, "rate", where)),
                 "mark": float(atom.get("mark", 0.0))}
        atom_shapes = {"E": (n, n), "Ebar": (n, n), "F": (n, m), "Fbar": (n, m)}
        for key in _ATOM_KEYS:
            entry[key] = _coerce_entry(_field(atom, key, where), grid,
                                       *atom_shapes[key], where=f"{where}.{key}")
        atoms.append(entry)

    wsec = _section(doc, "weights")
    wshapes = {"Q": (n, n), "Qbar": (n, n), "S": (n, m), "Sbar": (n, m),
               "R": (m, m), "Rbar": (m, m)}
    weights = {
        key: _coerce_entry(_field(wsec, key, "weights"), grid, *wshapes[key],
                           where=f"weights.{key}")
        for key in ("Q", "Qbar", "S", "Sbar", "R", "Rbar")
    }
    for key in ("G", "Gbar"):
        val = np.atleast_2d(np.asarray(_field(wsec, key, "weights"), dtype=float))
        if val.shape != (n, n):
            raise ParseError(
                f"weights.{key}: expected ({n}, {n}), got {val.shape}"
            )
        weights[key] = val

    x0 = np.asarray(_section(doc, "x0"), dtype=float).reshape(-1)
    if x0.shape != (n,):
        raise ParseError(f"x0: expected {n} entries, got {x0.shape[0]}")

    spec = make_problem(n=n, m=m, grid=grid, dynamics=dynamics,
                        jumps=atoms, weights=weights, x0=x0)

    shift = None
    if "shift" in doc:
        shift = parse_shift_dict(doc["shift"], grid, n,
                                 finite_difference=False)
    return spec, shift


def parse_shift_dict(sec, grid, n, finite_difference=False):
    """Build a FunctionalShift from a decoded ``shift`` section."""
    def entry(name, required):
        if name not in sec:
            if required:
                raise ParseError(f"missing field shift.{name}")
            return None
        value = _coerce_entry(sec[name], grid, n, n, where=f"shift.{name}")
        if isinstance(value, float):
            value = np.full((grid.steps + 1, 1, 1), value)
        elif value.ndim == 1:
            value = value[:, None, None]
        elif value.ndim == 2:
            value = np.broadcast_to(value, (grid.steps + 1, n, n)).copy()
        return value

    H = entry("H", required=True)
    K = entry("K", required=True)
    Hdot = entry("Hdot", required=False)
    Kdot = entry("Kdot", required=False)
    if (Hdot is None or Kdot is None) and not finite_difference:
        raise ParseError(
            "shift.Hdot/shift.Kdot missing; supply them or request "
            "finite-difference derivatives explicitly"
        )
    return FunctionalShift.from_node_samples(
        grid, H, K, Hdot, Kdot, finite_difference=finite_difference)


def load_problem(path, finite_difference_shift=False):
    """Parse a problem file; returns (problem, shift or None)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: invalid JSON ({err})") from None
    spec, shift = None, None
    if "shift" in doc and finite_difference_shift:
        # re-parse the shift with differencing allowed
        body = dict(doc)
        shift_sec = body.pop("shift")
        spec, _ = parse_problem_dict(body)
        shift = parse_shift_dict(shift_sec, spec.grid, spec.n,
                                 finite_difference=True)
        return spec, shift
    return parse_problem_dict(doc)


def _entry_to_json(path):
    """Most compact JSON form of a MatrixPath: scalar, matrix or samples."""
    samples = path.samples
    first = samples[0]
    if np.all(samples == first[None, :, :]):
        if first.shape == (1, 1):
            return float(first[0, 0])
        return first.tolist()
    if first.shape == (1, 1):
        return samples[:, 0, 0].tolist()
    return samples.tolist()


def problem_to_dict(spec, shift=None):
    """Problem-file object for a spec (inverse of parse_problem_dict)."""
    doc = {
        "dimensions": {"n": spec.n, "m": spec.m},
        "grid": {"T": spec.grid.horizon, "M": spec.grid.steps},
        "dynamics": {key: _entry_to_json(getattr(spec, key))
                     for key in _DYNAMICS_KEYS},
        "jumps": [
            {"rate": atom.rate, "mark": atom.mark,
             **{key: _entry_to_json(getattr(atom, key)) for key in _ATOM_KEYS}}
            for atom in spec.jumps
        ],
        "weights": {
            **{key: _entry_to_json(getattr(spec.weights, key))
               for key in ("Q", "Qbar", "S", "Sbar", "R", "Rbar")},
            "G": spec.weights.G.tolist(),
            "Gbar": spec.weights.Gbar.tolist(),
        },
        "x0": spec.x0.tolist(),
    }
    if shift is not None:
        doc["shift"] = {
            "H": _entry_to_json(shift.H), "K": _entry_to_json(shift.K),
            "Hdot": _entry_to_json(shift.Hdot),
            "Kdot": _entry_to_json(shift.Kdot),
        }
    return doc


def save_problem(spec, path, shift=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(spec, shift), fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# CSV exports


def _fmt(x):
    return repr(float(x))


def _matrix_header(prefix, rows, cols):
    return [f"{prefix}_{i}_{j}" for i in range(rows) for j in range(cols)]


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def riccati_to_csv(sol, path):
    """One row per node: t, vectorized P, Pi, sigma0, sigma1."""
    grid = sol.P.grid
    n = sol.P.shape[0]
    m = sol.sigma0.shape[0]
    header = (["t"] + _matrix_header("P", n, n) + _matrix_header("Pi", n, n)
              + _matrix_header("Sigma0", m, m) + _matrix_header("Sigma1", m, m))
    rows = []
    for k, t in enumerate(grid.nodes):
        rows.append([t]
                    + list(sol.P.samples[k].ravel())
                    + list(sol.Pi.samples[k].ravel())
                    + list(sol.sigma0.samples[k].ravel())
                    + list(sol.sigma1.samples[k].ravel()))
    write_csv(path, header, rows)


def read_riccati_csv(path):
    """Inverse of :func:`riccati_to_csv`; returns arrays keyed by name."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    out = {"t": data[:, 0]}
    for name in ("P", "Pi", "Sigma0", "Sigma1"):
        cols = [i for i, h in enumerate(header) if h.startswith(f"{name}_")]
        dim = int(round(np.sqrt(len(cols))))
        out[name] = data[:, cols].reshape(-1, dim, dim)
    return out


def gains_to_csv(law, path):
    grid = law.K0.grid
    m, n = law.K0.shape
    header = (["t"] + _matrix_header("K0", m, n) + _matrix_header("K1", m, n))
    rows = []
    for k, t in enumerate(grid.nodes):
        rows.append([t] + list(law.K0.samples[k].ravel())
                    + list(law.K1.samples[k].ravel()))
    write_csv(path, header, rows)


def adjoint_to_csv(triple, path):
    """Adjoint gain schedule: centered and mean maps of Y, Z and each r."""
    grid = triple.y_centered.grid
    n = triple.y_centered.shape[0]
    names = [("Y_centered", triple.y_centered), ("Y_mean", triple.y_mean),
             ("Z_centered", triple.z_centered), ("Z_mean", triple.z_mean)]
    for i, (rc, rm) in enumerate(zip(triple.r_centered, triple.r_mean)):
        names.append((f"r{i}_centered", rc))
        names.append((f"r{i}_mean", rm))
    header = ["t"]
    for label, _ in names:
        header += _matrix_header(label, n, n)
    rows = []
    for k, t in enumerate(grid.nodes):
        row = [t]
        for _, gain in names:
            row += list(gain.samples[k].ravel())
        rows.append(row)
    write_csv(path, header, rows)


def mean_to_csv(mean, grid, path):
    n = mean.states.shape[1]
    m = mean.controls.shape[1]
    header = (["t"] + [f"mean_x_{i}" for i in range(n)]
              + [f"mean_u_{j}" for j in range(m)])
    rows = []
    for k, t in enumerate(grid.nodes):
        rows.append([t] + list(mean.states[k]) + list(mean.controls[k]))
    write_csv(path, header, rows)


def ensemble_sample_to_csv(ensemble, grid, path, max_paths=10):
    count = min(max_paths, ensemble.n_paths)
    n = ensemble.states.shape[2]
    m = ensemble.controls.shape[2]
    header = ["t"]
    for p in range(count):
        header += [f"x{p}_{i}" for i in range(n)]
        header += [f"u{p}_{j}" for j in range(m)]
    rows = []
    for k, t in enumerate(grid.nodes):
        row = [t]
        for p in range(count):
            row += list(ensemble.states[p, k]) + list(ensemble.controls[p, k])
        rows.append(row)
    write_csv(path, header, rows)


def sweep_to_csv(sweep, path):
    header = ["t"] + [f"{sweep.param}={v:g}" for v in sweep.values]
    rows = []
    for k, t in enumerate(sweep.ts):
        rows.append([t] + [curve[k] for curve in sweep.curves])
    write_csv(path, header, rows)
