"""Command-line front end.

Subcommands:
  solve          integrate the Riccati pair, synthesize gains, export CSV
  check-s        run the definiteness check on a problem's weights
  shift          apply a cost shift (from file or canonical) and re-check
  simulate       Monte Carlo run under the optimal or zero control
  verify-example run a built-in verification pipeline (exit 1 on failure)
  sweep          parameter sweep of a built-in example

Problems are given either as a JSON problem file or as a built-in example
id (5.1, 5.2, 5.3, 5.4).  ``--grid``/``--delta`` configure built-ins only;
a problem file fixes its own grid.
"""

import argparse
import os
import sys

from .equivalence import RSingular, canonical_shift, shift_weights
from .problem import (AsymmetricWeight, GridMismatch, ShapeMismatch,
                      check_assumption_S, with_weights)
from .problem_io import (ParseError, adjoint_to_csv, gains_to_csv,
                         load_problem, mean_to_csv, parse_shift_dict,
                         riccati_to_csv, write_csv)
from .registry import BUILTIN_EXAMPLES, build_example
from .reports import emit_report
from .riccati import NonFiniteState, SigmaSingular, solve_riccati
from .simulation import simulate_cost, simulate_paths, solve_mean_ode
from .synthesis import (adjoint_representation, optimal_value,
                        synthesize_feedback, zero_control)
from .verify import (RunConfig, SweepResult, VerificationReport,
                     control_along_mean, run_example)

KNOWN_ERRORS = (ParseError, ShapeMismatch, AsymmetricWeight, GridMismatch,
                SigmaSingular, NonFiniteState, RSingular, ValueError, KeyError,
                FileNotFoundError)


def _config_from(args):
    return RunConfig(
        M=args.grid, substeps=args.substeps, n_paths=args.paths,
        seed=args.seed, delta=args.delta, out_dir=args.out,
    )


def _resolve_problem(name, args):
    """A built-in id or a problem-file path -> (spec, shift or None)."""
    if name in BUILTIN_EXAMPLES:
        return build_example(name, _config_from(args))
    if not os.path.exists(name):
        raise FileNotFoundError(
            f"{name!r} is neither a built-in example id nor a file"
        )
    if args.grid != _GRID_DEFAULT:
        raise ValueError(
            "--grid applies to built-in examples; a problem file fixes "
            "its own grid"
        )
    return load_problem(name, finite_difference_shift=args.fd_derivatives)


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_solve(args):
    spec, shift = _resolve_problem(args.problem, args)
    sol = solve_riccati(spec, substeps=args.substeps)
    law = synthesize_feedback(spec, sol)
    triple = adjoint_representation(spec, sol)
    out = _outdir(args)
    riccati_to_csv(sol, os.path.join(out, "riccati.csv"))
    gains_to_csv(law, os.path.join(out, "gains.csv"))
    adjoint_to_csv(triple, os.path.join(out, "adjoint.csv"))
    names = "riccati.csv, gains.csv, adjoint.csv"
    if not args.no_figures:
        from .figures import save_riccati_figure

        save_riccati_figure(sol, os.path.join(out, "riccati.png"))
        names += ", riccati.png"
    value = optimal_value(sol, spec.x0)
    print(f"solved on {spec.grid.steps} intervals "
          f"(max condition numbers: sigma0 {sol.stats['max_cond_sigma0']:.3g}, "
          f"sigma1 {sol.stats['max_cond_sigma1']:.3g})")
    print(f"optimal value at x0: {value!r}")
    print(f"wrote {names} in {out}")
    return 0


def cmd_check_s(args):
    spec, _ = _resolve_problem(args.problem, args)
    report = check_assumption_S(spec.weights, spec.grid,
                                alpha0_min=args.alpha0_min,
                                eig_tol=args.eig_tol)
    print(f"definiteness check: {'PASS' if report.passed else 'FAIL'} "
          f"(alpha0 = {report.alpha0:.6g})")
    for name, node, eig in report.violations[:args.max_violations]:
        print(f"  violated: {name} at node {node} (min eigenvalue {eig:.6g})")
    extra = len(report.violations) - args.max_violations
    if extra > 0:
        print(f"  ... and {extra} more")
    return 0


def cmd_shift(args):
    spec, file_shift = _resolve_problem(args.problem, args)
    if args.shift == "canonical":
        sol = solve_riccati(spec, substeps=args.substeps)
        shift = canonical_shift(sol)
        source = "canonical (H = P, K = Pi)"
    elif args.shift is None:
        if file_shift is None:
            raise ValueError("problem has no shift section; pass --shift")
        shift = file_shift
        source = "problem file"
    else:
        import json

        with open(args.shift, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        section = doc.get("shift", doc)
        shift = parse_shift_dict(section, spec.grid, spec.n,
                                 finite_difference=args.fd_derivatives)
        source = args.shift
    shifted = shift_weights(spec, shift)
    report = check_assumption_S(shifted, spec.grid)
    out = _outdir(args)
    rows = []
    for k, t in enumerate(spec.grid.nodes):
        rows.append([t]
                    + list(shifted.Q.samples[k].ravel())
                    + list(shifted.S.samples[k].ravel())
                    + list(shifted.R.samples[k].ravel()))
    n, m = spec.n, spec.m
    header = (["t"]
              + [f"Q_{i}_{j}" for i in range(n) for j in range(n)]
              + [f"S_{i}_{j}" for i in range(n) for j in range(m)]
              + [f"R_{i}_{j}" for i in range(m) for j in range(m)])
    write_csv(os.path.join(out, "shifted_weights.csv"), header, rows)
    print(f"shift source: {source}")
    print(f"shifted definiteness check: "
          f"{'PASS' if report.passed else 'FAIL'} (alpha0 = {report.alpha0:.6g})")
    print(f"wrote shifted_weights.csv in {out}")
    return 0


def cmd_simulate(args):
    spec, file_shift = _resolve_problem(args.problem, args)
    if args.control == "optimal":
        if file_shift is not None:
            shifted = shift_weights(spec, file_shift)
            from .equivalence import pullback_riccati

            sol = pullback_riccati(
                solve_riccati(with_weights(spec, shifted),
                              substeps=args.substeps),
                file_shift, spec)
        else:
            sol = solve_riccati(spec, substeps=args.substeps)
        control = synthesize_feedback(spec, sol)
        print(f"optimal value at x0: {optimal_value(sol, spec.x0)!r}")
    else:
        control = zero_control(spec)
    mean = solve_mean_ode(spec, control, substeps=args.substeps)
    estimate = simulate_cost(spec, control, mean, args.seed, args.paths)
    print(f"cost estimate: {estimate}  "
          f"(seed {args.seed}, {spec.grid.steps} intervals)")

    sample = simulate_paths(spec, control, mean, args.seed,
                            min(args.sample_paths, args.paths))
    out = _outdir(args)
    mean_to_csv(mean, spec.grid, os.path.join(out, "mean.csv"))
    from .problem_io import ensemble_sample_to_csv
    from .figures import save_paths_figure

    ensemble_sample_to_csv(sample, spec.grid,
                           os.path.join(out, "paths_sample.csv"),
                           max_paths=args.sample_paths)
    save_paths_figure(sample, spec.grid, os.path.join(out, "paths.png"))
    summary = {
        "estimate": estimate.mean,
        "standard_error": estimate.standard_error,
        "n_paths": estimate.n_paths,
        "grid_steps": spec.grid.steps,
        "seed": args.seed,
        "control": args.control,
        "mean_within_4se": sample.mean_within_4se,
    }
    import json

    with open(os.path.join(out, "estimate.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    print(f"wrote mean.csv, paths_sample.csv, paths.png, estimate.json in {out}")
    if not sample.mean_within_4se:
        print(f"note: ensemble mean deviates from the mean ODE by "
              f"{sample.mean_gap_z:.2f} standard errors (> 4)")
    return 0


def cmd_verify_example(args):
    config = RunConfig(M=args.grid, substeps=args.substeps,
                       n_paths=args.paths, seed=args.seed, delta=args.delta,
                       directions=args.directions, out_dir=args.out)
    report = run_example(args.example, config)
    print(report.to_table())
    files = emit_report(report, args.out, prefix=f"example_{args.example}",
                        figures=not args.no_figures)
    print("wrote: " + ", ".join(os.path.basename(f) for f in files))
    return 0 if report.passed else 1


def cmd_sweep(args):
    if args.problem not in BUILTIN_EXAMPLES:
        raise ValueError(
            "sweep requires a built-in example id; problem files do not "
            "declare named sweep parameters"
        )
    info = BUILTIN_EXAMPLES[args.problem]
    if args.param not in info["sweep_params"]:
        raise ValueError(
            f"example {args.problem} sweeps {info['sweep_params']}, "
            f"not {args.param!r}"
        )
    values = tuple(float(v) for v in args.values.split(","))
    config = _config_from(args)
    curves = []
    for value in values:
        spec, shift = build_example(args.problem, config,
                                    **{args.param: value})
        curve, _, _, _ = control_along_mean(spec, shift, config)
        curves.append(curve)
    sweep = SweepResult(param=args.param, values=values,
                        ts=spec.grid.nodes, curves=tuple(curves))
    report = VerificationReport(
        title=f"sweep of {args.param} on example {args.problem}",
        records=(), artifacts={"sweep": sweep, "grid": spec.grid})
    files = emit_report(report, args.out,
                        prefix=f"sweep_{args.problem}_{args.param}",
                        figures=not args.no_figures)
    print(f"swept {args.param} over {values}")
    print("wrote: " + ", ".join(os.path.basename(f) for f in files))
    return 0


_GRID_DEFAULT = 1000


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mflq",
        description="Linear-quadratic control of mean-field jump diffusions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("problem",
                           help="problem file path or built-in id (5.1-5.4)")
        p.add_argument("--grid", type=int, default=_GRID_DEFAULT, metavar="M",
                       help="grid intervals for built-ins (default 1000)")
        p.add_argument("--substeps", type=int, default=1,
                       help="integrator substeps per interval (default 1)")
        p.add_argument("--seed", type=int, default=42,
                       help="base random seed (default 42)")
        p.add_argument("--paths", type=int, default=100_000, metavar="N",
                       help="Monte Carlo path count (default 100000)")
        p.add_argument("--delta", type=float, default=1.0,
                       help="jump second moment of example 5.1 (default 1)")
        p.add_argument("--out", default="out",
                       help="output directory (default ./out)")
        p.add_argument("--fd-derivatives", action="store_true",
                       help="accept finite-difference shift derivatives")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p = sub.add_parser("solve", help="integrate the Riccati pair")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check-s", help="definiteness check of the weights")
    common(p)
    p.add_argument("--alpha0-min", type=float, default=1e-8,
                   help="required uniform margin on R, R+Rbar (default 1e-8)")
    p.add_argument("--eig-tol", type=float, default=1e-10,
                   help="semidefiniteness slack (default 1e-10)")
    p.add_argument("--max-violations", type=int, default=8)
    p.set_defaults(func=cmd_check_s)

    p = sub.add_parser("shift", help="apply a cost shift and re-check")
    common(p)
    p.add_argument("--shift", default=None, metavar="FILE|canonical",
                   help="shift file, or 'canonical' for H = P, K = Pi")
    p.set_defaults(func=cmd_shift)

    p = sub.add_parser("simulate", help="Monte Carlo under a control")
    common(p)
    p.add_argument("--control", choices=("optimal", "zero"),
                   default="optimal")
    p.add_argument("--sample-paths", type=int, default=10,
                   help="paths stored in the sample CSV (default 10)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-example",
                       help="run a built-in verification pipeline")
    p.add_argument("example", choices=sorted(BUILTIN_EXAMPLES))
    common(p, problem=False)
    p.add_argument("--directions", type=int, default=8,
                   help="perturbation directions (default 8)")
    p.set_defaults(func=cmd_verify_example)

    p = sub.add_parser("sweep", help="parameter sweep of a built-in example")
    common(p)
    p.add_argument("--param", required=True,
                   help="parameter name (5.4: r or a; 5.1: delta)")
    p.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KNOWN_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
