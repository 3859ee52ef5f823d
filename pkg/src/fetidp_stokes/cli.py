"""Command line entry point: ``solve``, ``table`` and ``convergence``.

Exit status: 0 when every solve converged, 2 when one did not, 1 on a
configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (TABLE_SETTINGS, CaseConfig, dump_matrices, emit, preset, run_case, run_table,
                    variant_config)
from .ddspace import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2

# default variant per element for convergence studies
CONVERGENCE_VARIANT = {"th": ("TaylorHood", "full"), "dp": ("MacroDP", "empty")}


def _format_from_path(path, fmt):
    if fmt:
        return fmt
    suffix = Path(path).suffix.lower()
    return {".json": "json", ".md": "markdown"}.get(suffix, "csv")


def _summary(r) -> str:
    status = "converged" if r.converged else "NOT converged"
    extra = "  [no scalable bound]" if r.config.no_bound else ""
    return (f"{r.config.label}: {status} in {r.iterations} iterations, "
            f"lambda in [{r.lambda_min:.4g}, {r.lambda_max:.4g}], "
            f"|u-u_h|_H1={r.err_u_h1:.3e}, ||p-p_h||={r.err_p_l2:.3e}{extra}")


def cmd_solve(args) -> int:
    cfg = CaseConfig(element=args.element, pgamma=args.pgamma, primal=args.primal, precond=args.precond,
                     nsub=args.nsub, m=args.hh, rtol=args.rtol, maxit=args.maxit, li05=args.li05,
                     solver=args.solver)
    result = run_case(cfg)
    print(_summary(result))
    if args.out:
        emit([result], _format_from_path(args.out, args.format), args.out)
    if args.dump:
        for f in dump_matrices(cfg, args.dump):
            print(f"wrote {f}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_table(args) -> int:
    configs = preset(args.preset)
    if args.max_nsub or args.max_hh:
        configs = [c for c in configs if (not args.max_nsub or c.nsub <= args.max_nsub)
                   and (not args.max_hh or c.m <= args.max_hh)]
    results = run_table(configs, repeat=args.repeat, workers=args.workers)
    fmt = _format_from_path(args.out, args.format) if args.out else "markdown"
    text = emit(results, fmt, args.out)
    if not args.out:
        print(text)
    return EXIT_OK if all(r.converged for r in results) else EXIT_NOT_CONVERGED


def cmd_convergence(args) -> int:
    key = "dp" if args.element.lower() in ("dp", "macrodp") else "th"
    element, pgamma = CONVERGENCE_VARIANT[key]
    configs = [variant_config(element, pgamma, args.primal, args.precond, args.nsub, args.hh0 * 2**k)
               for k in range(args.levels)]
    results = run_table(configs, workers=args.workers)
    print(f"{'H/h':>5} {'h':>10} {'|u-u_h|_H1':>12} {'ratio':>6} {'||p-p_h||':>12} {'iters':>6}")
    prev = None
    for r in results:
        ratio = f"{prev / r.err_u_h1:6.2f}" if prev else "     -"
        print(f"{r.config.m:5d} {1 / (r.config.nsub * r.config.m):10.5f} {r.err_u_h1:12.4e} {ratio} "
              f"{r.err_p_l2:12.4e} {r.iterations:6d}")
        prev = r.err_u_h1
    if args.out:
        emit(results, _format_from_path(args.out, args.format), args.out)
    return EXIT_OK if all(r.converged for r in results) else EXIT_NOT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fetidp-stokes", description="FETI-DP experiments for 2D Stokes.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one configuration")
    s.add_argument("--element", required=True, choices=["dp", "th"])
    s.add_argument("--pgamma", required=True, choices=["full", "one", "empty"])
    s.add_argument("--primal", default="corner", choices=["corner", "corner-edge"])
    s.add_argument("--precond", default="lumped", choices=["lumped", "dirichlet", "none"])
    s.add_argument("--nsub", type=int, default=4, help="subdomains per direction")
    s.add_argument("--hh", type=int, default=8, help="H/h, cells per subdomain side")
    s.add_argument("--li05", action="store_true", help="move subdomain constant pressures to the coarse problem")
    s.add_argument("--solver", default="schur", choices=["schur", "monolithic"])
    s.add_argument("--rtol", type=float, default=1e-6)
    s.add_argument("--maxit", type=int, default=500)
    s.add_argument("--out")
    s.add_argument("--format", choices=["csv", "json", "markdown"])
    s.add_argument("--dump", metavar="DIR")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("table", help="run a table preset")
    t.add_argument("--preset", required=True, choices=sorted(TABLE_SETTINGS))
    t.add_argument("--out")
    t.add_argument("--format", choices=["csv", "json", "markdown"])
    t.add_argument("--repeat", type=int, default=1)
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--max-nsub", type=int, default=None, help="skip rows with more subdomains per direction")
    t.add_argument("--max-hh", type=int, default=None, help="skip rows with larger H/h")
    t.set_defaults(func=cmd_table)

    c = sub.add_parser("convergence", help="discretization error study")
    c.add_argument("--element", default="th", choices=["dp", "th"])
    c.add_argument("--levels", type=int, default=4)
    c.add_argument("--nsub", type=int, default=2)
    c.add_argument("--hh0", type=int, default=4, help="H/h of the coarsest level")
    c.add_argument("--primal", default="corner-edge", choices=["corner", "corner-edge"])
    c.add_argument("--precond", default="dirichlet", choices=["lumped", "dirichlet", "none"])
    c.add_argument("--workers", type=int, default=None)
    c.add_argument("--out")
    c.add_argument("--format", choices=["csv", "json", "markdown"])
    c.set_defaults(func=cmd_convergence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
