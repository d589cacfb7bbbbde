"""Command line interface: ``sizeunfold refdist|forward|estimate|reproduce``.

Every option can also come from a JSON file given with ``--config``; keys
are the option names with dashes replaced by underscores. Flags given on the
command line take precedence over the file.
"""
import argparse
import csv
import json
import math
import os
import re
import sys

import numpy as np

from . import bias, harness, refdist, unfold
from .rng import make_rng


class InputError(ValueError):
    """Bad user input, reported without a traceback."""


def _solver_config(args):
    return unfold.SolverConfig(algorithm=args.solver, eps_stop=args.eps_stop,
                               max_iters=args.max_iters)


def read_areas(path, with_lines=False):
    """One positive area per line; blank lines and ``#`` comments are skipped.

    With ``with_lines`` the 1-based line number of each area is returned too.
    """
    areas, lines = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip().rstrip(",")
            if not text:
                continue
            try:
                a = float(text)
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not (math.isfinite(a) and a > 0):
                raise InputError(f"{path}:{lineno}: area must be positive and finite, got {text}")
            areas.append(a)
            lines.append(lineno)
    if not areas:
        raise InputError(f"{path}: no areas found")
    if with_lines:
        return np.array(areas), np.array(lines)
    return np.array(areas)


def write_areas(path, areas):
    with open(path, "w") as fh:
        for a in np.asarray(areas, dtype=float).tolist():
            fh.write(f"{a!r}\n")


def size_law(text):
    """``point(c)`` for a fixed size, otherwise a parametric family."""
    m = re.fullmatch(r"\s*point\(\s*([^)]+?)\s*\)\s*", text)
    if m:
        c = float(m.group(1))
        if not c > 0:
            raise InputError(f"point size must be positive, got {m.group(1)}")
        return bias.StepCDF.point_mass(c)
    return bias.ParametricSize.parse(text)


def _reference(args, stream=harness.STREAM_REF_FIT):
    if getattr(args, "reference", None):
        ref = refdist.load_reference(args.reference)
        if not ref.fitted:
            ref = refdist.fit_density(ref)
        if args.shape:
            K = harness.resolve_reference_shape(args.shape)
            expected = harness.shape_key(K) if not isinstance(K, refdist.AnalyticBall) else ""
            if ref.key and ref.key != expected:
                raise InputError(f"{args.reference}: cache was built for a different shape than {args.shape!r}")
        return ref
    if not args.shape:
        raise InputError("either --reference or --shape is required")
    return harness.get_reference(args.shape, args.ref_n, args.ref_seed, stream, args.cache_dir)


def cmd_refdist(args):
    if args.n < refdist.MIN_KDE_SAMPLES:
        print(f"warning: --n {args.n} is below the {refdist.MIN_KDE_SAMPLES} samples needed "
              "for the density fit; nothing written", file=sys.stderr)
        return 1
    K = harness.resolve_reference_shape(args.shape)
    sample = refdist.sample_reference(K, args.n, make_rng(args.seed), workers=args.workers)
    ref = refdist.fit_density(sample, args.grid_size)
    out = args.out or f"{os.path.splitext(os.path.basename(args.shape))[0]}.szuf"
    refdist.save_reference(ref, out)
    csv_path = args.csv or os.path.splitext(out)[0] + ".csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "density", "cdf"])
        for row in zip(ref.grid, ref.density_values, ref.cdf_values):
            w.writerow([f"{v!r}" for v in map(float, row)])
    print(f"wrote {out} ({ref.n_samples} samples, bandwidth {ref.bandwidth:.4g}) and {csv_path}")
    return 0


def cmd_forward(args):
    ref = _reference(args, harness.STREAM_REF_GEN)
    H = size_law(args.size)
    root = bias.forward_sample(ref, H, args.n, make_rng(args.seed, harness.STREAM_DATA))
    out = args.out or "areas.csv"
    write_areas(out, root * root)
    print(f"wrote {args.n} areas to {out}")
    return 0


def cmd_estimate(args):
    if not args.areas:
        raise InputError("--areas is required")
    areas, lines = read_areas(args.areas, with_lines=True)
    ref = _reference(args)
    trunc = args.truncation if args.truncation == "auto" else float(args.truncation)
    try:
        result = harness.estimate_areas(areas, ref, _solver_config(args), trunc, args.n_quantiles)
    except unfold.SupportError as exc:
        row = lines[np.argmin(np.abs(np.sqrt(areas) - exc.value))]
        raise InputError(f"{args.areas}:{row}: {exc}") from None
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out} (t_hat {result['t_hat']:.6g}, converged {result['converged']})")
    else:
        print(text)
    return 0


def _table_rows(args):
    table = int(args.table)
    sizes = args.sizes or (harness.TABLE4_SIZES if table == 4 else harness.TABLE_SIZES)
    if table == 4:
        header = ["n", "icm_seconds", "icm_iterations", "hybrid_seconds", "hybrid_iterations"]
        rows = []
        for n in sizes:
            res = harness.compare_solvers("dodecahedron", "lognormal(2,0.5)", n, args.reps,
                                          seed=args.seed, eps_stop=args.eps_stop,
                                          cache_dir=args.cache_dir, reference_samples=args.ref_n)
            rows.append([n, res["icm"]["seconds"], res["icm"]["iterations"],
                         res["hybrid"]["seconds"], res["hybrid"]["iterations"]])
            print(*rows[-1], sep="\t", file=sys.stderr)
        return header, rows
    shape = harness.TABLE_SHAPES[table]
    header = ["n", "H", "mean_b", "q025_b", "q975_b", "mean_h", "q025_h", "q975_h"]
    rows = []
    for n in sizes:
        for name, family in harness.FAMILIES.items():
            cfg = harness.ExperimentConfig(
                shape=shape, size_family=family, n=n, replications=args.reps, seed=args.seed,
                solver=_solver_config(args), reference_samples=args.ref_n,
                reference_seed=args.ref_seed, workers=args.workers)
            rep = harness.run_experiment(cfg, cache_dir=args.cache_dir)
            rows.append([n, name, *rep.summary("b"), *rep.summary("h")])
            print(*rows[-1], sep="\t", file=sys.stderr)
    return header, rows


def cmd_reproduce(args):
    header, rows = _table_rows(args)
    out = args.out or f"table{args.table}.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    print(f"wrote {out}")
    return 0


def add_common(p):
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--shape", help="cube, dodecahedron, tetrahedron, ball, ball-mesh or an OFF file")
    p.add_argument("--n", type=int, help="number of samples or observations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path")
    p.add_argument("--reps", type=int, default=100, help="replications per table row")
    p.add_argument("--solver", choices=("em", "icm", "hybrid"), default="hybrid")
    p.add_argument("--eps-stop", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--reference", help="reference cache file")
    p.add_argument("--ref-n", type=int, default=harness.DEFAULT_REFERENCE_SAMPLES,
                   help="reference sample size when generating one")
    p.add_argument("--ref-seed", type=int, default=0)
    p.add_argument("--cache-dir", help="directory for generated reference caches")
    p.add_argument("--workers", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="sizeunfold", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {}

    p = sub.add_parser("refdist", help="build a reference section distribution")
    add_common(p)
    p.add_argument("--grid-size", type=int, default=refdist.DEFAULT_GRID_SIZE)
    p.add_argument("--csv", help="density CSV path (default: next to --out)")
    p.set_defaults(func=cmd_refdist, n=10**6, shape="dodecahedron")
    parser.commands["refdist"] = p

    p = sub.add_parser("forward", help="simulate observed section areas")
    add_common(p)
    p.add_argument("--size", default="exponential", help="exponential, lognormal(mu,sigma), gamma(k,scale) or point(c)")
    p.set_defaults(func=cmd_forward, n=1000)
    parser.commands["forward"] = p

    p = sub.add_parser("estimate", help="estimate size distributions from areas")
    add_common(p)
    p.add_argument("--areas", help="CSV file, one area per line")
    p.add_argument("--truncation", default="auto", help="'auto' or a fixed cutoff (0 disables)")
    p.add_argument("--n-quantiles", type=int, default=4096)
    p.set_defaults(func=cmd_estimate)
    parser.commands["estimate"] = p

    p = sub.add_parser("reproduce", help="rerun a simulation table")
    add_common(p)
    p.add_argument("--table", type=int, choices=(1, 2, 3, 4), required=False)
    p.add_argument("--sizes", type=int, nargs="+", help="restrict to these sample sizes")
    p.set_defaults(func=cmd_reproduce)
    parser.commands["reproduce"] = p
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            conf = {k.replace("-", "_"): v for k, v in json.load(fh).items()}
        # re-parse so that explicit flags override the file
        parser.commands[args.command].set_defaults(**conf)
        args = parser.parse_args(argv)
    if args.command == "reproduce" and args.table is None:
        parser.error("reproduce needs --table")
    return args


def main(argv=None):
    args = parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
