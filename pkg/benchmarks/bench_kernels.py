"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel runs on the same inputs under both implementations; outputs are
checked for agreement before timings are reported. Without a built
extension only the fallback column is filled.
"""
import argparse
import timeit

import numpy as np

from sizeunfold import _fallback, geometry
from sizeunfold.rng import make_rng

try:
    from sizeunfold import _core
except ImportError:
    _core = None


def case_section_areas(scale):
    K = geometry.dodecahedron()
    n = int(2e5 * scale)
    normals, offsets, _ = geometry.sample_iur_planes(K, make_rng(1), n)
    verts, he_from, he_to, ptr = K._kernel_args()
    local = np.ascontiguousarray(offsets - normals @ K.centroid)
    args = (verts, he_from, he_to, ptr, np.ascontiguousarray(normals), local)
    return f"{n} planes", lambda impl: impl.section_areas(*args)


def case_pava(scale):
    n = int(2e5 * scale)
    rng = np.random.default_rng(2)
    y = np.cumsum(rng.normal(0.0, 1.0, n)) + rng.normal(0.0, 20.0, n)
    w = rng.uniform(0.1, 2.0, n)
    return f"n = {n}", lambda impl: impl.pava(y, w)


def case_diff_sq_rmatvec(scale):
    r = m = int(3000 * scale ** 0.5)
    rng = np.random.default_rng(3)
    a = rng.random((r, m))
    w = rng.random(r)

    def run(impl):
        out = np.zeros(m)
        impl.diff_sq_rmatvec(a, w, out)
        return out

    return f"{r} x {m}", run


def case_suffix_l1_sweep(scale):
    m = int(200 * scale ** 0.5)
    r = int(4e5 * scale)
    rng = np.random.default_rng(4)
    widths = rng.random(r) * 1e-4
    origin = rng.integers(0, m + 1, r).astype(np.int64)
    step = np.append(rng.dirichlet(np.ones(m)) * m / r, 1.0 / r)
    inv_mass = 1.0 / np.cumsum(rng.random(m)[::-1])[::-1]

    def run(impl):
        total = np.zeros(m)
        impl.suffix_l1_sweep(widths, origin, step, inv_mass, total)
        return total

    return f"{m} suffixes, {r} intervals", run


CASES = {
    "section_areas": case_section_areas,
    "pava": case_pava,
    "diff_sq_rmatvec": case_diff_sq_rmatvec,
    "suffix_l1_sweep": case_suffix_l1_sweep,
}


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions (best is reported)")
    parser.add_argument("--scale", type=float, default=1.0, help="multiply problem sizes")
    parser.add_argument("--only", choices=sorted(CASES), nargs="+", help="run a subset")
    args = parser.parse_args(argv)

    print(f"compiled core: {'available' if _core is not None else 'not built'}")
    print(f"{'kernel':<18} {'size':<28} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name in args.only or CASES:
        size, run = CASES[name](args.scale)
        t_py = best_time(lambda: run(_fallback), args.repeat)
        if _core is None:
            print(f"{name:<18} {size:<28} {1e3 * t_py:>10.2f} {'-':>10} {'-':>8}")
            continue
        ref, got = run(_fallback), run(_core)
        if not np.allclose(ref, got, rtol=1e-9, atol=1e-12):
            raise SystemExit(f"{name}: implementations disagree")
        t_c = best_time(lambda: run(_core), args.repeat)
        print(f"{name:<18} {size:<28} {1e3 * t_py:>10.2f} {1e3 * t_c:>10.2f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
