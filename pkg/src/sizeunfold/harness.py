"""Experiment runner for simulation studies and single estimations.

A replication forward-samples ``n`` sqrt-areas, estimates the biased size
CDF and the size CDF, and records sup-norm errors against the closed forms.
Synthetic data are drawn with a reference sample that is independent of the
one used for estimation, so the estimator never sees the exact law that
generated its input.

Random streams: the estimation reference uses ``(reference_seed, 1)``, the
data-generation reference ``(reference_seed, 2)`` and replication ``r`` of a
run with seed ``seed`` uses ``(seed, 3, r)``; see ``sizeunfold.rng``.
"""
import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bias, geometry, refdist, regularize, unfold
from .rng import make_rng

STREAM_REF_FIT = 1
STREAM_REF_GEN = 2
STREAM_DATA = 3
DEFAULT_REFERENCE_SAMPLES = 10**6
ERROR_GRID = 10**4

TABLE_SHAPES = {1: "dodecahedron", 2: "cube", 3: "tetrahedron"}
TABLE_SIZES = (1000, 2000, 5000, 10000)
TABLE4_SIZES = (1000, 2000, 5000)
FAMILIES = {"exponential": "exponential", "lognormal": "lognormal(2,0.5)"}


def resolve_reference_shape(name):
    """Shape object for sampling: ``ball`` is the exact unit-ball law."""
    if name == "ball":
        return refdist.AnalyticBall()
    if name == "ball-mesh":
        return geometry.ball()
    return geometry.resolve_shape(name)


def shape_key(K):
    return K.key if isinstance(K, refdist.AnalyticBall) else K.content_hash()


def reference_cache_path(cache_dir, shape_name, K, n_samples, seed, stream):
    tag = f"{shape_key(K)}:{n_samples}:{seed}:{stream}:{refdist.FORMAT_VERSION}"
    digest = hashlib.sha256(tag.encode()).hexdigest()[:16]
    base = os.path.splitext(os.path.basename(shape_name))[0]
    return os.path.join(cache_dir, f"ref-{base}-{digest}.szuf")


def build_reference(K, n_samples, seed, stream=STREAM_REF_FIT, grid_size=refdist.DEFAULT_GRID_SIZE):
    sample = refdist.sample_reference(K, n_samples, make_rng(seed, stream))
    return refdist.fit_density(sample, grid_size)


def get_reference(shape_name, n_samples=DEFAULT_REFERENCE_SAMPLES, seed=0,
                  stream=STREAM_REF_FIT, cache_dir=None):
    """Fitted reference for a shape, reusing a cache file when one matches.

    A cached file is accepted only if its stored shape digest equals the
    digest of the shape being requested.
    """
    K = resolve_reference_shape(shape_name)
    path = None
    if cache_dir is not None:
        path = reference_cache_path(cache_dir, shape_name, K, n_samples, seed, stream)
        if os.path.exists(path):
            ref = refdist.load_reference(path)
            if ref.key == (shape_key(K) if not isinstance(K, refdist.AnalyticBall) else ""):
                return ref
    ref = build_reference(K, n_samples, seed, stream)
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        refdist.save_reference(ref, path)
    return ref


def sup_norm_error(step, cdf, grid_points=ERROR_GRID, upper=None):
    """``sup |step - cdf|`` for a StepCDF against a continuous CDF.

    Checked at both one-sided limits of every jump and on a uniform grid
    over ``[0, upper]`` (default: 1.5 times the largest jump).
    """
    x = step.support
    if upper is None:
        upper = 1.5 * float(x[-1])
    grid = np.linspace(0.0, upper, grid_points)
    at_jumps = np.maximum(np.abs(step(x) - cdf(x)), np.abs(step.left_limit(x) - cdf(x)))
    on_grid = np.abs(step(grid) - cdf(grid))
    return float(max(at_jumps.max(), on_grid.max()))


def nearest_rank(values, q):
    """Nearest-rank quantile: the ``ceil(q N)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    k = max(1, math.ceil(q * len(v)))
    return float(v[k - 1])


@dataclass
class ExperimentConfig:
    shape: str = "dodecahedron"
    size_family: bias.ParametricSize = field(default_factory=bias.ParametricSize.exponential)
    n: int = 1000
    replications: int = 100
    seed: int = 0
    solver: unfold.SolverConfig = field(default_factory=unfold.SolverConfig)
    reference_samples: int = DEFAULT_REFERENCE_SAMPLES
    generation_samples: int = DEFAULT_REFERENCE_SAMPLES
    reference_seed: int = 0
    n_quantiles: int = regularize.DEFAULT_QUANTILES
    truncation: object = "auto"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.size_family, str):
            self.size_family = bias.ParametricSize.parse(self.size_family)
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    errors_b: np.ndarray
    errors_h: np.ndarray
    t_hat: np.ndarray
    iterations: np.ndarray
    fit_seconds: np.ndarray
    converged: np.ndarray

    def summary(self, which="b"):
        e = self.errors_b if which == "b" else self.errors_h
        return float(np.mean(e)), nearest_rank(e, 0.025), nearest_rank(e, 0.975)

    @property
    def mean_b(self):
        return float(np.mean(self.errors_b))

    @property
    def mean_h(self):
        return float(np.mean(self.errors_h))

    @property
    def median_b(self):
        return float(np.median(self.errors_b))

    @property
    def mean_iterations(self):
        return float(np.mean(self.iterations))

    @property
    def mean_seconds(self):
        return float(np.mean(self.fit_seconds))


def run_replication(cfg, ref_fit, ref_gen, rep):
    """One simulated data set: sample, estimate, score."""
    H = cfg.size_family
    Hb = bias.length_bias(H)
    s = bias.forward_sample(ref_gen, H, cfg.n, make_rng(cfg.seed, STREAM_DATA, rep))
    A = unfold.build_alpha(ref_fit, s)
    res = regularize.estimate_H(A, ref_fit, A.s, cfg.solver, cfg.truncation, cfg.n_quantiles)
    return {
        "error_b": sup_norm_error(res.Hb_hat, Hb.cdf),
        "error_h": sup_norm_error(res.H_hat, H.cdf),
        "t_hat": res.t_hat,
        "iterations": res.fit.iteration,
        "fit_seconds": res.fit.elapsed,
        "converged": res.fit.converged,
    }


def run_experiment(cfg, ref_fit=None, ref_gen=None, cache_dir=None, progress=None):
    """Run ``cfg.replications`` replications and aggregate them."""
    if ref_fit is None:
        ref_fit = get_reference(cfg.shape, cfg.reference_samples, cfg.reference_seed,
                                STREAM_REF_FIT, cache_dir)
    if ref_gen is None:
        ref_gen = get_reference(cfg.shape, cfg.generation_samples, cfg.reference_seed,
                                STREAM_REF_GEN, cache_dir)

    def one(rep):
        out = run_replication(cfg, ref_fit, ref_gen, rep)
        if progress is not None:
            progress(rep, out)
        return out

    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(one, reps))
    else:
        rows = [one(r) for r in reps]

    def col(name, dtype=float):
        return np.array([r[name] for r in rows], dtype=dtype)

    return ExperimentReport(cfg, col("error_b"), col("error_h"), col("t_hat"),
                            col("iterations", int), col("fit_seconds"), col("converged", bool))


def compare_solvers(shape, size_family, n, runs, seed=0, algorithms=("icm", "hybrid"),
                    ref_fit=None, ref_gen=None, eps_stop=1e-4, cache_dir=None,
                    reference_samples=DEFAULT_REFERENCE_SAMPLES):
    """Mean fit time and iteration count per algorithm on shared data sets.

    Only the solver call is timed; building the alpha matrix is excluded.
    """
    H = bias.ParametricSize.parse(size_family) if isinstance(size_family, str) else size_family
    if ref_fit is None:
        ref_fit = get_reference(shape, reference_samples, 0, STREAM_REF_FIT, cache_dir)
    if ref_gen is None:
        ref_gen = get_reference(shape, reference_samples, 0, STREAM_REF_GEN, cache_dir)
    stats = {a: {"seconds": [], "iterations": [], "loglik": []} for a in algorithms}
    for r in range(runs):
        s = bias.forward_sample(ref_gen, H, n, make_rng(seed, STREAM_DATA, r))
        A = unfold.build_alpha(ref_fit, s)
        for a in algorithms:
            t0 = time.perf_counter()
            st = unfold.fit(A, unfold.SolverConfig(algorithm=a, eps_stop=eps_stop))
            stats[a]["seconds"].append(time.perf_counter() - t0)
            stats[a]["iterations"].append(st.iteration)
            stats[a]["loglik"].append(st.loglik)
    return {a: {k: float(np.mean(v)) for k, v in d.items()} for a, d in stats.items()}


def estimate_areas(areas, ref, cfg=unfold.SolverConfig(), truncation="auto",
                   n_quantiles=regularize.DEFAULT_QUANTILES):
    """End-to-end estimate from raw section areas; returns a JSON-ready dict."""
    areas = np.asarray(areas, dtype=float)
    if len(areas) == 0:
        raise ValueError("no areas given")
    A = unfold.build_alpha(ref, np.sqrt(areas))
    res = regularize.estimate_H(A, ref, A.s, cfg, truncation, n_quantiles)
    st = res.fit
    trace = st.loglik_trace
    return {
        "n": int(A.n),
        "support": A.s.tolist(),
        "hb_masses": res.Hb_hat.probs.tolist(),
        "t_hat": res.t_hat,
        "h_support": res.H_hat.support.tolist(),
        "h_masses": res.H_hat.probs.tolist(),
        "loglik": st.loglik,
        "loglik_trace": {"first": trace[0], "last": trace[-1], "length": len(trace)},
        "iterations": st.iteration,
        "converged": bool(st.converged),
        "stalled": bool(st.stalled),
        "kkt_residual": st.kkt_residual,
        "ties_perturbed": int(A.n_perturbed),
        "fit_seconds": st.elapsed,
        "solver": cfg.algorithm,
    }
