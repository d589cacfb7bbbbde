"""Nonparametric maximum likelihood for the length-biased size distribution.

Observations are sorted sqrt-areas ``s_1 < ... < s_n``. A candidate biased
size CDF jumps only at the observations and is described either by its
probability vector ``p`` or by its values ``beta_j = Hb(s_j)``. With
``alpha_ij = g(s_i / s_j) / s_j`` the log-likelihood is

    l(beta) = (1/n) sum_i log D_i,   D_i = sum_j alpha_ij (beta_j - beta_{j-1}).

Three solvers are provided: EM on ``p``, the modified iterative convex
minorant algorithm (ICM) on ``phi = -l + beta_n`` over the monotone cone, and
a hybrid doing one ICM step followed by one EM step per iteration.
"""
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .bias import StepCDF

DENSE_LIMIT = 8000
BLOCK_ROWS = 256
MAX_HALVINGS = 60


@dataclass(frozen=True)
class _Block:
    rows: slice
    col_start: int
    data: np.ndarray


class AlphaMatrix:
    """Row-blocked storage of ``alpha`` with a staircase zero pattern.

    Row ``i`` can only be nonzero from column ``lower[i]`` on, the first ``j``
    with ``s_i / s_j <= s_max``. Below ``DENSE_LIMIT`` observations a single
    block holds everything; above it, blocks of ``BLOCK_ROWS`` rows each start
    at their first row's lower index.
    """

    def __init__(self, s, blocks, lower, n_perturbed=0):
        self.s = s
        self.blocks = blocks
        self.lower = lower
        self.n_perturbed = n_perturbed

    @property
    def n(self):
        return len(self.s)

    @property
    def stored_entries(self):
        return sum(b.data.size for b in self.blocks)

    def matvec(self, p):
        out = np.empty(self.n)
        for b in self.blocks:
            out[b.rows] = b.data @ p[b.col_start:]
        return out

    def rmatvec(self, w):
        out = np.zeros(self.n)
        for b in self.blocks:
            out[b.col_start:] += w[b.rows] @ b.data
        return out

    def diff_sq_rmatvec(self, w):
        """``sum_i (alpha_ij - alpha_i,j+1)^2 w_i`` for every column ``j``."""
        out = np.zeros(self.n)
        for b in self.blocks:
            c = b.col_start
            wb = np.ascontiguousarray(w[b.rows])
            kernels.diff_sq_rmatvec(b.data, wb, out[c:])
            if c > 0:
                # column c-1 is zero but its right neighbour is not
                out[c - 1] += wb @ (b.data[:, 0] ** 2)
        return out

    def toarray(self):
        dense = np.zeros((self.n, self.n))
        for b in self.blocks:
            dense[b.rows, b.col_start:] = b.data
        return dense


def _lower_indices(s, s_max):
    lo = np.searchsorted(s, s / s_max, side="left")
    lo = np.minimum(lo, np.arange(len(s)))
    # settle rounding in the ratio test so it matches the density's support
    while True:
        up = (lo < np.arange(len(s))) & (s / s[lo] > s_max)
        down = (lo > 0) & (s / s[np.maximum(lo - 1, 0)] <= s_max)
        if not (up.any() or down.any()):
            return lo
        lo = lo + up - down


def perturb_ties(s):
    """Nudge repeated values upward to the next float; returns (array, count)."""
    s = np.array(s, dtype=float)
    count = 0
    for k in range(1, len(s)):
        if s[k] <= s[k - 1]:
            s[k] = np.nextafter(s[k - 1], np.inf)
            count += 1
    return s, count


class SupportError(ValueError):
    """An observation that no size on the candidate grid can produce."""

    def __init__(self, value):
        self.value = value
        super().__init__(f"observation outside reference support: sqrt-area {value:.6g} "
                         f"(area {value * value:.6g}) has no admissible size")


def build_alpha(ref, s, perturb=True, dense_limit=DENSE_LIMIT, block_rows=BLOCK_ROWS):
    """Assemble ``alpha_ij = g(s_i / s_j) / s_j`` for the observations ``s``."""
    s = np.sort(np.asarray(s, dtype=float).reshape(-1))
    if len(s) == 0:
        raise ValueError("no observations")
    if s[0] <= 0 or not np.all(np.isfinite(s)):
        raise ValueError("observations must be positive and finite")
    n_perturbed = 0
    if perturb:
        s, n_perturbed = perturb_ties(s)
    n = len(s)
    s_max = float(ref.s_max_hat)
    lower = _lower_indices(s, s_max)
    if n <= dense_limit:
        spans = [(0, n)]
    else:
        spans = [(r, min(r + block_rows, n)) for r in range(0, n, block_rows)]
    blocks = []
    for r0, r1 in spans:
        c = int(lower[r0])
        cols = s[c:]
        data = ref.density(s[r0:r1, None] / cols[None, :]) / cols[None, :]
        blocks.append(_Block(slice(r0, r1), c, np.ascontiguousarray(data)))
    A = AlphaMatrix(s, blocks, lower, n_perturbed)
    row_max = np.zeros(n)
    for b in blocks:
        row_max[b.rows] = b.data.max(axis=1)
    bad = np.flatnonzero(row_max <= 0)
    if len(bad):
        i = bad[0]
        raise SupportError(float(s[i]))
    return A


def _probs(beta):
    return np.diff(beta, prepend=0.0)


def log_likelihood(A, beta):
    """``l(beta)``; ``-inf`` when some inner sum is not positive."""
    D = A.matvec(_probs(np.asarray(beta, dtype=float)))
    if np.any(D <= 0):
        return -np.inf
    return float(np.mean(np.log(D)))


def objective(A, beta):
    """``phi(beta) = -l(beta) + beta_n``, ``+inf`` outside the domain."""
    return -log_likelihood(A, beta) + float(beta[-1])


def _inner_sums(A, beta):
    D = A.matvec(_probs(beta))
    if np.any(D <= 0):
        raise ValueError("log-likelihood is -inf at this point")
    return D


def gradient_and_diag_hessian(A, beta, D=None):
    """Gradient and Hessian diagonal of ``phi = -l + beta_n``.

    ``D`` may pass precomputed inner sums for ``beta``.
    """
    beta = np.asarray(beta, dtype=float)
    if D is None:
        D = _inner_sums(A, beta)
    n = A.n
    v = A.rmatvec(1.0 / D) / n
    dl = v - np.append(v[1:], 0.0)
    grad = -dl
    grad[-1] += 1.0
    hess = A.diff_sq_rmatvec(1.0 / (D * D)) / n
    return grad, hess


def _loglik_from_sums(D):
    return float(np.mean(np.log(D))) if np.all(D > 0) else -np.inf


def em_step(A, p):
    """One EM update of the probability vector ``p``."""
    p = np.asarray(p, dtype=float)
    D = A.matvec(p)
    if np.any(D <= 0):
        raise ValueError("EM step with a zero denominator")
    out = p * A.rmatvec(1.0 / D) / A.n
    return out / out.sum()


def isotonic_ls(weights, targets):
    """Weighted least squares over nonnegative nondecreasing vectors.

    Pool-adjacent-violators gives the nondecreasing fit; clipping it at zero
    then yields the projection onto ``0 <= b_1 <= ... <= b_n``.
    """
    w = np.asarray(weights, dtype=float)
    y = np.asarray(targets, dtype=float)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return np.maximum(kernels.pava(y, w), 0.0)


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = "hybrid"
    eps_stop: float = 1e-4
    stable_iters: int = 10
    max_iters: int = 5000
    line_search_eps: float = 0.1
    hessian_ridge: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("em", "icm", "hybrid"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0 < self.line_search_eps < 0.5:
            raise ValueError("line_search_eps must lie in (0, 1/2)")
        if self.eps_stop <= 0 or self.stable_iters < 1 or self.max_iters < 1:
            raise ValueError("eps_stop, stable_iters and max_iters must be positive")
        if self.hessian_ridge <= 0:
            raise ValueError("hessian_ridge must be positive")


@dataclass
class FitState:
    beta: np.ndarray
    loglik: float
    iteration: int = 0
    converged: bool = False
    loglik_trace: list = field(default_factory=list)
    stalled: bool = False
    kkt_residual: float = float("nan")
    elapsed: float = 0.0
    sums: np.ndarray = field(default=None, repr=False)

    @property
    def probs(self):
        return _probs(self.beta)

    def to_stepcdf(self, support):
        return StepCDF.from_cdf_values(support, self.beta / self.beta[-1])


def make_state(A, beta):
    beta = np.asarray(beta, dtype=float)
    D = A.matvec(_probs(beta))
    ll = _loglik_from_sums(D)
    return FitState(beta, ll, loglik_trace=[ll], sums=D)


def initial_state(A):
    return make_state(A, np.arange(1, A.n + 1) / A.n)


def icm_step(A, state, cfg=SolverConfig()):
    """One modified-ICM iteration with the Armijo-type line search."""
    beta0 = state.beta
    D0 = state.sums if state.sums is not None else _inner_sums(A, beta0)
    eps = cfg.line_search_eps
    grad, hess = gradient_and_diag_hessian(A, beta0, D0)
    w = hess + cfg.hessian_ridge
    cand = isotonic_ls(w, beta0 - grad / w)
    phi0 = -_loglik_from_sums(D0) + beta0[-1]
    step = cand - beta0

    def evaluate(z):
        D = A.matvec(_probs(z))
        return -_loglik_from_sums(D) + z[-1], grad @ (z - beta0), D

    phi_z, slope_z, D_z = evaluate(cand)
    z = cand
    stalled = False
    if not phi_z < phi0 + eps * slope_z:
        lam, s = 1.0, 0.5
        halvings = 0
        while True:
            too_short = phi_z < phi0 + (1 - eps) * slope_z
            too_long = phi_z > phi0 + eps * slope_z
            if not (too_short or too_long):
                break
            if halvings >= MAX_HALVINGS:
                stalled = True
                break
            if too_short:
                lam += s
            if too_long:
                lam -= s
            z = beta0 + lam * step
            s /= 2
            halvings += 1
            phi_z, slope_z, D_z = evaluate(z)
        if stalled and not phi_z <= phi0:
            z, D_z = beta0, D0
    ll = _loglik_from_sums(D_z)
    return FitState(z, ll, state.iteration + 1, False, state.loglik_trace + [ll],
                    stalled=state.stalled or stalled, sums=D_z)


def _em_iteration(A, state):
    beta = state.beta
    p = _probs(beta) / beta[-1]
    D = state.sums / beta[-1] if state.sums is not None else A.matvec(p)
    if np.any(D <= 0):
        raise ValueError("EM step with a zero denominator")
    p = p * A.rmatvec(1.0 / D) / A.n
    p /= p.sum()
    new = np.cumsum(p)
    new[-1] = 1.0
    D = A.matvec(p)
    ll = _loglik_from_sums(D)
    return FitState(new, ll, state.iteration + 1, False, state.loglik_trace + [ll],
                    stalled=state.stalled, sums=D)


def _hybrid_iteration(A, state, cfg):
    mid = icm_step(A, state, cfg)
    out = _em_iteration(A, replace(mid, iteration=state.iteration))
    out.loglik_trace = state.loglik_trace + [out.loglik]
    return out


def kkt_residual(A, beta):
    """Largest violation of ``v_j <= 1`` everywhere and ``v_j = 1`` on the support.

    ``v_j = (1/n) sum_i alpha_ij / D_i``; at the maximiser over probability
    vectors these hold exactly.
    """
    p = _probs(beta)
    D = A.matvec(p)
    v = A.rmatvec(1.0 / D) / A.n
    over = np.max(np.maximum(v - 1.0, 0.0))
    support = p > 1e-10 * p.max()
    gap = np.max(np.abs(v[support] - 1.0)) if support.any() else 0.0
    return float(max(over, gap))


def fit(A, cfg=SolverConfig(), beta0=None):
    """Run the configured solver from ``beta = (1/n, 2/n, ..., 1)``.

    Stops once the largest change in ``beta`` stays below ``eps_stop`` for
    ``stable_iters`` consecutive iterations, or after ``max_iters``. The
    returned ``beta`` is scaled so that ``beta_n = 1``.
    """
    t0 = time.perf_counter()
    state = initial_state(A) if beta0 is None else make_state(A, beta0)
    if cfg.algorithm == "em":
        step = _em_iteration
    elif cfg.algorithm == "icm":
        step = lambda A_, st: icm_step(A_, st, cfg)  # noqa: E731
    else:
        step = lambda A_, st: _hybrid_iteration(A_, st, cfg)  # noqa: E731
    calm = 0
    converged = False
    while state.iteration < cfg.max_iters:
        prev = state.beta
        state = step(A, state)
        if np.max(np.abs(state.beta - prev)) < cfg.eps_stop:
            calm += 1
            if calm >= cfg.stable_iters:
                converged = True
                break
        else:
            calm = 0
    beta = np.clip(state.beta / state.beta[-1], 0.0, 1.0)
    beta = np.maximum.accumulate(beta)
    beta[-1] = 1.0
    state.beta = beta
    state.loglik = log_likelihood(A, beta)
    state.converged = converged
    state.kkt_residual = kkt_residual(A, beta)
    state.sums = None
    state.elapsed = time.perf_counter() - t0
    return state


def uniqueness_diagnostic(A, rel_tol=1e-10):
    """Numerical rank of ``alpha``; full rank guarantees a unique maximiser."""
    M = A.toarray()
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > rel_tol * sv[0])) if sv[0] > 0 else 0
    return rank == A.n, rank
