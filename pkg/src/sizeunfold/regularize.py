"""Truncation de-biasing of the biased-size MLE.

Plugging the MLE of ``Hb`` straight into the inverse length-bias relation
weights each atom by ``1 / s`` and lets spurious mass near zero dominate. The
estimator here discards the biased mass below a cutoff ``t`` first, with
``t`` chosen among the observations so that the sqrt-area law induced by the
truncated estimate is closest in L1 to the empirical CDF of the data.

Convention: truncation at ``t`` keeps atoms at ``s >= t``.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels, unfold
from .bias import StepCDF, debias

MIN_SURVIVING_MASS = 1e-9
DEFAULT_QUANTILES = 4096
MERGE_MASS = 1e-5
MAX_ATOMS = 1000


@dataclass(frozen=True, eq=False)
class TruncationResult:
    t_hat: float
    H_hat: StepCDF
    Hb_hat: StepCDF
    l1_t: np.ndarray
    l1_values: np.ndarray
    fit: object = None

    @property
    def l1_profile(self):
        return list(zip(self.l1_t.tolist(), self.l1_values.tolist()))


def truncate_biased(Hb, t):
    """Drop the mass of ``Hb`` strictly below ``t`` and renormalise."""
    keep = Hb.support >= t
    mass = Hb.probs[keep].sum()
    if not mass > 0:
        raise ValueError(f"truncation removes all mass (t = {t:g})")
    return StepCDF(Hb.support[keep], Hb.probs[keep] / mass)


def debias_truncated(Hb, t):
    """Size CDF estimate from ``Hb`` truncated at ``t``."""
    return debias(truncate_biased(Hb, t))


def reference_quantiles(ref, n_quantiles=DEFAULT_QUANTILES):
    """Support points of a step approximation of the reference sqrt-area CDF.

    For a sample of size ``N`` the ``k``-th point is the order statistic at
    rank ``ceil(k N / m)``, so the thinned CDF differs from the empirical one
    by at most ``1/m``. ``n_quantiles=None`` keeps the whole sample. For the
    analytic ball, midpoint quantiles of the exact law are used.
    """
    if hasattr(ref, "sqrt_samples"):
        x = ref.sqrt_samples
        if n_quantiles is None or n_quantiles >= len(x):
            return x
        ranks = np.ceil(np.arange(1, n_quantiles + 1) * len(x) / n_quantiles).astype(np.int64)
        return x[ranks - 1]
    m = n_quantiles or DEFAULT_QUANTILES
    return ref.quantile((np.arange(m) + 0.5) / m)


def merge_light_atoms(atoms, w, budget, max_atoms=None):
    """Fold the lightest atoms, up to total mass ``budget``, into heavier ones.

    If more than ``max_atoms`` atoms would remain, the lightest ones are
    folded as well until ``max_atoms`` are left. Each folded atom moves its mass to the nearest kept atom above it (below,
    past the last kept atom), so suffix sums over kept atoms stay exact at the
    kept atoms. Moving mass ``w`` by ``d`` shifts an induced CDF by at most
    ``w * d * E[z]`` in L1 before renormalisation.
    """
    over = 0 if max_atoms is None else len(atoms) - max_atoms
    if (budget <= 0 and over <= 0) or len(atoms) < 2:
        return atoms, w
    order = np.argsort(w, kind="stable")
    n_light = max(int(np.count_nonzero(np.cumsum(w[order]) <= budget)), over)
    light = order[:n_light]
    if len(light) == 0:
        return atoms, w
    keep = np.ones(len(atoms), dtype=bool)
    keep[light] = False
    kept = np.flatnonzero(keep)
    target = np.minimum(np.searchsorted(kept, np.arange(len(atoms))), len(kept) - 1)
    return atoms[kept], np.bincount(target, weights=w, minlength=len(kept))


def l1_distances(Hb, z, s, merge_mass=0.0, max_atoms=None):
    """L1 distance between induced and empirical CDFs for every suffix of atoms.

    Entry ``k`` corresponds to keeping the positive-mass atoms ``k, k+1, ...``
    of ``Hb``. With reference quantiles ``z`` the induced CDF is a step
    function jumping by ``w_j / len(z)`` at each ``lam_j * z_q``; the
    empirical CDF jumps by ``1/n`` at each observation. Sorting all jump
    locations once, both are constant between consecutive jumps, so the
    integral is an exact finite sum. The cost grows with the square of the
    number of atoms, so ``merge_mass`` and ``max_atoms`` first fold light
    atoms into their neighbours (see ``merge_light_atoms``); the returned
    atoms are the kept ones.
    """
    pos = Hb.probs > 0
    atoms, w = merge_light_atoms(Hb.support[pos], Hb.probs[pos], merge_mass, max_atoms)
    m, nz = len(atoms), len(z)
    mass = np.cumsum(w[::-1])[::-1]
    s = np.asarray(s, dtype=float)
    locs = np.concatenate([np.outer(atoms, z).ravel(), s])
    origin = np.concatenate([np.repeat(np.arange(m, dtype=np.int64), nz), np.full(len(s), m, dtype=np.int64)])
    order = np.argsort(locs, kind="stable")
    locs, origin = locs[order], origin[order]
    del order
    widths = np.diff(locs)
    step = np.append(w / nz, 1.0 / len(s))
    total = np.zeros(m)
    kernels.suffix_l1_sweep(widths, origin[:-1].copy(), step, 1.0 / mass, total)
    return atoms, mass, total


def select_truncation(Hb, ref, s, n_quantiles=DEFAULT_QUANTILES, merge_mass=MERGE_MASS,
                      max_atoms=MAX_ATOMS):
    """Data-driven cutoff ``t`` among the observations ``s``.

    Candidates that leave the same set of atoms give the same distance, so
    each set is scored once and credited to its smallest candidate; ties go
    to the smaller ``t``. Candidates leaving less than ``MIN_SURVIVING_MASS``
    are skipped.
    """
    s = np.sort(np.asarray(s, dtype=float))
    z = reference_quantiles(ref, n_quantiles)
    atoms, _, l1 = l1_distances(Hb, z, s, merge_mass, max_atoms)
    cls = np.searchsorted(atoms, s, side="left")
    surviving = np.append(np.cumsum(Hb.probs[::-1])[::-1], 0.0)[np.searchsorted(Hb.support, s, side="left")]
    ok = (cls < len(atoms)) & (surviving >= MIN_SURVIVING_MASS)
    cand_t, cand_l1 = s[ok], l1[cls[ok]]
    best = int(np.argmin(cand_l1))
    t_hat = float(cand_t[best])
    Hb_t = truncate_biased(Hb, t_hat)
    return TruncationResult(t_hat, debias(Hb_t), Hb, cand_t, cand_l1)


def estimate_H(A, ref, s=None, cfg=unfold.SolverConfig(), truncation="auto",
               n_quantiles=DEFAULT_QUANTILES, merge_mass=MERGE_MASS, max_atoms=MAX_ATOMS):
    """Fit the biased-size MLE, choose the cutoff and de-bias.

    ``truncation`` is ``"auto"`` for the L1 rule, a number for a fixed cutoff,
    or ``0`` for the untruncated plug-in estimate.
    """
    state = unfold.fit(A, cfg)
    Hb = state.to_stepcdf(A.s)
    if s is None:
        s = A.s
    if truncation == "auto":
        res = select_truncation(Hb, ref, s, n_quantiles, merge_mass, max_atoms)
    else:
        t = float(truncation)
        empty = np.empty(0)
        res = TruncationResult(t, debias_truncated(Hb, t), Hb, empty, empty)
    return TruncationResult(res.t_hat, res.H_hat, res.Hb_hat, res.l1_t, res.l1_values, state)
