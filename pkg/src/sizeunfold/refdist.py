"""Monte Carlo reference section distribution of a shape.

The reference distribution of a convex body ``K`` is the law of ``sqrt(Z)``
where ``Z`` is the area of an IUR section of ``K``. It is represented by a
large sorted sample (used as an empirical CDF and for bootstrap draws) plus a
reflection-corrected Gaussian KDE of its density tabulated on a uniform grid
over ``[0, max sample]``.

Binary cache layout (little-endian)::

    magic      4s   b"SZUF"
    version    u32  1
    count      u64  number of samples
    grid_size  u32  0 when no density is attached
    reserved   u32
    bandwidth  f64  KDE bandwidth used (NaN when no density)
    key        32s  SHA-256 digest of the source shape (zeros if unknown)
    payload    count x f64, sorted sqrt-areas
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geometry
from .rng import make_rng

MAGIC = b"SZUF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIId32s")
MIN_KDE_SAMPLES = 1000
DEFAULT_GRID_SIZE = 4096


class ReferenceFormatError(ValueError):
    """Cache file is truncated or has a bad header."""


class ReferenceVersionError(ReferenceFormatError):
    """Cache file was written by an unsupported format version."""


@dataclass(frozen=True, eq=False)
class ReferenceDistribution:
    sqrt_samples: np.ndarray
    grid: np.ndarray = None
    density_values: np.ndarray = None
    cdf_values: np.ndarray = None
    bandwidth: float = float("nan")
    key: str = ""

    @property
    def s_max_hat(self):
        return float(self.sqrt_samples[-1])

    @property
    def fitted(self):
        return self.density_values is not None

    @property
    def n_samples(self):
        return len(self.sqrt_samples)

    def sample_sqrt(self, rng, size):
        """Bootstrap draws of sqrt-area from the stored sample."""
        idx = make_rng(rng).integers(0, len(self.sqrt_samples), size=size)
        return self.sqrt_samples[idx]

    def density(self, s):
        return eval_density(self, s)

    def cdf(self, s):
        return eval_cdf(self, s)


class AnalyticBall:
    """Exact reference distribution of the unit ball.

    Section areas have density ``1 / (2 pi sqrt(1 - z / pi))`` on ``(0, pi)``,
    so ``sqrt(Z)`` has CDF ``1 - sqrt(1 - s^2 / pi)`` on ``(0, sqrt(pi))``.
    """

    s_max_hat = float(np.sqrt(np.pi))
    key = "analytic-ball"

    def sample_sqrt(self, rng, size):
        # offset of an IUR plane through the unit ball is uniform on [0, 1]
        u = make_rng(rng).uniform(0.0, 1.0, size=size)
        return np.sqrt(np.pi * (1.0 - u * u))

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.clip(s, 0.0, self.s_max_hat)
        out = 1.0 - np.sqrt(np.clip(1.0 - inside**2 / np.pi, 0.0, None))
        return np.where(s <= 0, 0.0, out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return np.sqrt(np.pi * (1.0 - (1.0 - u) ** 2))

    def density(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = s / (np.pi * np.sqrt(1.0 - s**2 / np.pi))
        return np.where((s > 0) & (s < self.s_max_hat), g, 0.0)

    def area_density(self, z):
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = 1.0 / (2 * np.pi * np.sqrt(1.0 - z / np.pi))
        return np.where((z > 0) & (z < np.pi), g, 0.0)


def _chunk_sqrt_areas(K, size, rng):
    normals, offsets, _ = geometry.sample_iur_planes(K, rng, size)
    return np.sqrt(geometry.section_areas(K, normals, offsets))


def sample_reference(K, n, rng, chunk_size=1 << 18, workers=1):
    """Draw ``n`` sqrt section areas of ``K`` (or of ``AnalyticBall``).

    Work is cut into chunks, each with its own child stream of ``rng``, and
    merged in chunk order, so the result does not depend on ``workers``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(rng)
    if isinstance(K, AnalyticBall):
        samples = K.sample_sqrt(rng, n)
        return ReferenceDistribution(np.sort(samples), key=K.key)
    sizes = [chunk_size] * (n // chunk_size)
    if n % chunk_size:
        sizes.append(n % chunk_size)
    streams = rng.spawn(len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _chunk_sqrt_areas(K, *a), zip(sizes, streams)))
    else:
        parts = [_chunk_sqrt_areas(K, m, r) for m, r in zip(sizes, streams)]
    samples = np.sort(np.concatenate(parts))
    return ReferenceDistribution(samples, key=K.content_hash())


def silverman_bandwidth(samples):
    x = np.asarray(samples, dtype=float)
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(x) ** (-0.2)


def reflected_kde(samples, upper, grid_size, bandwidth):
    """Gaussian KDE on ``linspace(0, upper, grid_size)`` reflected at both ends.

    Samples are linearly binned onto the grid; reflected copies of the bin
    counts are appended on both sides before a direct convolution with the
    sampled kernel.
    """
    x = np.asarray(samples, dtype=float)
    G = int(grid_size)
    delta = upper / (G - 1)
    pos = np.clip(x / delta, 0.0, G - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), G - 2)
    frac = pos - lo
    counts = np.bincount(lo, weights=1.0 - frac, minlength=G)
    counts += np.bincount(lo + 1, weights=frac, minlength=G)

    L = int(np.ceil(6.0 * bandwidth / delta))
    # extended index range [-L, G - 1 + L]
    ext = np.zeros(G + 2 * L)
    ext[L:L + G] += counts
    m = np.arange(G)
    low_mirror = -m + L
    keep = low_mirror >= 0
    np.add.at(ext, low_mirror[keep], counts[keep])
    high_mirror = 2 * (G - 1) - m + L
    keep = high_mirror < len(ext)
    np.add.at(ext, high_mirror[keep], counts[keep])

    offsets = np.arange(-L, L + 1) * delta / bandwidth
    kernel = np.exp(-0.5 * offsets**2) / (np.sqrt(2 * np.pi) * bandwidth * len(x))
    dens = np.convolve(ext, kernel, mode="valid")
    return np.linspace(0.0, upper, G), np.maximum(dens, 0.0)


def fit_density(samples, grid_size=DEFAULT_GRID_SIZE, bandwidth=None):
    """Fit the reflection-corrected KDE of the sqrt-area density.

    ``samples`` may be a ReferenceDistribution or an array of sqrt areas. The
    density is renormalised to integrate to one (trapezoid rule) on the grid.
    """
    if isinstance(samples, ReferenceDistribution):
        key, x = samples.key, samples.sqrt_samples
    else:
        key, x = "", np.sort(np.asarray(samples, dtype=float))
    if len(x) < MIN_KDE_SAMPLES:
        raise ValueError(f"need at least {MIN_KDE_SAMPLES} samples for the density fit, got {len(x)}")
    if x[0] < 0:
        raise ValueError("sqrt-area samples must be nonnegative")
    if x[-1] - x[0] <= 1e-12 * x[-1]:
        raise ValueError("degenerate sample: all values are equal, the density has no spread")
    if bandwidth is None:
        bandwidth = silverman_bandwidth(x)
    if not (np.isfinite(bandwidth) and bandwidth > 0):
        raise ValueError("degenerate sample: bandwidth is zero or not finite")
    upper = float(x[-1])
    grid, dens = reflected_kde(x, upper, grid_size, bandwidth)
    dens = dens / np.trapezoid(dens, grid)
    cdf = np.searchsorted(x, grid, side="right") / len(x)
    return ReferenceDistribution(x, grid, dens, cdf, float(bandwidth), key)


def eval_density(ref, s):
    """Linear interpolation of the tabulated density; 0 outside ``[0, s_max_hat]``."""
    if not ref.fitted:
        raise ValueError("reference has no fitted density")
    s = np.asarray(s, dtype=float)
    return np.interp(s, ref.grid, ref.density_values, left=0.0, right=0.0)


def eval_cdf(ref, s):
    """Empirical CDF of the stored sqrt-area sample."""
    s = np.asarray(s, dtype=float)
    return np.searchsorted(ref.sqrt_samples, s, side="right") / len(ref.sqrt_samples)


def area_density(ref, z):
    """Density of the area itself, ``g(sqrt z) / (2 sqrt z)``."""
    z = np.asarray(z, dtype=float)
    root = np.sqrt(np.clip(z, 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = eval_density(ref, root) / (2 * root)
    return np.where(z > 0, out, 0.0)


def initial_monotone_extent(ref, tol=0.0):
    """Largest ``s`` such that the tabulated density is nondecreasing on ``[0, s]``.

    A grid value counts as a decrease only if it falls more than ``tol`` below
    the running maximum, which absorbs sampling noise of the KDE.
    """
    g = ref.density_values
    drops = np.flatnonzero(g < np.maximum.accumulate(g) - tol)
    if len(drops) == 0:
        return float(ref.grid[-1])
    return float(ref.grid[drops[0] - 1])


def save_reference(ref, path):
    samples = np.ascontiguousarray(ref.sqrt_samples, dtype="<f8")
    grid_size = len(ref.grid) if ref.fitted else 0
    bandwidth = ref.bandwidth if ref.fitted else float("nan")
    key = bytes.fromhex(ref.key) if _is_digest(ref.key) else bytes(32)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(samples), grid_size, 0, bandwidth, key))
        fh.write(samples.tobytes())


def load_reference(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ReferenceFormatError(f"{path}: corrupt header (file too short)")
        magic, version, count, grid_size, _, bandwidth, key = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ReferenceFormatError(f"{path}: corrupt header (bad magic {magic!r})")
        if version != FORMAT_VERSION:
            raise ReferenceVersionError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
        payload = fh.read()
    if len(payload) != 8 * count:
        raise ReferenceFormatError(f"{path}: corrupt header (expected {count} samples, found {len(payload) // 8})")
    samples = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    key = key.hex() if any(key) else ""
    ref = ReferenceDistribution(samples, key=key)
    if grid_size:
        ref = fit_density(ref, grid_size, bandwidth)
    return ref


def _is_digest(key):
    if len(key) != 64:
        return False
    try:
        bytes.fromhex(key)
    except ValueError:
        return False
    return True
