"""Pure-Python/numpy versions of the compiled kernels in ``_core.pyx``."""
import numpy as np


def section_areas(verts, he_from, he_to, face_ptr, normals, offsets):
    """Batched section areas; same contract as ``_core.section_areas``.

    Vectorised over planes, looping over faces.
    """
    normals = np.asarray(normals, dtype=float)
    d = verts @ normals.T - np.asarray(offsets, dtype=float)[None, :]
    total = np.zeros(normals.shape[0])
    for f in range(len(face_ptr) - 1):
        a = np.zeros((normals.shape[0], 3))
        b = np.zeros((normals.shape[0], 3))
        hit_a = np.zeros(normals.shape[0], dtype=bool)
        hit_b = np.zeros(normals.shape[0], dtype=bool)
        for h in range(face_ptr[f], face_ptr[f + 1]):
            u, w = he_from[h], he_to[h]
            d0, d1 = d[u], d[w]
            down = (d0 >= 0.0) & (d1 < 0.0)
            up = (d0 < 0.0) & (d1 >= 0.0)
            if not (down.any() or up.any()):
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                t = d0 / (d0 - d1)
            p = verts[u][None, :] + t[:, None] * (verts[w] - verts[u])[None, :]
            a[down] = p[down]
            b[up] = p[up]
            hit_a |= down
            hit_b |= up
        cut = hit_a & hit_b
        if cut.any():
            total[cut] += np.einsum("ij,ij->i", np.cross(a[cut], b[cut]), normals[cut])
    return np.maximum(0.5 * total, 0.0)


def pava(y, w):
    """Weighted pool-adjacent-violators, nondecreasing."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    level, weight, size = [], [], []
    for yi, wi in zip(y.tolist(), w.tolist()):
        level.append(yi)
        weight.append(wi)
        size.append(1)
        while len(level) > 1 and level[-2] > level[-1]:
            wsum = weight[-2] + weight[-1]
            level[-2] = (weight[-2] * level[-2] + weight[-1] * level[-1]) / wsum
            weight[-2] = wsum
            size[-2] += size[-1]
            del level[-1], weight[-1], size[-1]
    return np.repeat(np.array(level, dtype=float), size)


def diff_sq_rmatvec(a, w, out):
    """Accumulate ``out[j] += sum_i w_i (a_ij - a_i,j+1)^2`` (``a_i,m = 0``)."""
    for r in range(0, a.shape[0], 1024):
        chunk = a[r:r + 1024]
        diff = chunk.copy()
        diff[:, :-1] -= chunk[:, 1:]
        out += w[r:r + 1024] @ (diff * diff)


def suffix_l1_sweep(widths, origin, step, inv_mass, total):
    """Accumulate the L1 distance of every atom suffix; contract of ``_core.suffix_l1_sweep``.

    ``origin[r]`` names the jump at the left end of interval ``r`` (atom index,
    or ``m`` for an observation) and ``step`` its height. On each interval
    ``total[k] += widths[r] * |S_k * inv_mass[k] - E|`` with ``S_k`` the summed
    levels of atoms ``k..m-1`` and ``E`` the empirical level.
    """
    m = len(total)
    rows = max(1, (1 << 21) // (m + 1))
    carry = np.zeros(m + 1)
    for r in range(0, len(widths), rows):
        o = origin[r:r + rows]
        inc = np.zeros((len(o), m + 1))
        inc[np.arange(len(o)), o] = step[o]
        level = np.cumsum(inc, axis=0)
        level += carry
        carry = level[-1].copy()
        induced = np.cumsum(level[:, m - 1::-1], axis=1)[:, ::-1]
        induced *= inv_mass
        induced -= level[:, m:]
        total += widths[r:r + rows] @ np.abs(induced)
