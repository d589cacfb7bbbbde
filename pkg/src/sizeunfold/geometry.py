"""Convex polyhedra, plane sections, widths and IUR plane sampling.

A plane is ``{x : <x, normal> = offset}`` with ``normal`` a unit vector in the
upper hemisphere. An IUR plane hitting ``K`` has (normal, offset) uniform on
the set of pairs whose plane meets ``K``; it is drawn by rejection from a
uniform direction and a uniform offset in the slab of an enclosing ball.
"""
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from . import kernels
from .rng import make_rng

TAU_GEOM = 1e-9
_PROJ_LIMIT = 1 << 24


class GeometryError(ValueError):
    """Polyhedron fails validation (open, non-convex or degenerate)."""


class OFFParseError(ValueError):
    """Malformed OFF file."""


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.array(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            raise ValueError("plane normal must have unit length")
        if normal[2] < 0:
            raise ValueError("plane normal must lie in the upper hemisphere")
        normal.setflags(write=False)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_normal(cls, direction, offset):
        """Normalise ``direction`` and flip it (and the offset) into the upper hemisphere."""
        direction = np.asarray(direction, dtype=float)
        norm = np.linalg.norm(direction)
        direction = direction / norm
        offset = float(offset) / norm
        if direction[2] < 0:
            direction, offset = -direction, -offset
        return cls(direction, offset)


class Polyhedron:
    """Convex polyhedron given by vertices and outward-oriented polygonal faces.

    Faces are re-oriented to be counter-clockwise seen from outside. The
    object is immutable; transformations return new instances.
    """

    def __init__(self, vertices, faces, tol=TAU_GEOM):
        vertices = np.array(vertices, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise GeometryError("vertices must be an (n, 3) array")
        faces = [tuple(int(i) for i in f) for f in faces]
        if not faces:
            raise GeometryError("polyhedron has no faces")
        for f in faces:
            if len(f) < 3:
                raise GeometryError("faces need at least 3 vertices")
            if min(f) < 0 or max(f) >= len(vertices):
                raise GeometryError(f"face {f} references a missing vertex")
            if len(set(f)) != len(f):
                raise GeometryError(f"face {f} repeats a vertex")

        scale = max(np.ptp(vertices, axis=0).max(), 1.0)
        inside = vertices.mean(axis=0)
        oriented = []
        for f in faces:
            pts = vertices[list(f)]
            normal = _newell_normal(pts)
            nn = np.linalg.norm(normal)
            if nn <= tol * scale**2:
                raise GeometryError(f"face {f} is degenerate")
            normal /= nn
            if np.abs((pts - pts[0]) @ normal).max() > tol * scale * 10:
                raise GeometryError(f"face {f} is not planar")
            if normal @ (pts.mean(axis=0) - inside) < 0:
                f = f[::-1]
            oriented.append(f)
        faces = oriented

        edges = {}
        for f in faces:
            for a, b in zip(f, f[1:] + f[:1]):
                key = (a, b)
                if key in edges:
                    raise GeometryError("faces are inconsistently oriented (repeated half-edge)")
                edges[key] = True
        for a, b in edges:
            if (b, a) not in edges:
                raise GeometryError("open mesh: an edge is not shared by exactly two faces")
        used = sorted({i for f in faces for i in f})
        if len(used) != len(vertices):
            raise GeometryError("open mesh: unreferenced vertices")

        for f in faces:
            pts = vertices[list(f)]
            normal = _newell_normal(pts)
            normal /= np.linalg.norm(normal)
            if ((vertices - pts[0]) @ normal).max() > tol * scale * 10:
                raise GeometryError("polyhedron is not convex")
            # convex face: every turn has the same orientation as the face normal
            turns = np.cross(np.roll(pts, -1, axis=0) - pts, np.roll(pts, -2, axis=0) - np.roll(pts, -1, axis=0))
            if (turns @ normal).min() < -tol * scale**2:
                raise GeometryError(f"face {f} is not convex")

        self._vertices = vertices
        self._vertices.setflags(write=False)
        self._faces = tuple(faces)
        self._volume = _signed_volume(vertices, faces)
        if self._volume <= 0:
            raise GeometryError("polyhedron has non-positive volume")
        self._centroid = vertices.mean(axis=0)
        centred = np.ascontiguousarray(vertices - self._centroid)
        self._centred = centred
        self._radius = float(np.sqrt((centred**2).sum(axis=1)).max())
        he_from, he_to, ptr = [], [], [0]
        for f in faces:
            he_from.extend(f)
            he_to.extend(f[1:] + f[:1])
            ptr.append(len(he_from))
        self._he_from = np.asarray(he_from, dtype=np.int64)
        self._he_to = np.asarray(he_to, dtype=np.int64)
        self._face_ptr = np.asarray(ptr, dtype=np.int64)
        self._edges = np.array(sorted((a, b) for a, b in edges if a < b), dtype=np.int64)

    @property
    def vertices(self):
        return self._vertices

    @property
    def faces(self):
        return self._faces

    @property
    def edges(self):
        return self._edges

    @property
    def centroid(self):
        """Vertex centroid; an interior point, used as the sampling centre."""
        return self._centroid

    @property
    def radius(self):
        """Largest vertex distance from ``centroid``: radius of the enclosing ball."""
        return self._radius

    def __repr__(self):
        return f"Polyhedron(n_vertices={len(self._vertices)}, n_faces={len(self._faces)}, volume={self._volume:.6g})"

    def volume(self):
        return self._volume

    def diameter(self):
        return float(pdist(self._vertices).max())

    def scaled(self, factor):
        return Polyhedron(self._vertices * float(factor), self._faces)

    def translated(self, shift):
        return Polyhedron(self._vertices + np.asarray(shift, dtype=float), self._faces)

    def rotated(self, rotation):
        rotation = np.asarray(rotation, dtype=float)
        if rotation.shape != (3, 3) or not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-10):
            raise ValueError("rotation must be an orthogonal 3x3 matrix")
        faces = self._faces if np.linalg.det(rotation) > 0 else [f[::-1] for f in self._faces]
        return Polyhedron(self._vertices @ rotation.T, faces)

    def content_hash(self):
        """SHA-256 of the vertex coordinates and face lists."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self._vertices, dtype="<f8").tobytes())
        for f in self._faces:
            h.update(np.asarray(f, dtype="<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()

    @classmethod
    def from_points(cls, points):
        """Convex hull of ``points``, with coplanar hull triangles merged into polygons."""
        points = np.asarray(points, dtype=float)
        hull = ConvexHull(points)
        used = np.unique(hull.simplices)
        remap = {old: new for new, old in enumerate(used)}
        scale = np.ptp(points, axis=0).max()
        groups = {}
        for simplex, eq in zip(hull.simplices, hull.equations):
            key = tuple(np.round(eq[:3], 8)) + (round(eq[3] / scale, 8),)
            groups.setdefault(key, set()).update(simplex.tolist())
        faces = []
        for key, ids in groups.items():
            ids = np.array(sorted(ids))
            normal = np.array(key[:3])
            pts = points[ids]
            centre = pts.mean(axis=0)
            u = pts[0] - centre
            u -= (u @ normal) * normal
            u /= np.linalg.norm(u)
            w = np.cross(normal, u)
            ang = np.arctan2((pts - centre) @ w, (pts - centre) @ u)
            faces.append([remap[i] for i in ids[np.argsort(ang)]])
        return cls(points[used], faces)

    # -- section kernel inputs -------------------------------------------------
    def _kernel_args(self):
        return self._centred, self._he_from, self._he_to, self._face_ptr


def _newell_normal(pts):
    nxt = np.roll(pts, -1, axis=0)
    return np.array([
        ((pts[:, 1] - nxt[:, 1]) * (pts[:, 2] + nxt[:, 2])).sum(),
        ((pts[:, 2] - nxt[:, 2]) * (pts[:, 0] + nxt[:, 0])).sum(),
        ((pts[:, 0] - nxt[:, 0]) * (pts[:, 1] + nxt[:, 1])).sum(),
    ])


def _signed_volume(vertices, faces):
    c = vertices.mean(axis=0)
    total = 0.0
    for f in faces:
        a = vertices[f[0]] - c
        for i in range(1, len(f) - 1):
            b = vertices[f[i]] - c
            d = vertices[f[i + 1]] - c
            total += np.dot(a, np.cross(b, d))
    return total / 6.0


def volume(K):
    """Volume by signed tetrahedra from the vertex centroid."""
    return K.volume()


def normalize_to_unit_volume(K):
    v = K.volume()
    if not v > 0:
        raise GeometryError("degenerate polyhedron")
    return K.scaled(v ** (-1.0 / 3.0))


def width(K, direction):
    """Length of the projection of ``K`` onto the line spanned by ``direction``."""
    proj = K.vertices @ np.asarray(direction, dtype=float)
    return float(proj.max() - proj.min())


def hemisphere_directions(rng, size):
    """Uniform unit vectors on the upper hemisphere (normalised Gaussians, sign-flipped)."""
    x = rng.standard_normal((size, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    x[x[:, 2] < 0] *= -1.0
    return x


def mean_width(K, rng, n_dirs=10**6, batch=1 << 16):
    """Monte Carlo mean width: average width over uniform hemisphere directions."""
    if n_dirs < 1:
        raise ValueError("n_dirs must be positive")
    rng = make_rng(rng)
    total = 0.0
    done = 0
    while done < n_dirs:
        m = min(batch, n_dirs - done)
        dirs = hemisphere_directions(rng, m)
        proj = K.vertices @ dirs.T
        total += (proj.max(axis=0) - proj.min(axis=0)).sum()
        done += m
    return total / n_dirs


def _in_plane_basis(normal):
    helper = np.eye(3)[np.argmin(np.abs(normal))]
    u = np.cross(normal, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(normal, u)


def section_polygon(K, T, tol=TAU_GEOM):
    """Vertices of the convex polygon ``K ∩ T`` ordered by in-plane angle, or None.

    Points are the vertices of ``K`` lying on ``T`` (within ``tol``) plus the
    crossings of ``T`` with edges whose end points lie strictly on opposite sides.
    Fewer than three distinct points means a tangent touch and returns None.
    """
    n = T.normal
    d = K.vertices @ n - T.offset
    pts = [K.vertices[i] for i in np.flatnonzero(np.abs(d) <= tol)]
    for a, b in K.edges:
        if (d[a] < -tol and d[b] > tol) or (d[a] > tol and d[b] < -tol):
            t = d[a] / (d[a] - d[b])
            pts.append(K.vertices[a] + t * (K.vertices[b] - K.vertices[a]))
    if len(pts) < 3:
        return None
    pts = np.array(pts)
    distinct = [pts[0]]
    for p in pts[1:]:
        if min(np.linalg.norm(p - q) for q in distinct) > tol:
            distinct.append(p)
    if len(distinct) < 3:
        return None
    pts = np.array(distinct)
    u, w = _in_plane_basis(n)
    c = pts.mean(axis=0)
    ang = np.arctan2((pts - c) @ w, (pts - c) @ u)
    return pts[np.argsort(ang)]


def polygon_area(points, normal):
    """Shoelace area of a planar polygon given in 3D with its plane normal."""
    u, w = _in_plane_basis(np.asarray(normal, dtype=float))
    x = points @ u
    y = points @ w
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def section_area(K, T):
    """Area of ``K ∩ T``; 0 for empty or degenerate sections."""
    poly = section_polygon(K, T)
    if poly is None:
        return 0.0
    return polygon_area(poly, T.normal)


def section_areas(K, normals, offsets):
    """Batched section areas through the compiled (or fallback) kernel."""
    normals = np.ascontiguousarray(normals, dtype=float).reshape(-1, 3)
    offsets = np.ascontiguousarray(offsets, dtype=float).reshape(-1)
    local = np.ascontiguousarray(offsets - normals @ K.centroid)
    verts, he_from, he_to, ptr = K._kernel_args()
    return np.asarray(kernels.section_areas(verts, he_from, he_to, ptr, normals, local))


def sample_iur_planes(K, rng, size):
    """Draw ``size`` IUR planes hitting ``K``; returns (normals, offsets, n_proposed)."""
    rng = make_rng(rng)
    normals = np.empty((size, 3))
    offsets = np.empty(size)
    got = 0
    proposed = 0
    R = K.radius
    verts = K._centred
    while got < size:
        m = max(64, int(1.3 * (size - got)) + 16)
        # bound the vertex-by-direction projection matrix
        m = min(m, max(64, _PROJ_LIMIT // len(verts)))
        dirs = hemisphere_directions(rng, m)
        s = rng.uniform(-R, R, size=m)
        proj = verts @ dirs.T
        hit = (proj.min(axis=0) < s) & (s < proj.max(axis=0))
        take = np.flatnonzero(hit)[: size - got]
        if len(take) < hit.sum():
            # stop the proposal count at the last accepted draw
            proposed += int(take[-1]) + 1
        else:
            proposed += m
        normals[got:got + len(take)] = dirs[take]
        offsets[got:got + len(take)] = s[take] + dirs[take] @ K.centroid
        got += len(take)
    return normals, offsets, proposed


def sample_iur_plane(K, rng):
    """One IUR plane hitting ``K``."""
    normals, offsets, _ = sample_iur_planes(K, rng, 1)
    return Plane(normals[0], offsets[0])


def hitting_probability(K, Q, lam, rng=0, n_dirs=10**6):
    """Probability that an IUR plane hitting ``Q`` also hits ``lam * K``.

    Equals ``lam * b(K) / b(Q)`` with Monte Carlo mean widths computed from a
    common direction sample.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if lam * K.diameter() > Q.diameter() * (1 + 1e-12):
        raise ValueError("scaled particle is larger than the container")
    rng = make_rng(rng)
    dirs_seed = int(rng.integers(0, 2**63))
    ratio = lam * mean_width(K, make_rng(dirs_seed), n_dirs) / mean_width(Q, make_rng(dirs_seed), n_dirs)
    if ratio > 1:
        raise ValueError(f"hitting probability ratio {ratio:.4g} exceeds 1: particle cannot fit")
    return ratio


# -- built-in shapes -----------------------------------------------------------

def cube(side=None):
    """Axis-aligned cube centred at the origin; unit volume unless ``side`` is given."""
    side = 1.0 if side is None else float(side)
    h = side / 2
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    return Polyhedron.from_points(v)


def tetrahedron():
    """Regular tetrahedron with unit volume."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    return normalize_to_unit_volume(Polyhedron.from_points(v))


def dodecahedron(edge=None):
    """Regular dodecahedron; unit volume unless ``edge`` is given."""
    phi = (1 + np.sqrt(5)) / 2
    v = [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    for a in (-1, 1):
        for b in (-1, 1):
            v += [[0, a / phi, b * phi], [a / phi, b * phi, 0], [a * phi, 0, b / phi]]
    K = Polyhedron.from_points(np.array(v, dtype=float))
    if edge is None:
        return normalize_to_unit_volume(K)
    return K.scaled(edge / (2 / phi))


def ball(subdivisions=4):
    """Geodesic (icosphere) polyhedron rescaled to the volume of the unit ball."""
    phi = (1 + np.sqrt(5)) / 2
    v = np.array([[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
                  [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
                  [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]], dtype=float)
    v /= np.linalg.norm(v, axis=1)[:, None]
    tris = ConvexHull(v).simplices
    for _ in range(subdivisions):
        pts = {tuple(p): i for i, p in enumerate(v.tolist())}
        verts = v.tolist()

        def mid(i, j):
            m = (np.array(verts[i]) + np.array(verts[j])) / 2
            m = tuple((m / np.linalg.norm(m)).tolist())
            if m not in pts:
                pts[m] = len(verts)
                verts.append(list(m))
            return pts[m]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        v = np.array(verts)
        tris = np.array(new)
    K = Polyhedron.from_points(v)
    return K.scaled((4 * np.pi / 3 / K.volume()) ** (1 / 3))


SHAPES = {"cube": cube, "tetrahedron": tetrahedron, "dodecahedron": dodecahedron}


# -- OFF files -----------------------------------------------------------------

def _off_tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def load_off(path):
    """Read an ASCII OFF file into a validated Polyhedron (faces re-oriented outward)."""
    with open(path) as fh:
        lines = list(_off_tokens(fh.read()))
    if not lines or not lines[0].startswith("OFF"):
        raise OFFParseError(f"{path}: missing OFF header")
    rest = lines[0][3:].split()
    lines = lines[1:]
    try:
        if not rest:
            rest = lines[0].split()
            lines = lines[1:]
        nv, nf = int(rest[0]), int(rest[1])
    except (IndexError, ValueError):
        raise OFFParseError(f"{path}: bad vertex/face count line") from None
    if len(lines) < nv + nf:
        raise OFFParseError(f"{path}: expected {nv} vertices and {nf} faces, file is truncated")
    try:
        verts = np.array([[float(x) for x in lines[i].split()[:3]] for i in range(nv)])
        faces = []
        for i in range(nv, nv + nf):
            toks = [int(x) for x in lines[i].split()]
            k = toks[0]
            if len(toks) < k + 1:
                raise OFFParseError(f"{path}: face line {i - nv + 1} has fewer than {k} indices")
            faces.append(toks[1:k + 1])
    except ValueError as exc:
        if isinstance(exc, OFFParseError):
            raise
        raise OFFParseError(f"{path}: non-numeric data ({exc})") from None
    if verts.shape != (nv, 3):
        raise OFFParseError(f"{path}: vertex lines need three coordinates")
    for f in faces:
        if max(f) >= nv or min(f) < 0:
            raise OFFParseError(f"{path}: face {f} references a vertex outside 0..{nv - 1}")
    return Polyhedron(verts, faces)


def save_off(K, path):
    with open(path, "w") as fh:
        fh.write(f"OFF\n{len(K.vertices)} {len(K.faces)} {len(K.edges)}\n")
        for v in K.vertices:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")
        for f in K.faces:
            fh.write(f"{len(f)} " + " ".join(str(i) for i in f) + "\n")


def resolve_shape(name):
    """Built-in shape by name, or a path to an OFF file."""
    if name in SHAPES:
        return SHAPES[name]()
    return normalize_to_unit_volume(load_off(name))
