"""Triangulated planar domains with boundary flags.

Structured builders only (rectangles and polar annuli), midpoint refinement,
and a plain-text file format.  The domain metric is Euclidean; it enters the
solver solely through triangle areas and the constant gradients of the
barycentric basis functions, which are cached per triangle.

Mesh file format: line 1 ``nv nt``; then nv lines ``x y b`` with boundary
flag b in {0,1}; then nt lines ``i j k`` of 0-based CCW vertex indices.
"""

from __future__ import annotations

import io

import numpy as np
from scipy.spatial import cKDTree

from .errors import UsageError

__all__ = [
    "TriMesh",
    "build_rect",
    "build_annulus",
    "build_polar",
    "refine",
    "save_mesh",
    "load_mesh",
]


class TriMesh:
    """Immutable triangle mesh with CCW triangles and exact boundary flags.

    ``areas`` and ``grads`` hold the per-triangle area and the gradients of
    the three barycentric basis functions (shape (nt, 3, 2), rows sum to 0).
    Boundary flags are validated against the edge topology: a vertex is
    boundary iff it lies on an edge that belongs to exactly one triangle.
    """

    def __init__(self, vertices, triangles, boundary=None):
        vertices = np.ascontiguousarray(np.asarray(vertices, dtype=float))
        triangles = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise UsageError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise UsageError("triangles must have shape (nt, 3)")
        nv = vertices.shape[0]
        if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
            raise UsageError("triangle indices out of range")
        if not np.all(np.isfinite(vertices)):
            raise UsageError("vertex coordinates must be finite")

        a = vertices[triangles[:, 0]]
        b = vertices[triangles[:, 1]]
        c = vertices[triangles[:, 2]]
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        if np.any(cross <= 0.0):
            bad = int(np.argmin(cross))
            raise UsageError(f"triangle {bad} is degenerate or not counter-clockwise")
        areas = 0.5 * cross

        # grad of the basis function at vertex v is perp(opposite edge)/(2A)
        grads = np.empty((triangles.shape[0], 3, 2))
        for v, (p, q) in enumerate(((1, 2), (2, 0), (0, 1))):
            e = vertices[triangles[:, q]] - vertices[triangles[:, p]]
            grads[:, v, 0] = -e[:, 1]
            grads[:, v, 1] = e[:, 0]
        grads /= (2.0 * areas)[:, None, None]

        if nv > 1:
            pairs = cKDTree(vertices).query_pairs(1e-12)
            if pairs:
                i, j = sorted(next(iter(pairs)))
                raise UsageError(f"duplicate vertices {i} and {j} (closer than 1e-12)")

        computed = self._boundary_from_edges(triangles, nv)
        if boundary is None:
            boundary = computed
        else:
            boundary = np.asarray(boundary, dtype=bool)
            if boundary.shape != (nv,):
                raise UsageError("boundary flags must have shape (nv,)")
            if not np.array_equal(boundary, computed):
                raise UsageError("boundary flags disagree with the edge topology")

        self.vertices = vertices
        self.triangles = triangles
        self.boundary = boundary
        self.areas = areas
        self.grads = grads
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self.boundary.setflags(write=False)

    @staticmethod
    def _boundary_from_edges(triangles, nv):
        edges = {}
        for tri in triangles:
            for p, q in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(p), int(q)) if p < q else (int(q), int(p))
                edges[key] = edges.get(key, 0) + 1
        flags = np.zeros(nv, dtype=bool)
        for (p, q), count in edges.items():
            if count == 1:
                flags[p] = True
                flags[q] = True
            elif count > 2:
                raise UsageError(f"edge ({p},{q}) belongs to {count} triangles (non-manifold)")
        return flags

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def interior_indices(self):
        return np.flatnonzero(~self.boundary)

    def boundary_indices(self):
        return np.flatnonzero(self.boundary)

    def edge_set(self):
        edges = set()
        for tri in self.triangles:
            for p, q in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                edges.add((int(p), int(q)) if p < q else (int(q), int(p)))
        return edges

    def boundary_edge_count(self):
        counts = {}
        for tri in self.triangles:
            for p, q in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(p), int(q)) if p < q else (int(q), int(p))
                counts[key] = counts.get(key, 0) + 1
        return sum(1 for c in counts.values() if c == 1)

    def mesh_size(self):
        """Longest edge length."""
        h = 0.0
        for p, q in self.edge_set():
            h = max(h, float(np.linalg.norm(self.vertices[p] - self.vertices[q])))
        return h

    def euler_characteristic(self):
        return self.num_vertices - len(self.edge_set()) + self.num_triangles


def build_rect(width: float, height: float, nx: int, ny: int) -> TriMesh:
    """Structured triangulation of [0,width] x [0,height] with nx*ny cells."""
    if not (width > 0 and height > 0):
        raise UsageError("rectangle sides must be positive")
    if nx < 1 or ny < 1:
        raise UsageError("cell counts must be at least 1")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    verts = np.array([(x, y) for j, y in enumerate(ys) for i, x in enumerate(xs)])
    tris = []
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    for j in range(ny):
        for i in range(nx):
            v00, v10 = idx(i, j), idx(i + 1, j)
            v01, v11 = idx(i, j + 1), idx(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return TriMesh(verts, np.array(tris, dtype=np.int64))


def build_polar(radii, ntheta: int) -> TriMesh:
    """Structured polar mesh over given rings of radii (annulus topology)."""
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2:
        raise UsageError("polar mesh needs at least two rings")
    if radii[0] <= 0.0 or np.any(np.diff(radii) <= 0.0):
        raise UsageError("ring radii must be positive and strictly increasing")
    if ntheta < 3:
        raise UsageError("polar mesh needs ntheta >= 3")
    thetas = 2.0 * np.pi * np.arange(ntheta) / ntheta
    verts = np.empty((radii.size * ntheta, 2))
    for i, r in enumerate(radii):
        verts[i * ntheta : (i + 1) * ntheta, 0] = r * np.cos(thetas)
        verts[i * ntheta : (i + 1) * ntheta, 1] = r * np.sin(thetas)
    tris = []
    for i in range(radii.size - 1):
        for j in range(ntheta):
            jn = (j + 1) % ntheta
            a = i * ntheta + j
            b = (i + 1) * ntheta + j
            c = (i + 1) * ntheta + jn
            d = i * ntheta + jn
            tris.append((a, b, c))
            tris.append((a, c, d))
    return TriMesh(verts, np.array(tris, dtype=np.int64))


def build_annulus(r0: float, r1: float, nr: int, ntheta: int) -> TriMesh:
    """Annulus r0 < |x| < r1 with nr radial cells and ntheta sectors."""
    if not (0.0 < r0 < r1):
        raise UsageError("annulus needs 0 < r0 < r1")
    if nr < 1:
        raise UsageError("annulus needs nr >= 1")
    return build_polar(np.linspace(r0, r1, nr + 1), ntheta)


def refine(mesh: TriMesh) -> TriMesh:
    """Midpoint 1-to-4 subdivision; boundary flags propagate to edge midpoints."""
    verts = [tuple(v) for v in mesh.vertices]
    midpoint = {}

    def mid(p, q):
        key = (p, q) if p < q else (q, p)
        if key not in midpoint:
            midpoint[key] = len(verts)
            verts.append(tuple(0.5 * (mesh.vertices[p] + mesh.vertices[q])))
        return midpoint[key]

    tris = []
    for a, b, c in mesh.triangles:
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        tris.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def save_mesh(path, mesh: TriMesh) -> None:
    buf = io.StringIO()
    buf.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
    for (x, y), b in zip(mesh.vertices, mesh.boundary):
        buf.write(f"{x:.17g} {y:.17g} {int(b)}\n")
    for i, j, k in mesh.triangles:
        buf.write(f"{i} {j} {k}\n")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_mesh(path) -> TriMesh:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise UsageError("mesh file too short")
    nv, nt = int(tokens[0]), int(tokens[1])
    need = 2 + 3 * nv + 3 * nt
    if len(tokens) != need:
        raise UsageError(f"mesh file has {len(tokens)} fields, expected {need}")
    data = tokens[2:]
    verts = np.empty((nv, 2))
    flags = np.empty(nv, dtype=bool)
    for i in range(nv):
        verts[i, 0] = float(data[3 * i])
        verts[i, 1] = float(data[3 * i + 1])
        flags[i] = bool(int(data[3 * i + 2]))
    tris = np.empty((nt, 3), dtype=np.int64)
    base = 3 * nv
    for t in range(nt):
        tris[t] = [int(data[base + 3 * t + m]) for m in range(3)]
    return TriMesh(verts, tris, boundary=flags)
