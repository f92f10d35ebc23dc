"""Tetrahedral meshes of the unit cube and of the L-shaped prism.

Faces carry a global orientation: the unit normal points out of the adjacent
tetrahedron with the lower index, and the tangent frame is a deterministic
function of the face's vertex coordinates, so every element sees identical
face data.
"""

import hashlib
from dataclasses import dataclass
from itertools import permutations

import numpy as np


@dataclass(frozen=True)
class Face:
    vertices: tuple  # global vertex indices, sorted by coordinates
    area: float
    normal: np.ndarray
    centroid: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    elements: tuple  # (owner, neighbour) with neighbour = -1 on the boundary

    @property
    def is_boundary(self):
        return self.elements[1] < 0


@dataclass(frozen=True)
class ShapeMetrics:
    diameter: float
    inradius: float
    chunkiness: float
    face_areas: np.ndarray
    area_ratio: float


def sort_face_vertices(points, ids):
    """Order face vertex ids lexicographically by their coordinates (x, then y, then z)."""
    ids = np.asarray(ids)
    p = points[ids]
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
    return tuple(int(i) for i in ids[order])


def tangent_frame(p, normal):
    """Tangent frame of a triangle with sorted vertex coordinates ``p`` (3, 3).

    t1 is the normalized shortest edge (ties broken by the fixed edge order
    01, 02, 12) and t2 = normal x t1, so (t1, t2, normal) is right-handed.
    """
    edges = np.array([p[1] - p[0], p[2] - p[0], p[2] - p[1]])
    lengths = np.linalg.norm(edges, axis=1)
    key = np.round(lengths / lengths.max(), 10)
    e = edges[np.argsort(key, kind="stable")[0]]
    t1 = e / np.linalg.norm(e)
    t1 = t1 - (t1 @ normal) * normal
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    return t1, t2


class Mesh:
    """Conforming tetrahedral mesh with an enumerated, oriented skeleton.

    Local face ``f`` of a tetrahedron is the face opposite its vertex ``f``.
    """

    def __init__(self, vertices, tets, domain_volume=None, name="mesh"):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        tets = np.array(tets, dtype=np.int64)
        vol = self._signed_volumes(tets)
        flip = vol < 0
        tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
        self.tets = tets
        self.volumes = np.abs(vol)
        self.domain_volume = domain_volume
        self.name = name
        self._build_faces()

    def _signed_volumes(self, tets):
        p = self.vertices[tets]
        return np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                         np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0

    def _build_faces(self):
        X = self.vertices
        index = {}
        fverts, felems = [], []
        tet_faces = np.empty((len(self.tets), 4), dtype=np.int64)
        for e, tet in enumerate(self.tets):
            for f in range(4):
                ids = sort_face_vertices(X, np.delete(tet, f))
                key = tuple(sorted(ids))
                j = index.get(key)
                if j is None:
                    j = len(fverts)
                    index[key] = j
                    fverts.append(ids)
                    felems.append([e, -1])
                else:
                    if felems[j][1] >= 0:
                        raise ValueError("face shared by more than two tetrahedra")
                    felems[j][1] = e
                tet_faces[e, f] = j
        self.face_vertices = np.array(fverts, dtype=np.int64)
        self.face_elements = np.array(felems, dtype=np.int64)
        self.tet_faces = tet_faces
        nf = len(fverts)
        P = X[self.face_vertices]
        cr = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
        self.face_areas = 0.5 * np.linalg.norm(cr, axis=1)
        normals = cr / np.linalg.norm(cr, axis=1)[:, None]
        self.face_centroids = P.mean(axis=1)
        # orient outward from the owner
        owners = self.face_elements[:, 0]
        owner_local = np.argmax(self.tet_faces[owners] == np.arange(nf)[:, None], axis=1)
        opposite = X[self.tets[owners, owner_local]]
        s = np.einsum("ij,ij->i", normals, self.face_centroids - opposite)
        normals[s < 0] *= -1
        self.face_normals = normals
        self.face_t1 = np.empty((nf, 3))
        self.face_t2 = np.empty((nf, 3))
        for j in range(nf):
            self.face_t1[j], self.face_t2[j] = tangent_frame(P[j], normals[j])
        self.boundary = self.face_elements[:, 1] < 0
        self.tet_face_sign = np.where(
            self.face_elements[self.tet_faces, 0] == np.arange(len(self.tets))[:, None], 1, -1)
        d = self.vertices[self.tets]
        diffs = d[:, :, None, :] - d[:, None, :, :]
        self.diameters = np.linalg.norm(diffs, axis=3).reshape(len(self.tets), -1).max(axis=1)

    @property
    def n_elements(self):
        return len(self.tets)

    @property
    def n_faces(self):
        return len(self.face_vertices)

    def face(self, j):
        return Face(tuple(int(i) for i in self.face_vertices[j]), float(self.face_areas[j]),
                    self.face_normals[j], self.face_centroids[j], self.face_t1[j],
                    self.face_t2[j], tuple(int(i) for i in self.face_elements[j]))

    def element_vertices(self, e):
        return self.vertices[self.tets[e]]

    @property
    def h(self):
        return float(self.diameters.max())

    def digest(self):
        """SHA-256 of vertex coordinates and connectivity."""
        m = hashlib.sha256()
        m.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        m.update(np.ascontiguousarray(self.tets, dtype="<i8").tobytes())
        return m.hexdigest()


def _kuhn_tets(vid, i, j, k):
    """Six Kuhn tetrahedra of the subcube with lower corner (i, j, k)."""
    out = []
    for perm in permutations(range(3)):
        c = [i, j, k]
        tet = [vid(*c)]
        for axis in perm:
            c[axis] += 1
            tet.append(vid(*c))
        out.append(tet)
    return out


def build_cube_mesh(n):
    """Kuhn subdivision of [0,1]^3 into 6 n^3 tetrahedra."""
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(a, b, c):
        return (a * (n + 1) + b) * (n + 1) + c

    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                tets.extend(_kuhn_tets(vid, i, j, k))
    return Mesh(verts, tets, domain_volume=1.0, name=f"cube-{n}")


def build_lshape_mesh(n):
    """([-1,1]^2 minus [-1,0]^2) x [0,1], three unit cubes each split into 6 n^3 tets."""
    if n < 1:
        raise ValueError("subdivision count must be >= 1")
    m = 2 * n
    g = np.linspace(-1.0, 1.0, m + 1)
    gz = np.linspace(0.0, 1.0, n + 1)

    def vid(a, b, c):
        return (a * (m + 1) + b) * (n + 1) + c

    tets = []
    for i in range(m):
        for j in range(m):
            if i < n and j < n:
                continue
            for k in range(n):
                tets.extend(_kuhn_tets(vid, i, j, k))
    tets = np.array(tets)
    used, inverse = np.unique(tets, return_inverse=True)
    X, Y, Z = np.meshgrid(g, g, gz, indexing="ij")
    allv = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    return Mesh(allv[used], inverse.reshape(tets.shape), domain_volume=3.0,
                name=f"lshape-{n}")


def shape_metrics(mesh, e):
    p = mesh.element_vertices(e)
    areas = np.array([0.5 * np.linalg.norm(np.cross(q[1] - q[0], q[2] - q[0]))
                      for q in (np.delete(p, f, axis=0) for f in range(4))])
    vol = abs(np.linalg.det(p[1:] - p[0])) / 6.0
    diam = max(np.linalg.norm(p[a] - p[b]) for a in range(4) for b in range(a + 1, 4))
    rho = 3.0 * vol / areas.sum()
    return ShapeMetrics(float(diam), float(rho), float(diam / rho), areas,
                        float(areas.max() / areas.min()))


def dissection_face_order(mesh, leaf=16):
    """Interior faces in nested-dissection order from recursive coordinate bisection.

    Faces inside each half come first and faces shared by the halves last, so a
    factorization of any face-coupled matrix in this order keeps fill local.
    """
    cent = mesh.vertices[mesh.tets].mean(axis=1)
    fe = mesh.face_elements
    side = np.zeros(mesh.n_elements, dtype=np.int64)
    out = []
    stack = [(np.arange(mesh.n_elements), np.flatnonzero(fe[:, 1] >= 0), False)]
    # explicit stack; a separator is emitted after both of its halves
    while stack:
        elems, faces, is_separator = stack.pop()
        if is_separator or len(elems) <= leaf or len(faces) == 0:
            out.append(faces)
            continue
        c = cent[elems]
        ax = np.argmax(c.max(axis=0) - c.min(axis=0))
        order = np.argsort(c[:, ax], kind="stable")
        left, right = elems[order[:len(elems) // 2]], elems[order[len(elems) // 2:]]
        side[left], side[right] = 0, 1
        s0, s1 = side[fe[faces, 0]], side[fe[faces, 1]]
        stack.append((None, faces[s0 != s1], True))
        stack.append((right, faces[(s0 == 1) & (s1 == 1)], False))
        stack.append((left, faces[(s0 == 0) & (s1 == 0)], False))
    return np.concatenate(out)
