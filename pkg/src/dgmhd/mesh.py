"""Conforming tetrahedral meshes of the unit cube and a small ASCII importer."""
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .fem.quadrature import make_quadrature

BOUNDARY = -1

# local face i is opposite local vertex i
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])


class MeshError(ValueError):
    """Raised for malformed or invalid mesh input."""


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral mesh with face connectivity and geometric data.

    Faces are keyed by their sorted vertex triple; the owner of a face is the
    incident element with the lower id and normals point out of the owner.
    """

    vertices: np.ndarray
    tets: np.ndarray
    faces: np.ndarray
    face_owner: np.ndarray
    face_neighbor: np.ndarray
    face_local_owner: np.ndarray
    face_local_neighbor: np.ndarray
    elem_faces: np.ndarray
    boundary_flags: np.ndarray
    volumes: np.ndarray
    face_areas: np.ndarray
    h_K: np.ndarray
    h_F: np.ndarray
    normals: np.ndarray
    edges: np.ndarray = field(repr=False)

    @property
    def n_elements(self):
        return len(self.tets)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def h(self):
        return float(self.h_K.max())

    @property
    def interior_faces(self):
        return np.flatnonzero(~self.boundary_flags)

    @property
    def boundary_faces(self):
        return np.flatnonzero(self.boundary_flags)

    @property
    def face_adjacency(self):
        """Per face: (owner, neighbor or BOUNDARY, local index in owner, in neighbor)."""
        return np.stack([self.face_owner, self.face_neighbor,
                         self.face_local_owner, self.face_local_neighbor], axis=1)

    def jacobians(self):
        v = self.vertices[self.tets]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0], v[:, 3] - v[:, 0]], axis=2)

    def inradii(self):
        area_sum = self.face_areas[self.elem_faces].sum(axis=1)
        return 3.0 * self.volumes / area_sum


def _signed_volumes(vertices, tets):
    v = vertices[tets]
    return np.einsum("ij,ij->i", v[:, 1] - v[:, 0],
                     np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0


def _pairwise_max_dist(pts):
    d = 0.0
    m = pts.shape[1]
    for i in range(m):
        for j in range(i + 1, m):
            d = np.maximum(d, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
    return d


def mesh_from_arrays(vertices, tets):
    """Build a TetMesh, recomputing all connectivity from the element list."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or len(vertices) == 0:
        raise MeshError("vertices must be a non-empty (nv, 3) array")
    if tets.ndim != 2 or tets.shape[1] != 4 or len(tets) == 0:
        raise MeshError("tets must be a non-empty (nt, 4) array")
    if tets.min() < 0 or tets.max() >= len(vertices):
        bad = int(np.flatnonzero((tets < 0).any(1) | (tets >= len(vertices)).any(1))[0])
        raise MeshError(f"element {bad} references a vertex id out of range")
    srt = np.sort(tets, axis=1)
    if (np.diff(srt, axis=1) == 0).any():
        bad = int(np.flatnonzero((np.diff(srt, axis=1) == 0).any(1))[0])
        raise MeshError(f"element {bad} repeats a vertex")
    _, inv_e, counts = np.unique(srt, axis=0, return_inverse=True, return_counts=True)
    if (counts > 1).any():
        dup = np.flatnonzero(inv_e.ravel() == np.flatnonzero(counts > 1)[0])
        raise MeshError(f"duplicate element: elements {dup.tolist()} share the same vertices")
    vol = _signed_volumes(vertices, tets)
    scale = np.max(np.ptp(vertices, axis=0)) ** 3
    if (vol <= 1e-14 * scale).any():
        bad = int(np.flatnonzero(vol <= 1e-14 * scale)[0])
        raise MeshError(f"element {bad} is inverted or degenerate (signed volume {vol[bad]:.3e})")

    nt = len(tets)
    lf = tets[:, LOCAL_FACES]                      # (nt, 4, 3)
    keys = np.sort(lf, axis=2).reshape(-1, 3)
    faces, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if (counts > 2).any():
        f = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"non-conforming mesh: face {faces[f].tolist()} shared by {counts[f]} elements")
    nf = len(faces)
    elem_of = np.repeat(np.arange(nt), 4)
    local_of = np.tile(np.arange(4), nt)
    order = np.lexsort((elem_of, inv))
    owner = np.full(nf, BOUNDARY, dtype=np.int64)
    neighbor = np.full(nf, BOUNDARY, dtype=np.int64)
    lo = np.full(nf, BOUNDARY, dtype=np.int64)
    ln = np.full(nf, BOUNDARY, dtype=np.int64)
    sorted_faces = inv[order]
    start = np.searchsorted(sorted_faces, np.arange(nf))
    owner[:] = elem_of[order[start]]
    lo[:] = local_of[order[start]]
    two = counts == 2
    second = order[start[two] + 1]
    neighbor[two] = elem_of[second]
    ln[two] = local_of[second]
    elem_faces = inv.reshape(nt, 4)
    boundary = ~two

    fv = vertices[faces]
    cr = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    normals = cr / (2.0 * area[:, None])
    # orient outward from the owner: compare with the opposite vertex
    opp = vertices[tets[owner, lo]]
    s = np.einsum("ij,ij->i", normals, opp - fv[:, 0])
    normals[s > 0] *= -1.0

    h_K = _pairwise_max_dist(vertices[tets])
    h_F = _pairwise_max_dist(fv)
    edges = np.unique(np.sort(tets[:, [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]].reshape(-1, 2),
                              axis=1), axis=0)
    arrays = [vertices, tets, faces, owner, neighbor, lo, ln, elem_faces, boundary,
              vol, area, h_K, h_F, normals, edges]
    for a in arrays:
        a.setflags(write=False)
    return TetMesh(*arrays)


def build_structured_tet_mesh(n):
    """Kuhn (6-tet) subdivision of the unit cube with ``n`` cells per axis."""
    if int(n) != n or n < 1:
        raise ValueError(f"invalid-argument: subdivisions n must be >= 1, got {n}")
    n = int(n)
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for perm in permutations(range(3)):
                    p = np.array([i, j, k])
                    path = [vid(*p)]
                    for ax in perm:
                        p = p.copy()
                        p[ax] += 1
                        path.append(vid(*p))
                    tets.append(path)
    tets = np.array(tets, dtype=np.int64)
    vol = _signed_volumes(vertices, tets)
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return mesh_from_arrays(vertices, tets)


def _strip(line):
    return line.split("#", 1)[0].strip()


def load_ascii_mesh(path):
    """Read the ASCII format: ``nv nt``, nv lines ``x y z``, nt lines ``v0 v1 v2 v3``.

    Vertex ids are 0-based; ``#`` starts a comment.  Connectivity is always
    recomputed from the elements.
    """
    with open(path) as fh:
        raw = fh.readlines()
    lines = [(i + 1, _strip(s)) for i, s in enumerate(raw)]
    lines = [(i, s) for i, s in lines if s]
    if not lines:
        raise MeshError(f"{path}: empty mesh file")
    lineno, head = lines[0]
    try:
        nv, nt = (int(t) for t in head.split())
    except ValueError:
        raise MeshError(f"{path}:{lineno}: expected header 'nv nt', got {head!r}") from None
    if nv <= 0 or nt <= 0:
        raise MeshError(f"{path}:{lineno}: counts must be positive")
    if len(lines) < 1 + nv + nt:
        raise MeshError(f"{path}: expected {nv} vertices and {nt} elements, file ends early")
    verts = np.empty((nv, 3))
    for r, (ln, s) in enumerate(lines[1:1 + nv]):
        try:
            vals = [float(t) for t in s.split()]
        except ValueError:
            raise MeshError(f"{path}:{ln}: bad vertex line {s!r}") from None
        if len(vals) != 3:
            raise MeshError(f"{path}:{ln}: vertex line needs 3 coordinates")
        verts[r] = vals
    tets = np.empty((nt, 4), dtype=np.int64)
    for r, (ln, s) in enumerate(lines[1 + nv:1 + nv + nt]):
        try:
            vals = [int(t) for t in s.split()]
        except ValueError:
            raise MeshError(f"{path}:{ln}: bad element line {s!r}") from None
        if len(vals) != 4:
            raise MeshError(f"{path}:{ln}: element line needs 4 vertex ids")
        tets[r] = vals
    if len(lines) > 1 + nv + nt:
        ln = lines[1 + nv + nt][0]
        raise MeshError(f"{path}:{ln}: trailing data after {nt} elements")
    return mesh_from_arrays(verts, tets)


def write_ascii_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"{len(mesh.vertices)} {len(mesh.tets)}\n")
        for x in mesh.vertices:
            fh.write(" ".join(repr(float(c)) for c in x) + "\n")
        for t in mesh.tets:
            fh.write(" ".join(str(int(v)) for v in t) + "\n")


@dataclass(frozen=True, eq=False)
class FaceFrames:
    """Face quadrature data shared by both sides of every face.

    ``points[f, q]`` are physical points; the owner and neighbor reference
    coordinates map to the same physical point, so quadrature point q on one
    side corresponds to point q on the other.
    """

    points: np.ndarray
    weights: np.ndarray
    ref_points: np.ndarray
    owner_xi: np.ndarray
    neighbor_xi: np.ndarray
    tangents: np.ndarray


def reference_coords(mesh, elems, x):
    """Reference coordinates of physical points ``x`` (m, q, 3) in elements ``elems``."""
    jac = mesh.jacobians()[elems]
    v0 = mesh.vertices[mesh.tets[elems, 0]]
    return np.einsum("mij,mqj->mqi", np.linalg.inv(jac), x - v0[:, None, :])


def face_trace_frames(mesh, degree=4):
    """Quadrature points, owner/neighbor reference coordinates and a tangent frame per face."""
    rule = make_quadrature("tri", degree)
    fv = mesh.vertices[mesh.faces]
    s, t = rule.points[:, 0], rule.points[:, 1]
    pts = (fv[:, None, 0] + s[None, :, None] * (fv[:, None, 1] - fv[:, None, 0])
           + t[None, :, None] * (fv[:, None, 2] - fv[:, None, 0]))
    wts = 2.0 * mesh.face_areas[:, None] * rule.weights[None, :]
    owner_xi = reference_coords(mesh, mesh.face_owner, pts)
    nb = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
    neighbor_xi = reference_coords(mesh, nb, pts)
    neighbor_xi[mesh.boundary_flags] = np.nan
    t1 = fv[:, 1] - fv[:, 0]
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(mesh.normals, t1)
    return FaceFrames(pts, wts, rule.points, owner_xi, neighbor_xi, np.stack([t1, t2], axis=1))
