"""Triangle meshes, topology queries, normals and spatial search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

DEGENERATE_AREA = 1e-12
DEFAULT_NORMAL = np.array([0.0, 0.0, 1.0])


class MeshError(ValueError):
    pass


class NonManifoldError(MeshError):
    def __init__(self, edge):
        self.edge = tuple(int(i) for i in edge)
        super().__init__(f"non-manifold edge {self.edge}: used by 3 or more faces")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh.

    Arrays are copied and made read-only on construction, so a Mesh can be
    shared freely between threads.
    """

    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if f.size:
            bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
            if bad.size:
                i = int(bad[0])
                raise MeshError(f"face {i} {f[i].tolist()} references a vertex outside [0, {len(v)})")
            rep = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if rep.size:
                i = int(rep[0])
                raise MeshError(f"face {i} {f[i].tolist()} repeats a vertex")
        c = None
        if self.colors is not None:
            c = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(c) != len(v):
                raise MeshError("colors must have one RGB triple per vertex")
            if np.any(c < 0) or np.any(c > 1):
                raise MeshError("colors must lie in [0, 1]")
        n = None
        if self.normals is not None:
            n = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise MeshError("normals must have one vector per vertex")
            if np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
                raise MeshError("normals must be unit length")
        for name, arr in (("vertices", v), ("faces", f), ("colors", c), ("normals", n)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def replace(self, **changes) -> "Mesh":
        kw = dict(vertices=self.vertices, faces=self.faces, colors=self.colors, normals=self.normals)
        kw.update(changes)
        return Mesh(**kw)

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


@dataclass(frozen=True)
class RigidTransform:
    """Similarity transform ``x -> scale * rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise MeshError("rotation must be orthonormal with determinant +1")
        if not self.scale > 0:
            raise MeshError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation

    def apply_mesh(self, mesh: Mesh) -> Mesh:
        normals = None if mesh.normals is None else mesh.normals @ self.rotation.T
        return mesh.replace(vertices=self.apply(mesh.vertices), normals=normals)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()


# A boundary loop is a list of vertex indices; consecutive entries (and the
# last/first pair) are boundary edges, oriented as they appear in their face.
BoundaryLoop = List[int]


def face_normals(vertices, faces, normalize=True):
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    if normalize:
        length = np.linalg.norm(n, axis=1, keepdims=True)
        n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
    return n


def face_areas(vertices, faces):
    return 0.5 * np.linalg.norm(face_normals(vertices, faces, normalize=False), axis=1)


def _corner_angles(v, f):
    angles = np.empty(f.shape, dtype=np.float64)
    for c in range(3):
        a = v[f[:, (c + 1) % 3]] - v[f[:, c]]
        b = v[f[:, (c + 2) % 3]] - v[f[:, c]]
        # atan2 form stays accurate near 0 and pi.
        angles[:, c] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))
    return angles


def compute_vertex_normals(mesh: Mesh, weighting: str = "angle") -> np.ndarray:
    """Per-vertex unit normals from incident face normals.

    ``weighting`` is ``"uniform"`` (plain mean) or ``"angle"`` (each face
    weighted by its interior angle at the vertex). Faces with area below
    ``DEGENERATE_AREA`` are ignored; vertices with no incident face get
    ``(0, 0, 1)``.
    """
    if weighting not in ("uniform", "angle"):
        raise ValueError(f"unknown weighting {weighting!r}")
    v, f = mesh.vertices, mesh.faces
    if len(f) == 0:
        raise MeshError("normals need at least one face")
    fn = face_normals(v, f)
    valid = face_areas(v, f) >= DEGENERATE_AREA
    if weighting == "angle":
        w = _corner_angles(v, f)
    else:
        w = np.ones(f.shape)
    w = w * valid[:, None]

    acc = np.zeros_like(v)
    for c in range(3):
        np.add.at(acc, f[:, c], fn * w[:, c:c + 1])

    referenced = np.zeros(len(v), dtype=bool)
    referenced[f.ravel()] = True
    has_valid = np.zeros(len(v), dtype=bool)
    has_valid[f[valid].ravel()] = True
    bad = np.flatnonzero(referenced & ~has_valid)
    if bad.size:
        raise MeshError(f"vertex {int(bad[0])}: all incident faces are degenerate")

    length = np.linalg.norm(acc, axis=1)
    cancelled = np.flatnonzero(referenced & (length < 1e-15))
    if cancelled.size:
        raise MeshError(f"vertex {int(cancelled[0])}: incident face normals cancel out")
    out = np.tile(DEFAULT_NORMAL, (len(v), 1))
    out[referenced] = acc[referenced] / length[referenced, None]
    return out


def edge_face_counts(faces) -> dict:
    """Map each undirected edge ``(i, j)`` with ``i < j`` to its face count."""
    counts: dict = {}
    for tri in np.asarray(faces, dtype=np.int64):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            counts[key] = counts.get(key, 0) + 1
    return counts


def boundary_edges(mesh: Mesh) -> List[tuple]:
    """Directed boundary edges ``(a, b)`` in the orientation of their face."""
    counts = edge_face_counts(mesh.faces)
    for edge, n in counts.items():
        if n > 2:
            raise NonManifoldError(edge)
    out = []
    for tri in mesh.faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(a), int(b)) if a < b else (int(b), int(a))
            if counts[key] == 1:
                out.append((int(a), int(b)))
    return out


def boundary_loops(mesh: Mesh) -> List[BoundaryLoop]:
    """All closed cycles of edges used by exactly one face.

    Loops start at their smallest vertex index and are returned sorted by that
    index. A vertex where several loops touch is visited once per loop.
    """
    edges = boundary_edges(mesh)
    nxt: dict = {}
    for a, b in edges:
        nxt.setdefault(a, []).append(b)
    for outs in nxt.values():
        outs.sort()
    remaining = {(a, b) for a, b in edges}
    loops = []
    for start in sorted(nxt):
        while any((start, b) in remaining for b in nxt[start]):
            loop = [start]
            cur = start
            while True:
                b = next(b for b in nxt[cur] if (cur, b) in remaining)
                remaining.discard((cur, b))
                if b == start:
                    break
                loop.append(b)
                cur = b
                if not any((cur, c) in remaining for c in nxt.get(cur, ())):
                    raise MeshError(f"boundary is not closed at vertex {cur}")
            loops.append(loop)
    return loops


def _tie_break(points, query, candidates):
    d = np.sum((points[candidates] - query) ** 2, axis=1)
    best = candidates[d == d.min()]
    return int(best.min())


class VertexIndex:
    """KD-tree over mesh vertices; nearest queries break ties to the lowest index."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise MeshError("cannot search an empty vertex set")
        self._tree = cKDTree(self.points)

    def query(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 1:
            return np.zeros(len(queries), dtype=np.int64)
        dist, idx = self._tree.query(queries, k=2)
        out = np.asarray(idx[:, 0], dtype=np.int64).copy()
        # Re-check a slightly larger ball where the runner-up is (nearly) tied,
        # so exact ties resolve deterministically.
        radius = dist[:, 0] * (1 + 1e-9) + 1e-12
        for i in np.flatnonzero(dist[:, 1] <= radius):
            cand = self._tree.query_ball_point(queries[i], radius[i])
            out[i] = _tie_break(self.points, queries[i], np.asarray(cand, dtype=np.int64))
        return out


def nearest_vertex(query, mesh: Mesh) -> int:
    if mesh.n_vertices == 0:
        raise MeshError("nearest_vertex on an empty mesh")
    return int(VertexIndex(mesh.vertices).query(query)[0])


def inertia_axes(points) -> np.ndarray:
    """Principal axes of a point set as the columns of a rotation matrix.

    Columns are ordered by descending covariance eigenvalue. Each axis' sign is
    fixed so the third central moment along it is non-negative (falling back
    to the largest-magnitude component being positive), then the last axis is
    flipped if needed to make the frame right-handed.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) < 3:
        raise MeshError("inertia axes need at least 3 points")
    c = p - p.mean(axis=0)
    cov = c.T @ c / len(p)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[-1], 1e-300)
    if evals[-2] <= 1e-12 * scale:
        raise MeshError("degenerate point set: collinear or coincident points")
    order = np.argsort(evals)[::-1]
    axes = evecs[:, order]
    for k in range(3):
        proj = c @ axes[:, k]
        skew = np.sum(proj ** 3)
        if abs(skew) > 1e-9 * np.sum(np.abs(proj) ** 3) + 1e-300:
            sign = np.sign(skew)
        else:
            sign = np.sign(axes[np.argmax(np.abs(axes[:, k])), k])
        axes[:, k] *= sign
    if np.linalg.det(axes) < 0:
        axes[:, 2] *= -1
    return axes


def vertex_adjacency(mesh: Mesh) -> List[set]:
    adj = [set() for _ in range(mesh.n_vertices)]
    for a, b, c in mesh.faces:
        adj[a].update((b, c))
        adj[b].update((a, c))
        adj[c].update((a, b))
    return adj


def submesh(mesh: Mesh, keep: Sequence[int]):
    """Mesh restricted to ``keep`` vertices (faces fully inside survive).

    Returns the new mesh and the old->new index map (``-1`` for dropped).
    """
    keep = np.asarray(sorted(set(int(i) for i in keep)), dtype=np.int64)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    f = remap[mesh.faces] if mesh.n_faces else mesh.faces
    f = f[(f >= 0).all(axis=1)] if len(f) else f
    sub = Mesh(
        mesh.vertices[keep],
        f,
        None if mesh.colors is None else mesh.colors[keep],
        None if mesh.normals is None else mesh.normals[keep],
    )
    return sub, remap
