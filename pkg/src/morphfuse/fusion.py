"""Splice a face mesh into a body mesh and clean up the junction."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .body import BodyModel, BodyParams, pose_body, pose_body_jacobian
from .fitter import priors
from .mesh import (
    Mesh,
    RigidTransform,
    VertexIndex,
    boundary_loops,
    compute_vertex_normals,
    vertex_adjacency,
)

BODY, FACE, BRIDGE = "body", "face", "bridge"


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FaceRegionSpec:
    """Which body vertices the face replaces and how the seams pair up.

    ``correspondence`` holds ``(face_vertex, body_seam_vertex)`` pairs.
    """

    face_vertices: tuple
    seam_vertices: tuple
    correspondence: tuple
    neck_vertices: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "face_vertices", tuple(sorted(int(i) for i in self.face_vertices)))
        object.__setattr__(self, "seam_vertices", tuple(int(i) for i in self.seam_vertices))
        object.__setattr__(self, "correspondence", tuple((int(f), int(b)) for f, b in self.correspondence))
        object.__setattr__(self, "neck_vertices", tuple(int(i) for i in self.neck_vertices))
        fs = [f for f, _ in self.correspondence]
        bs = [b for _, b in self.correspondence]
        if len(set(fs)) != len(fs) or len(set(bs)) != len(bs):
            raise FusionError("seam correspondence must be one-to-one")
        if set(self.face_vertices) & set(self.seam_vertices):
            raise FusionError("seam vertices must not be removed with the face region")

    def validate(self, body: Mesh, face: Optional[Mesh] = None) -> None:
        nv = body.n_vertices
        for name in ("face_vertices", "seam_vertices", "neck_vertices"):
            bad = [i for i in getattr(self, name) if not 0 <= i < nv]
            if bad:
                raise FusionError(f"{name} has index {bad[0]} outside the body mesh ({nv} vertices)")
        missing = set(self.seam_vertices) - {b for _, b in self.correspondence}
        if missing:
            raise FusionError(f"seam vertex {min(missing)} has no face correspondence")
        if face is not None:
            bad = [f for f, _ in self.correspondence if not 0 <= f < face.n_vertices]
            if bad:
                raise FusionError(f"correspondence face index {bad[0]} outside the face mesh")
        if self.face_vertices:
            adj = vertex_adjacency(body)
            removed = set(self.face_vertices)
            for s in self.seam_vertices:
                if not adj[s] & removed:
                    raise FusionError(f"seam vertex {s} is not adjacent to the removed face region")

    def to_json(self):
        return {"face_vertices": list(self.face_vertices), "seam_vertices": list(self.seam_vertices),
                "correspondence": [list(p) for p in self.correspondence],
                "neck_vertices": list(self.neck_vertices)}

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(obj["face_vertices"], obj.get("seam_vertices", []), obj.get("correspondence", []),
                       obj.get("neck_vertices", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise FusionError(f"invalid face region spec: {exc}") from None


@dataclass(frozen=True, eq=False)
class FusionResult:
    """Fused mesh with per-vertex provenance.

    ``body_index[i]`` is the new index of body vertex ``i`` (``-1`` if removed);
    face vertex ``f`` lives at ``face_offset + f``.
    """

    mesh: Mesh
    provenance: np.ndarray
    body_index: np.ndarray
    face_offset: int
    n_face_vertices: int
    seam_loss: float = 0.0
    loss_trace: tuple = ()

    def __post_init__(self):
        if len(self.provenance) != self.mesh.n_vertices:
            raise FusionError("provenance must tag every vertex exactly once")

    def counts(self):
        return {tag: int(np.sum(self.provenance == tag)) for tag in (BODY, FACE, BRIDGE)}


def copy_paste_fuse(body: Mesh, face: Mesh, spec: FaceRegionSpec, align: RigidTransform = None) -> FusionResult:
    """Remove the face region from ``body`` and append the (aligned) face mesh.

    Body faces touching a removed vertex are dropped; the seam loss of the
    result is filled in against ``body``.
    """
    if not spec.face_vertices and face.n_vertices:
        raise FusionError("face region is empty but a face mesh was given")
    spec.validate(body, face)
    if align is not None:
        face = align.apply_mesh(face)
    removed = np.zeros(body.n_vertices, dtype=bool)
    removed[list(spec.face_vertices)] = True
    keep = np.flatnonzero(~removed)
    body_index = np.full(body.n_vertices, -1, dtype=np.int64)
    body_index[keep] = np.arange(len(keep))
    bf = body.faces[~removed[body.faces].any(axis=1)] if body.n_faces else body.faces
    offset = len(keep)
    verts = np.vstack([body.vertices[keep], face.vertices])
    faces = np.vstack([body_index[bf], face.faces + offset]).astype(np.int64)
    colors = None
    if body.colors is not None or face.colors is not None:
        bc = body.colors[keep] if body.colors is not None else np.full((len(keep), 3), 0.7)
        fc = face.colors if face.colors is not None else np.full((face.n_vertices, 3), 0.7)
        colors = np.vstack([bc, fc])
    prov = np.array([BODY] * len(keep) + [FACE] * face.n_vertices, dtype="<U6")
    result = FusionResult(Mesh(verts, faces, colors), prov, body_index, offset, face.n_vertices)
    return replace(result, seam_loss=seam_loss(result, body, spec))


def seam_loss(fused: FusionResult, body: Mesh, spec: FaceRegionSpec) -> float:
    """Sum of squared distances between paired fused-face and body seam vertices."""
    spec.validate(body)
    pairs = np.array(spec.correspondence, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return 0.0
    if np.any(pairs[:, 0] >= fused.n_face_vertices):
        raise FusionError("correspondence refers to a face vertex missing from the fused mesh")
    fv = fused.mesh.vertices[fused.face_offset + pairs[:, 0]]
    bv = body.vertices[pairs[:, 1]]
    return float(np.sum((fv - bv) ** 2))


def combined_loss(body_model, params, face, spec, lambda_pose, lambda_shape):
    body_mesh, _ = pose_body(body_model, params)
    pairs = np.array(spec.correspondence, dtype=np.int64).reshape(-1, 2)
    ls = float(np.sum((face.vertices[pairs[:, 0]] - body_mesh.vertices[pairs[:, 1]]) ** 2))
    return ls + priors(params.beta, params.theta, lambda_pose, lambda_shape), ls


def optimize_seam(body_model: BodyModel, params: BodyParams, face: Mesh, spec: FaceRegionSpec,
                  lambda_pose=0.0, lambda_shape=0.0, max_iter=100, tol=1e-14):
    """Refine body parameters to close the seam against a fixed, aligned face.

    Minimises ``seam_loss + lambda_pose * E_pose + lambda_shape * E_shape``
    with damped Gauss-Newton steps; a step is kept only if the combined loss
    drops. The camera does not affect the 3-D seam and is left unchanged.
    Returns ``(params, FusionResult)``; ``loss_trace`` holds accepted losses.
    """
    if lambda_pose < 0 or lambda_shape < 0:
        raise ValueError("prior weights must be non-negative")
    pairs = np.array(spec.correspondence, dtype=np.int64).reshape(-1, 2)
    nb, nj = body_model.n_betas, body_model.n_joints
    n = nb + 3 * nj
    target = face.vertices[pairs[:, 0]] if len(pairs) else np.zeros((0, 3))
    loss, _ = combined_loss(body_model, params, face, spec, lambda_pose, lambda_shape)
    if not np.isfinite(loss):
        raise FusionError("combined seam loss is not finite")
    trace = [loss]
    mu = 1e-3
    for _ in range(int(max_iter)):
        if loss == 0.0 or len(pairs) == 0:
            break
        verts, d_verts, _, _ = pose_body_jacobian(body_model, params, vertex_ids=pairs[:, 1])
        r = [(verts - target).ravel()]
        jac = [d_verts.reshape(-1, n)]
        if lambda_shape > 0:
            jb = np.zeros((nb, n))
            jb[:, :nb] = np.sqrt(lambda_shape) * np.eye(nb)
            r.append(np.sqrt(lambda_shape) * params.beta)
            jac.append(jb)
        if lambda_pose > 0:
            na = 3 * (nj - 1)
            jp = np.zeros((na, n))
            jp[:, nb + 3:] = np.sqrt(lambda_pose) * np.eye(na)
            r.append(np.sqrt(lambda_pose) * params.theta[3:])
            jac.append(jp)
        r, jac = np.concatenate(r), np.vstack(jac)
        jtj, g = jac.T @ jac, jac.T @ r
        diag = np.maximum(np.diag(jtj), 1e-12)
        x = np.concatenate([params.beta, params.theta])
        accepted = False
        while mu < 1e12:
            step = np.linalg.solve(jtj + mu * np.diag(diag), -g)
            cand = BodyParams(x[:nb] + step[:nb], x[nb:] + step[nb:], params.scale, params.translation)
            cand_loss, _ = combined_loss(body_model, cand, face, spec, lambda_pose, lambda_shape)
            if np.isfinite(cand_loss) and cand_loss < loss:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            break
        decrease = loss - cand_loss
        params, loss = cand, cand_loss
        trace.append(loss)
        mu = max(mu * 0.3, 1e-15)
        if decrease < tol:
            break
    body_mesh, _ = pose_body(body_model, params)
    fused = copy_paste_fuse(body_mesh, face, spec)
    return params, replace(fused, loss_trace=tuple(trace))


def _newell(points):
    p = np.asarray(points)
    q = np.roll(p, -1, axis=0)
    return np.sum(np.cross(p, q), axis=0)


def _arc_params(points):
    p = np.asarray(points)
    seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
    total = seg.sum()
    if total <= 1e-15:
        return np.arange(len(p)) / len(p)
    return np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / total


def _point_at(points, params, t):
    p = np.asarray(points)
    n = len(p)
    k = np.searchsorted(params, t, side="right") - 1
    k = min(max(k, 0), n - 1)
    t0 = params[k]
    t1 = params[k + 1] if k + 1 < n else 1.0
    f = 0.0 if t1 - t0 <= 1e-15 else (t - t0) / (t1 - t0)
    return (1 - f) * p[k] + f * p[(k + 1) % n]


def _zipper(ia, ta, ib, tb):
    """Triangle strip between two rings in the same rotational sense."""
    na, nb = len(ia), len(ib)
    ta = np.append(ta, 1.0)
    tb = np.append(tb, 1.0)
    tris = []
    i = j = 0
    while i < na or j < nb:
        adv_a = j == nb or (i < na and ta[i + 1] <= tb[j + 1])
        if adv_a:
            tris.append((ia[i % na], ia[(i + 1) % na], ib[j % nb]))
            i += 1
        else:
            tris.append((ia[i % na], ib[(j + 1) % nb], ib[j % nb]))
            j += 1
    return tris


def bridge_boundaries(fused: FusionResult, loop_a, loop_b) -> FusionResult:
    """Close the gap between two boundary loops with a triangle strip.

    Loops are matched by angular order around their centroids. When one loop
    has more than twice as many vertices as the other, an intermediate ring of
    midpoints (tagged ``bridge``) is inserted between them.
    """
    a = [int(i) for i in loop_a]
    b = [int(i) for i in loop_b]
    if len(a) < 3 or len(b) < 3:
        raise FusionError("bridged loops need at least 3 vertices each")
    if set(a) & set(b):
        raise FusionError("bridged loops overlap")
    nv = fused.mesh.n_vertices
    if any(not 0 <= i < nv for i in a + b):
        raise FusionError("loop index outside the fused mesh")
    verts = fused.mesh.vertices
    # Bridge triangles must traverse each boundary edge against its face, so walk `a` backwards.
    ring_a = a[::-1]
    pa, pb = verts[ring_a], verts[b]
    normal = _newell(pa - pa.mean(axis=0))
    if np.linalg.norm(normal) < 1e-15:
        normal = _newell(pb - pb.mean(axis=0))
    ring_b = b
    if np.dot(_newell(pb - pb.mean(axis=0)), normal) < 0:
        ring_b = b[::-1]
        pb = verts[ring_b]
    nrm = np.linalg.norm(normal)
    if nrm > 1e-15:
        normal = normal / nrm
        e1 = pa[0] - pa.mean(axis=0)
        e1 = e1 - np.dot(e1, normal) * normal
        if np.linalg.norm(e1) < 1e-15:
            e1 = np.cross(normal, [1.0, 0.0, 0.0])
            if np.linalg.norm(e1) < 1e-9:
                e1 = np.cross(normal, [0.0, 1.0, 0.0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(normal, e1)
        rel = pb - pb.mean(axis=0)
        ang = np.arctan2(rel @ e2, rel @ e1)
        start = int(np.argmin(np.abs(np.angle(np.exp(1j * ang)))))
    else:
        start = int(VertexIndex(pb).query(pa[0])[0])
    ring_b = ring_b[start:] + ring_b[:start]
    pb = verts[ring_b]
    ta, tb = _arc_params(pa), _arc_params(pb)

    new_verts = []
    if max(len(a), len(b)) > 2 * min(len(a), len(b)):
        m = int(round((len(a) + len(b)) / 2))
        tm = np.arange(m) / m
        mids = [0.5 * (_point_at(pa, ta, t) + _point_at(pb, tb, t)) for t in tm]
        ring_m = list(range(nv, nv + m))
        new_verts = mids
        tris = _zipper(ring_a, ta, ring_m, tm) + _zipper(ring_m, tm, ring_b, tb)
    else:
        tris = _zipper(ring_a, ta, ring_b, tb)
    return _append(fused, new_verts, tris)


def _append(fused: FusionResult, new_verts, tris) -> FusionResult:
    m = fused.mesh
    verts = np.vstack([m.vertices, np.array(new_verts).reshape(-1, 3)])
    faces = np.vstack([m.faces, np.array(tris, dtype=np.int64).reshape(-1, 3)])
    colors = None
    if m.colors is not None:
        extra = np.full((len(new_verts), 3), 0.7)
        colors = np.vstack([m.colors, extra])
    prov = np.concatenate([fused.provenance, np.array([BRIDGE] * len(new_verts), dtype="<U6")])
    return replace(fused, mesh=Mesh(verts, faces, colors), provenance=prov)


def fill_hole(fused: FusionResult, loop) -> FusionResult:
    """Close a single boundary loop with a fan around a new centroid vertex."""
    loop = [int(i) for i in loop]
    if len(loop) < 3:
        raise FusionError("hole loops need at least 3 vertices")
    c = fused.mesh.vertices[loop].mean(axis=0)
    ci = fused.mesh.n_vertices
    tris = [(loop[(i + 1) % len(loop)], loop[i], ci) for i in range(len(loop))]
    return _append(fused, [c], tris)


def seam_loops(fused: FusionResult):
    """The body-side and face-side boundary loops (``None`` when absent)."""
    body_loop = face_loop = None
    for loop in boundary_loops(fused.mesh):
        tags = set(fused.provenance[loop])
        if tags == {BODY} and body_loop is None:
            body_loop = loop
        elif tags == {FACE} and face_loop is None:
            face_loop = loop
    return body_loop, face_loop


def stitch(fused: FusionResult) -> FusionResult:
    """Bridge the body hole to the face border, or fan-fill whichever is left open."""
    body_loop, face_loop = seam_loops(fused)
    if body_loop is not None and face_loop is not None:
        return bridge_boundaries(fused, body_loop, face_loop)
    for loop in (body_loop, face_loop):
        if loop is not None:
            fused = fill_hole(fused, loop)
    return fused


def smooth_merged_normals(fused: FusionResult) -> FusionResult:
    n = compute_vertex_normals(fused.mesh, "angle")
    return replace(fused, mesh=fused.mesh.replace(normals=n))


def transfer_neck_normals(fused: FusionResult, body: Mesh, neck_vertices, radius=None) -> FusionResult:
    """Copy body neck normals onto nearby face/bridge vertices of the fused mesh.

    Affected vertices are those tagged ``face`` or ``bridge`` within ``radius``
    of the neck centroid (default: the neck set's bounding radius); each takes
    the normal of its nearest neck vertex. Positions are not touched.
    """
    neck = np.asarray(list(neck_vertices), dtype=np.int64)
    if neck.size == 0:
        raise FusionError("neck vertex set is empty")
    body_n = body.normals if body.normals is not None else compute_vertex_normals(body, "angle")
    npts = body.vertices[neck]
    center = npts.mean(axis=0)
    if radius is None:
        radius = float(np.max(np.linalg.norm(npts - center, axis=1)))
    m = fused.mesh
    normals = m.normals if m.normals is not None else compute_vertex_normals(m, "angle")
    normals = np.array(normals)
    sel = np.flatnonzero(np.isin(fused.provenance, (FACE, BRIDGE))
                         & (np.linalg.norm(m.vertices - center, axis=1) <= radius))
    if sel.size:
        nn = VertexIndex(npts).query(m.vertices[sel])
        normals[sel] = body_n[neck[nn]]
    return replace(fused, mesh=m.replace(normals=normals))
