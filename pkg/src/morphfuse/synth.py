"""Deterministic toy assets: a small body model, face models and a paired scene.

Real SMPL / FaceScape assets are license-restricted, so tests and the CLI run
on these seeded stand-ins.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel, BodyParams, Keypoints2D, pose_body, project
from .face import FaceCoefficients, MorphableFaceModel
from .mesh import Mesh, submesh

BODY_PARENTS = (-1, 0, 1, 2, 3)
BODY_JOINT_HEIGHTS = (0.25, 0.7, 1.15, 1.5, 1.8)
HEAD_CUT = 1.62  # vertices above this height form the head region


def _smooth_field(rng, points, n_bumps=4, amplitude=0.05, width=0.5):
    """Sum of random Gaussian bumps with random 3-D directions."""
    out = np.zeros_like(points)
    lo, hi = points.min(axis=0), points.max(axis=0)
    for _ in range(n_bumps):
        c = rng.uniform(lo, hi)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        g = np.exp(-np.sum((points - c) ** 2, axis=1) / (2 * width ** 2))
        out += amplitude * g[:, None] * d
    return out


def tube_mesh(n_rings=12, n_segments=16, height=2.0, profile=None):
    """Closed surface of revolution about +Z with a pole at each end.

    Returns the mesh and the ring index of every vertex (-1 bottom pole,
    ``n_rings`` top pole).
    """
    if profile is None:
        profile = lambda z: 0.22 + 0.06 * np.sin(np.pi * z / height)  # noqa: E731
    verts = [(0.0, 0.0, 0.0)]
    ring_of = [-1]
    zs = np.linspace(0.0, height, n_rings + 2)[1:-1]
    for r, z in enumerate(zs):
        rad = profile(z)
        for s in range(n_segments):
            a = 2 * np.pi * s / n_segments
            verts.append((rad * np.cos(a), rad * np.sin(a), z))
            ring_of.append(r)
    verts.append((0.0, 0.0, height))
    ring_of.append(n_rings)
    top = len(verts) - 1

    def idx(r, s):
        return 1 + r * n_segments + (s % n_segments)

    faces = []
    for s in range(n_segments):
        faces.append((0, idx(0, s + 1), idx(0, s)))
    for r in range(n_rings - 1):
        for s in range(n_segments):
            a, b = idx(r, s), idx(r, s + 1)
            c, d = idx(r + 1, s), idx(r + 1, s + 1)
            faces.append((a, b, d))
            faces.append((a, d, c))
    for s in range(n_segments):
        faces.append((idx(n_rings - 1, s), idx(n_rings - 1, s + 1), top))
    return Mesh(np.array(verts), np.array(faces)), np.array(ring_of)


def _body_profile(z):
    # torso, narrow neck, round head
    torso = 0.2 + 0.08 * np.sin(np.pi * np.clip(z / 1.45, 0, 1))
    head = 0.16 * np.sqrt(np.clip(1 - ((z - 1.78) / 0.3) ** 2, 0, 1))
    neck = 0.09
    if z < 1.45:
        return torso
    if z < 1.55:
        return neck
    return max(head, neck)


def make_body_model(seed=0, n_rings=12, n_segments=16, n_betas=4) -> BodyModel:
    """Five-joint chain body (V = n_rings * n_segments + 2)."""
    rng = np.random.default_rng(seed)
    base, _ = tube_mesh(n_rings, n_segments, 2.0, _body_profile)
    v = base.vertices.copy()
    v += _smooth_field(rng, v, n_bumps=4, amplitude=0.015, width=0.3)
    # asymmetric "nose" on the head so the head region has no rotational symmetry
    nose = np.array([0.0, 0.16, 1.8])
    v += 0.04 * np.exp(-np.sum((v - nose) ** 2, axis=1) / (2 * 0.05 ** 2))[:, None] * np.array([0, 1.0, 0])
    template = Mesh(v, base.faces)

    nv = len(v)
    heights = np.array(BODY_JOINT_HEIGHTS)
    k = len(heights)
    shape_basis = np.zeros((nv, 3, n_betas))
    shape_basis[:, 2, 0] = 0.1 * v[:, 2]                       # height
    shape_basis[:, :2, 1 % n_betas] += 0.1 * v[:, :2]          # girth
    for b in range(2, n_betas):
        shape_basis[:, :, b] = _smooth_field(rng, v, n_bumps=3, amplitude=0.05, width=0.4)

    pose_basis = np.zeros((nv, 3, 9 * k))
    for j in range(1, k):
        for c in range(9):
            pose_basis[:, :, 9 * j + c] = _smooth_field(rng, v, n_bumps=1, amplitude=0.01, width=0.3)

    dz = v[:, 2][None, :] - heights[:, None]                  # K x V
    reg = np.exp(-(dz / 0.08) ** 2) * (1 + 0.1 * rng.random((k, nv)))
    reg /= reg.sum(axis=1, keepdims=True)

    # each vertex blends between the joints bounding its height
    zc = np.clip(v[:, 2], heights[0], heights[-1])
    seg = np.clip(np.searchsorted(heights, zc) - 1, 0, k - 2)
    t = (zc - heights[seg]) / (heights[seg + 1] - heights[seg])
    t = np.clip(t, 0, 1)
    weights = np.zeros((nv, k))
    weights[np.arange(nv), seg] = np.cos(t * np.pi / 2) ** 2
    weights[np.arange(nv), seg + 1] += np.sin(t * np.pi / 2) ** 2
    weights += 0.02 * rng.random((nv, k))
    weights /= weights.sum(axis=1, keepdims=True)

    return BodyModel(template, shape_basis, pose_basis, reg, weights, BODY_PARENTS)


def face_patch(nx=15, ny=17, seed=0):
    """Open height-field face patch with a nose and seeded asymmetric bumps."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(-1.0, 1.0, nx)
    ys = np.linspace(-1.3, 1.3, ny)
    gx, gy = np.meshgrid(xs, ys)
    gz = 0.6 * np.sqrt(np.clip(1.2 - gx ** 2 / 1.2 - gy ** 2 / 2.0, 0.05, None))
    gz += 0.35 * np.exp(-((gx - 0.05) ** 2 + (gy + 0.1) ** 2) / (2 * 0.12 ** 2))
    v = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    v += _smooth_field(rng, v, n_bumps=5, amplitude=0.06, width=0.4)
    faces = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            faces.append((a, a + 1, a + nx + 1))
            faces.append((a, a + nx + 1, a + nx))
    return Mesh(v, np.array(faces))


def make_face_model(seed=0, n_id=10, n_exp=5, n_tex=5, template=None) -> MorphableFaceModel:
    rng = np.random.default_rng(seed + 1000)
    if template is None:
        template = face_patch(seed=seed)
    v = template.vertices
    scale = float(np.ptp(v, axis=0).max())

    def basis(n, amp):
        return np.stack([_smooth_field(rng, v, n_bumps=3, amplitude=amp * scale, width=0.3 * scale)
                         for _ in range(n)], axis=2)

    mean_tex = np.clip(np.array([0.8, 0.6, 0.5]) + 0.05 * rng.standard_normal((len(v), 3)), 0, 1)
    return MorphableFaceModel(template, mean_tex, basis(n_id, 0.04), basis(n_exp, 0.02), basis(n_tex, 0.1))


@dataclass
class Scene:
    body_model: BodyModel
    face_model: MorphableFaceModel
    true_params: BodyParams
    init_params: BodyParams
    keypoints: Keypoints2D
    face_coeffs: FaceCoefficients
    region: dict
    offset_face: Mesh
    fuse_params: BodyParams
    gt_body: Mesh
    gt_joints: np.ndarray


def head_region(body: BodyModel, cut=HEAD_CUT):
    """Head vertex set, the seam ring just below it, and the neck ring."""
    z = body.template.vertices[:, 2]
    face_vertices = np.flatnonzero(z > cut)
    below = np.flatnonzero(z <= cut)
    face_set = set(face_vertices.tolist())
    seam = sorted({int(i) for tri in body.template.faces if any(t in face_set for t in tri)
                   for i in tri if i not in face_set})
    seam_set = set(seam)
    neck = sorted({int(i) for tri in body.template.faces if any(t in seam_set for t in tri)
                   for i in tri if i not in face_set} | seam_set)
    return face_vertices, np.array(seam), np.array(neck), below


def extract_head(body_mesh: Mesh, face_vertices, seam_vertices):
    """Head patch including the seam ring, plus body->patch index map."""
    keep = np.concatenate([face_vertices, seam_vertices])
    face_set = set(int(i) for i in face_vertices)
    tri_keep = np.array([any(int(t) in face_set for t in tri) for tri in body_mesh.faces])
    patch_src = Mesh(body_mesh.vertices, body_mesh.faces[tri_keep])
    patch, remap = submesh(patch_src, keep)
    return patch, remap


def make_scene(seed=0, z_offset=0.08) -> Scene:
    """Body + face fixture where the face was cut from the body's own head.

    ``offset_face`` is the head of the body posed with a taller shape, which
    lifts its seam ring along +Z by roughly ``z_offset`` relative to the body
    posed at ``fuse_params`` (true shape, rest pose).
    """
    rng = np.random.default_rng(seed)
    body = make_body_model(seed)
    k = body.n_joints
    theta = np.zeros(3 * k)
    theta[3:] = rng.uniform(-0.25, 0.25, size=3 * (k - 1))
    theta[:3] = rng.uniform(-0.2, 0.2, size=3)
    beta = rng.uniform(-0.5, 0.5, size=body.n_betas)
    true = BodyParams(beta, theta, 100.0, np.array([256.0, 256.0]))
    init = BodyParams(beta + rng.uniform(-0.05, 0.05, body.n_betas),
                      theta + rng.uniform(-0.05, 0.05, 3 * k),
                      true.scale + rng.uniform(-0.05, 0.05), true.translation + rng.uniform(-0.05, 0.05, 2))
    mesh, joints = pose_body(body, true)
    kp = Keypoints2D(project(joints, true.scale, true.translation), np.ones(k))

    face_vertices, seam, neck, _ = head_region(body)
    rest_head, remap = extract_head(body.template, face_vertices, seam)
    face_model = make_face_model(seed, n_id=6, n_exp=3, n_tex=3, template=rest_head)
    correspondence = [[int(remap[b]), int(b)] for b in seam]
    region = {
        "face_vertices": [int(i) for i in face_vertices],
        "seam_vertices": [int(i) for i in seam],
        "correspondence": correspondence,
        "neck_vertices": [int(i) for i in neck],
    }
    coeffs = FaceCoefficients(0.5 * rng.standard_normal(6), 0.5 * rng.standard_normal(3),
                              0.5 * rng.standard_normal(3))

    ring_z = float(np.mean(body.template.vertices[seam, 2]))
    tall = BodyParams(true.beta + np.array([z_offset / (0.1 * ring_z)] + [0.0] * (body.n_betas - 1)),
                      np.zeros(3 * k), true.scale, true.translation)
    rest_pose = BodyParams(true.beta, np.zeros(3 * k), true.scale, true.translation)
    tall_mesh, _ = pose_body(body, tall)
    offset_face, _ = extract_head(tall_mesh, face_vertices, seam)
    return Scene(body, face_model, true, init, kp, coeffs, region, offset_face, rest_pose, mesh, joints)
