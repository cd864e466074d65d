"""SMPL-style parametric body: blendshapes, joint regression, kinematics and skinning.

Joint transforms are ``K x 4 x 4`` affine matrices mapping rest space to posed
space. Joint ``k`` rotates about its own rest location, so ``T_k`` maps
``rest_joints[k]`` to the posed joint position.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .mesh import Mesh


class ModelError(ValueError):
    pass


def _skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(r) -> np.ndarray:
    """Rotation matrix for an axis-angle vector."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(r)
    if angle < 1e-12:
        return np.eye(3) + _skew(r)
    k = _skew(r / angle)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rodrigues_jacobian(r):
    """Rotation and its partial derivatives ``dR/dr_i`` (shape ``3 x 3 x 3``)."""
    r = np.asarray(r, dtype=np.float64).reshape(3)
    rot = rodrigues(r)
    angle2 = r @ r
    eye = np.eye(3)
    if angle2 < 1e-16:
        return rot, np.stack([_skew(e) for e in eye])
    d = np.empty((3, 3, 3))
    skew_r = _skew(r)
    for i in range(3):
        w = np.cross(r, (eye - rot) @ eye[i])
        d[i] = (r[i] * skew_r + _skew(w)) @ rot / angle2
    return rot, d


@dataclass(frozen=True, eq=False)
class BodyModel:
    """Parametric body model.

    Shapes: template ``V`` vertices, ``shape_basis`` ``V x 3 x n_beta``,
    ``pose_basis`` ``V x 3 x 9K``, ``joint_regressor`` ``K x V``,
    ``skinning_weights`` ``V x K``. ``parents[k]`` is the parent joint of
    ``k``; joint 0 is the root (parent -1) and parents precede children.
    """

    template: Mesh
    shape_basis: np.ndarray
    pose_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    parents: tuple

    def __post_init__(self):
        nv = self.template.n_vertices
        sb = np.array(self.shape_basis, dtype=np.float64)
        parents = tuple(int(p) for p in self.parents)
        k = len(parents)
        pb = np.array(self.pose_basis, dtype=np.float64)
        jr = np.array(self.joint_regressor, dtype=np.float64)
        sw = np.array(self.skinning_weights, dtype=np.float64)
        if sb.ndim != 3 or sb.shape[:2] != (nv, 3):
            raise ModelError(f"shape_basis must be ({nv}, 3, n_beta), got {sb.shape}")
        if pb.shape != (nv, 3, 9 * k):
            raise ModelError(f"pose_basis must be ({nv}, 3, {9 * k}), got {pb.shape}")
        if jr.shape != (k, nv):
            raise ModelError(f"joint_regressor must be ({k}, {nv}), got {jr.shape}")
        if sw.shape != (nv, k):
            raise ModelError(f"skinning_weights must be ({nv}, {k}), got {sw.shape}")
        for name, m in (("joint_regressor", jr), ("skinning_weights", sw)):
            if np.any(m < 0):
                raise ModelError(f"{name} has negative entries")
            if np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
                raise ModelError(f"{name} rows must sum to 1")
        validate_tree(parents)
        for name, arr in (("shape_basis", sb), ("pose_basis", pb), ("joint_regressor", jr),
                          ("skinning_weights", sw)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "parents", parents)

    @property
    def n_vertices(self):
        return self.template.n_vertices

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def n_betas(self):
        return self.shape_basis.shape[2]

    def zero_params(self) -> "BodyParams":
        return BodyParams(np.zeros(self.n_betas), np.zeros(3 * self.n_joints))

    def save(self, directory) -> None:
        d = io.ensure_dir(directory)
        io.save_mesh(self.template, d / "template.obj")
        io.save_array(d / "shape_basis.mfa", self.shape_basis)
        io.save_array(d / "pose_basis.mfa", self.pose_basis)
        io.save_array(d / "joint_regressor.mfa", self.joint_regressor)
        io.save_array(d / "skinning_weights.mfa", self.skinning_weights)
        io.write_json(d / "kinematic_tree.json", {"parents": list(self.parents)})

    @classmethod
    def load(cls, directory) -> "BodyModel":
        d = Path(directory)
        tree = io.read_json(d / "kinematic_tree.json")
        return cls(
            io.load_mesh(d / "template.obj"),
            io.load_array(d / "shape_basis.mfa"),
            io.load_array(d / "pose_basis.mfa"),
            io.load_array(d / "joint_regressor.mfa"),
            io.load_array(d / "skinning_weights.mfa"),
            tuple(tree["parents"]),
        )


def validate_tree(parents):
    parents = [int(p) for p in parents]
    if not parents:
        raise ModelError("kinematic tree has no joints")
    roots = [k for k, p in enumerate(parents) if p < 0]
    if roots != [0]:
        raise ModelError(f"kinematic tree must have exactly one root at joint 0, found roots {roots}")
    for k, p in enumerate(parents[1:], start=1):
        if not 0 <= p < k:
            raise ModelError(f"joint {k} has parent {p}; parents must precede their children")


@dataclass(frozen=True)
class BodyParams:
    """Shape ``beta``, axis-angle pose ``theta`` (3 per joint, root first) and
    weak-perspective camera ``(scale, translation)``."""

    beta: np.ndarray
    theta: np.ndarray
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        b = np.array(self.beta, dtype=np.float64).reshape(-1)
        t = np.array(self.theta, dtype=np.float64).reshape(-1)
        tr = np.array(self.translation, dtype=np.float64).reshape(2)
        if len(t) % 3:
            raise ValueError("theta length must be a multiple of 3")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(t)) and np.all(np.isfinite(tr))
                and np.isfinite(self.scale)):
            raise ValueError("body parameters must be finite")
        if not self.scale > 0:
            raise ValueError("camera scale must be positive")
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "translation", tr)
        object.__setattr__(self, "scale", float(self.scale))

    def to_vector(self):
        return np.concatenate([self.beta, self.theta, [self.scale], self.translation])

    @classmethod
    def from_vector(cls, x, n_betas, n_joints):
        x = np.asarray(x, dtype=np.float64)
        nb, nt = n_betas, 3 * n_joints
        return cls(x[:nb], x[nb:nb + nt], x[nb + nt], x[nb + nt + 1:nb + nt + 3])

    def to_json(self):
        return {"beta": self.beta.tolist(), "theta": self.theta.tolist(),
                "camera": {"scale": self.scale, "translation": self.translation.tolist()}}

    @classmethod
    def from_json(cls, obj):
        try:
            cam = obj.get("camera", {})
            return cls(obj["beta"], obj["theta"], cam.get("scale", 1.0), cam.get("translation", [0.0, 0.0]))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError(f"body params need 'beta', 'theta' and optional 'camera' ({exc})") from None


@dataclass(frozen=True)
class Keypoints2D:
    points: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        v = np.array(self.visibility, dtype=np.float64).reshape(-1)
        if len(v) != len(p):
            raise ValueError("visibility must have one flag per keypoint")
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("visibility flags must be 0 or 1")
        if not np.all(np.isfinite(p)):
            raise ValueError("keypoints must be finite")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "visibility", v)

    def to_json(self):
        return {"points": self.points.tolist(), "visibility": [int(x) for x in self.visibility]}

    @classmethod
    def from_json(cls, obj):
        try:
            pts = obj["points"]
            vis = obj.get("visibility", [1] * len(pts))
            return cls(pts, vis)
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError(f"keypoints need a 'points' list and optional 'visibility' ({exc})") from None


def _check_theta(model, theta):
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if len(theta) != 3 * model.n_joints:
        raise ValueError(f"theta has length {len(theta)}, model expects {3 * model.n_joints}")
    return theta


def _check_beta(model, beta):
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if len(beta) != model.n_betas:
        raise ValueError(f"beta has length {len(beta)}, model expects {model.n_betas}")
    return beta


def shape_mesh(model: BodyModel, beta) -> Mesh:
    beta = _check_beta(model, beta)
    return model.template.replace(vertices=model.template.vertices + model.shape_basis @ beta,
                                  colors=None, normals=None)


def pose_offsets(model: BodyModel, theta) -> np.ndarray:
    """Pose-corrective offsets ``sum_k P_k vec(R(theta_k) - I)`` (``V x 3``)."""
    theta = _check_theta(model, theta).reshape(-1, 3)
    feats = np.concatenate([(rodrigues(t) - np.eye(3)).ravel() for t in theta])
    return model.pose_basis @ feats


def regress_joints(model: BodyModel, shaped) -> np.ndarray:
    v = shaped.vertices if isinstance(shaped, Mesh) else np.asarray(shaped, dtype=np.float64)
    if v.shape != (model.n_vertices, 3):
        raise ValueError(f"mesh has {len(v)} vertices, model expects {model.n_vertices}")
    return model.joint_regressor @ v


def forward_kinematics(model: BodyModel, theta, rest_joints) -> np.ndarray:
    theta = _check_theta(model, theta).reshape(-1, 3)
    rest = np.asarray(rest_joints, dtype=np.float64).reshape(model.n_joints, 3)
    validate_tree(model.parents)
    k = model.n_joints
    rot_g = np.empty((k, 3, 3))
    trans = np.empty((k, 3))
    # t_j = t_p + R_p r_j - R_j r_j: algebraically posed_j - R_j r_j, but
    # exactly zero when every rotation is the identity.
    for j in range(k):
        r = rodrigues(theta[j])
        p = model.parents[j]
        if p < 0:
            rot_g[j] = r
            trans[j] = rest[j] - r @ rest[j]
        else:
            rot_g[j] = rot_g[p] @ r
            trans[j] = trans[p] + rot_g[p] @ rest[j] - rot_g[j] @ rest[j]
    out = np.zeros((k, 4, 4))
    out[:, :3, :3] = rot_g
    out[:, :3, 3] = trans
    out[:, 3, 3] = 1.0
    return out


def skin(model: BodyModel, transforms, rest_mesh) -> Mesh:
    """Linear blend skinning: ``v'_i = sum_k w_ik T_k(v_i)``."""
    v = rest_mesh.vertices if isinstance(rest_mesh, Mesh) else np.asarray(rest_mesh, dtype=np.float64)
    tr = np.asarray(transforms, dtype=np.float64)
    if v.shape != (model.n_vertices, 3):
        raise ValueError(f"mesh has {len(v)} vertices, model expects {model.n_vertices}")
    if tr.shape != (model.n_joints, 4, 4):
        raise ValueError(f"expected {model.n_joints} transforms of shape 4x4, got {tr.shape}")
    # v + sum_k w_k ((A_k - I) v + t_k): identity transforms leave v bit-exact
    delta = np.einsum("vk,kab->vab", model.skinning_weights, tr[:, :3, :3] - np.eye(3))
    shift = model.skinning_weights @ tr[:, :3, 3]
    out = v + np.einsum("vab,vb->va", delta, v) + shift
    if isinstance(rest_mesh, Mesh):
        return rest_mesh.replace(vertices=out, normals=None)
    return out


def pose_body(model: BodyModel, params: BodyParams):
    """Posed mesh and posed joint positions for ``params``.

    Joints are regressed from the shaped mesh (before pose offsets).
    """
    shaped = shape_mesh(model, params.beta)
    rest_joints = regress_joints(model, shaped)
    rest = shaped.vertices + pose_offsets(model, params.theta)
    transforms = forward_kinematics(model, params.theta, rest_joints)
    verts = skin(model, transforms, rest)
    posed_joints = np.einsum("kab,kb->ka", transforms[:, :3, :3], rest_joints) + transforms[:, :3, 3]
    return Mesh(verts, model.template.faces), posed_joints


def pose_body_jacobian(model: BodyModel, params: BodyParams, vertex_ids=None):
    """Posed vertices/joints with derivatives w.r.t. ``(beta, theta)``.

    Returns ``(verts, d_verts, joints, d_joints)``; derivative arrays have a
    trailing axis of length ``n_betas + 3K``. ``vertex_ids`` restricts the
    vertex outputs to a subset (``None`` = all, empty = none).
    """
    beta = _check_beta(model, params.beta)
    theta = _check_theta(model, params.theta).reshape(-1, 3)
    nb, k = model.n_betas, model.n_joints
    nt = 3 * k
    ids = np.arange(model.n_vertices) if vertex_ids is None else np.asarray(vertex_ids, dtype=np.int64)

    shaped = model.template.vertices + model.shape_basis @ beta
    rest_joints = model.joint_regressor @ shaped
    d_rest_joints = np.einsum("kv,vcb->kcb", model.joint_regressor, model.shape_basis)

    rots = np.empty((k, 3, 3))
    d_rots = np.empty((k, 3, 3, 3))
    for j in range(k):
        rots[j], d_rots[j] = rodrigues_jacobian(theta[j])

    rot_g = np.empty((k, 3, 3))
    posed = np.empty((k, 3))
    d_rot_g = np.zeros((k, nt, 3, 3))
    d_posed_t = np.zeros((k, nt, 3))
    d_posed_b = np.zeros((k, 3, nb))
    for j in range(k):
        p = model.parents[j]
        sl = slice(3 * j, 3 * j + 3)
        if p < 0:
            rot_g[j] = rots[j]
            posed[j] = rest_joints[j]
            d_rot_g[j, sl] = d_rots[j]
            d_posed_b[j] = d_rest_joints[j]
        else:
            rot_g[j] = rot_g[p] @ rots[j]
            off = rest_joints[j] - rest_joints[p]
            posed[j] = rot_g[p] @ off + posed[p]
            d_rot_g[j] = d_rot_g[p] @ rots[j]
            d_rot_g[j, sl] += rot_g[p] @ d_rots[j]
            d_posed_t[j] = d_rot_g[p] @ off + d_posed_t[p]
            d_posed_b[j] = rot_g[p] @ (d_rest_joints[j] - d_rest_joints[p]) + d_posed_b[p]

    d_joints = np.concatenate([d_posed_b, d_posed_t.transpose(0, 2, 1)], axis=2)

    pb = model.pose_basis[ids]
    feats = np.concatenate([(r - np.eye(3)).ravel() for r in rots])
    rest = shaped[ids] + pb @ feats
    # d(offsets)/d(theta_{j,i}) = P_j vec(dR_j/d theta_{j,i})
    d_feats = np.zeros((9 * k, nt))
    for j in range(k):
        d_feats[9 * j:9 * j + 9, 3 * j:3 * j + 3] = d_rots[j].reshape(3, 9).T
    d_rest_t = pb @ d_feats
    d_rest_b = model.shape_basis[ids]

    w = model.skinning_weights[ids]
    n = len(ids)
    verts = np.zeros((n, 3))
    d_b = np.zeros((n, 3, nb))
    d_t = np.zeros((n, 3, nt))
    for j in range(k):
        wj = w[:, j]
        nz = wj != 0
        if not np.any(nz):
            continue
        wj = wj[nz, None]
        local = rest[nz] - rest_joints[j]
        verts[nz] += wj * (local @ rot_g[j].T + posed[j])
        d_b[nz] += wj[:, :, None] * (np.einsum("ab,nbc->nac", rot_g[j], d_rest_b[nz] - d_rest_joints[j])
                                     + d_posed_b[j])
        d_t[nz] += wj[:, :, None] * (np.einsum("pab,nb->nap", d_rot_g[j], local)
                                     + np.einsum("ab,nbp->nap", rot_g[j], d_rest_t[nz])
                                     + d_posed_t[j].T[None])
    d_verts = np.concatenate([d_b, d_t], axis=2)
    return verts, d_verts, posed, d_joints


def project(joints3d, scale, translation=(0.0, 0.0)) -> np.ndarray:
    """Weak-perspective projection ``(x, y) -> scale * (x, y) + translation``."""
    if not scale > 0:
        raise ValueError("camera scale must be positive")
    j = np.asarray(joints3d, dtype=np.float64).reshape(-1, 3)
    return scale * j[:, :2] + np.asarray(translation, dtype=np.float64).reshape(2)


def joint_loss(projected, targets: Keypoints2D) -> float:
    """Sum of visibility-masked Euclidean (not squared) reprojection errors."""
    p = np.asarray(projected, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(targets.points):
        raise ValueError(f"{len(p)} projected joints for {len(targets.points)} keypoints")
    res = targets.visibility[:, None] * (targets.points - p)
    return float(np.sum(np.linalg.norm(res, axis=1)))
