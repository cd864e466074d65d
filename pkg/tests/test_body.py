import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from morphfuse.body import (
    BodyModel,
    BodyParams,
    Keypoints2D,
    ModelError,
    forward_kinematics,
    joint_loss,
    pose_body,
    pose_body_jacobian,
    pose_offsets,
    project,
    regress_joints,
    rodrigues,
    rodrigues_jacobian,
    shape_mesh,
    skin,
    validate_tree,
)
from morphfuse.mesh import Mesh
from morphfuse.synth import make_body_model

from conftest import random_rotation


def rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def chain_model(joint_pos, parents, extra=6, seed=0, pose_basis=None):
    """Small model whose rest joints are exactly vertices 0..K-1."""
    rng = np.random.default_rng(seed)
    joint_pos = np.asarray(joint_pos, dtype=float)
    k = len(joint_pos)
    v = np.vstack([joint_pos, rng.normal(size=(extra, 3))])
    nv = len(v)
    faces = np.array([[k, k + 1, k + 2]])
    reg = np.zeros((k, nv))
    reg[np.arange(k), np.arange(k)] = 1.0
    w = rng.random((nv, k))
    w /= w.sum(axis=1, keepdims=True)
    sb = rng.normal(size=(nv, 3, 2))
    pb = np.zeros((nv, 3, 9 * k)) if pose_basis is None else pose_basis
    return BodyModel(Mesh(v, faces), sb, pb, reg, w, parents)


def _random_transforms(rng, k):
    t = np.zeros((k, 4, 4))
    for j in range(k):
        t[j, :3, :3] = random_rotation(rng)
        t[j, :3, 3] = rng.normal(size=3)
        t[j, 3, 3] = 1
    return t


def _brute_lbs(weights, transforms, verts):
    out = np.zeros_like(verts)
    for i in range(len(verts)):
        acc = np.zeros(3)
        for j in range(len(transforms)):
            acc += weights[i, j] * (transforms[j, :3, :3] @ verts[i] + transforms[j, :3, 3])
        out[i] = acc
    return out


# --------------------------------------------------------------------------- rodrigues

def test_rodrigues_is_rotation(rng):
    np.testing.assert_allclose(rodrigues(np.zeros(3)), np.eye(3), atol=1e-12)
    for _ in range(50):
        r = rodrigues(rng.normal(size=3) * 2)
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_rodrigues_matches_axis_rotation():
    np.testing.assert_allclose(rodrigues([0, 0, np.pi / 3]), rz(np.pi / 3), atol=1e-15)


def test_rodrigues_jacobian_vs_central_differences(rng):
    for r in [np.zeros(3), 1e-9 * np.ones(3)] + [rng.normal(size=3) for _ in range(20)]:
        _, d = rodrigues_jacobian(r)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (rodrigues(r + e) - rodrigues(r - e)) / (2 * h)
            np.testing.assert_allclose(d[i], fd, atol=1e-8)


# --------------------------------------------------------------------------- model validation

def test_tree_validation():
    validate_tree([-1, 0, 0, 1])
    for bad in ([0, -1], [-1, -1], [-1, 2, 1], []):
        with pytest.raises(ModelError):
            validate_tree(bad)


def test_model_rejects_bad_rows(body_model):
    w = np.array(body_model.skinning_weights)
    w[0, 0] += 0.5
    with pytest.raises(ModelError, match="sum to 1"):
        BodyModel(body_model.template, body_model.shape_basis, body_model.pose_basis,
                  body_model.joint_regressor, w, body_model.parents)
    reg = np.array(body_model.joint_regressor)
    reg[0, 0] = -0.1
    reg[0, 1] += 0.1
    with pytest.raises(ModelError, match="negative"):
        BodyModel(body_model.template, body_model.shape_basis, body_model.pose_basis, reg,
                  body_model.skinning_weights, body_model.parents)


def test_model_directory_round_trip(body_model, tmp_path):
    body_model.save(tmp_path / "bm")
    back = BodyModel.load(tmp_path / "bm")
    assert back.parents == body_model.parents
    for name in ("shape_basis", "pose_basis", "joint_regressor", "skinning_weights"):
        np.testing.assert_array_equal(getattr(back, name), getattr(body_model, name))


def test_toy_model_dimensions(body_model):
    assert 150 <= body_model.n_vertices <= 250
    assert body_model.n_joints == 5 and body_model.n_betas == 4


def test_params_json_and_vector_round_trip(rng):
    p = BodyParams(rng.normal(size=4), rng.normal(size=15), 3.0, [1.0, 2.0])
    q = BodyParams.from_json(p.to_json())
    np.testing.assert_array_equal(q.to_vector(), p.to_vector())
    r = BodyParams.from_vector(p.to_vector(), 4, 5)
    np.testing.assert_array_equal(r.theta, p.theta)
    with pytest.raises(ValueError):
        BodyParams(np.zeros(4), np.zeros(15), 0.0)


def test_keypoints_validation():
    with pytest.raises(ValueError):
        Keypoints2D(np.zeros((3, 2)), [1, 0, 2])
    k = Keypoints2D.from_json({"points": [[1, 2], [3, 4]]})
    np.testing.assert_array_equal(k.visibility, [1, 1])


# --------------------------------------------------------------------------- shape / pose offsets / regression

def test_shape_mesh_zero_and_unit(body_model):
    np.testing.assert_array_equal(shape_mesh(body_model, np.zeros(4)).vertices, body_model.template.vertices)
    e = np.zeros(4)
    e[0] = 1
    np.testing.assert_allclose(shape_mesh(body_model, e).vertices,
                               body_model.template.vertices + body_model.shape_basis[:, :, 0], atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_shape_superposition(seed):
    model = make_body_model(0)
    rng = np.random.default_rng(seed)
    b1, b2 = rng.normal(size=4), rng.normal(size=4)
    t = model.template.vertices
    lhs = shape_mesh(model, b1 + b2).vertices - t
    rhs = (shape_mesh(model, b1).vertices - t) + (shape_mesh(model, b2).vertices - t)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_shape_length_mismatch(body_model):
    with pytest.raises(ValueError, match="beta"):
        shape_mesh(body_model, np.zeros(3))


def test_pose_offsets_zero(body_model):
    assert np.all(pose_offsets(body_model, np.zeros(15)) == 0)


def test_pose_offsets_identity_pattern(rng):
    k = 3
    nv = 3 + 6
    pb = np.zeros((nv * 3, 9 * k))
    pb[: 9 * k, :] = np.eye(9 * k)
    model = chain_model(rng.normal(size=(k, 3)), (-1, 0, 1), pose_basis=pb.reshape(nv, 3, 9 * k))
    theta = np.zeros(3 * k)
    theta[3:6] = [0.3, -0.2, 0.5]
    off = pose_offsets(model, theta).ravel()
    want = np.zeros(nv * 3)
    want[9:18] = (rodrigues(theta[3:6]) - np.eye(3)).ravel()
    np.testing.assert_allclose(off, want, atol=1e-15)


def test_pose_offsets_ignore_root_slot(body_model, rng):
    theta = rng.normal(size=15) * 0.3
    other = theta.copy()
    other[:3] = rng.normal(size=3)
    np.testing.assert_array_equal(pose_offsets(body_model, theta), pose_offsets(body_model, other))


def test_regress_one_hot_uniform_and_matmul(rng):
    model = chain_model(rng.normal(size=(2, 3)), (-1, 0))
    v = rng.normal(size=(model.n_vertices, 3))
    np.testing.assert_array_equal(regress_joints(model, v), v[:2])
    uni = np.full((2, model.n_vertices), 1.0 / model.n_vertices)
    m2 = BodyModel(model.template, model.shape_basis, model.pose_basis, uni, model.skinning_weights, (-1, 0))
    np.testing.assert_allclose(regress_joints(m2, v), np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_regress_matches_dense_matmul(body_model, rng):
    v = rng.normal(size=(body_model.n_vertices, 3))
    oracle = np.array([[sum(body_model.joint_regressor[k, i] * v[i, c] for i in range(len(v)))
                        for c in range(3)] for k in range(body_model.n_joints)])
    np.testing.assert_allclose(regress_joints(body_model, v), oracle, atol=1e-12)
    with pytest.raises(ValueError):
        regress_joints(body_model, v[:-1])


# --------------------------------------------------------------------------- forward kinematics

def test_fk_zero_pose_identity(body_model):
    j = regress_joints(body_model, body_model.template)
    t = forward_kinematics(body_model, np.zeros(15), j)
    np.testing.assert_array_equal(t, np.tile(np.eye(4), (5, 1, 1)))


def test_fk_global_rotation_closed_form(body_model):
    j = regress_joints(body_model, body_model.template)
    theta = np.zeros(15)
    theta[:3] = [0, 0, np.pi / 2]
    t = forward_kinematics(body_model, theta, j)
    posed = np.einsum("kab,kb->ka", t[:, :3, :3], j) + t[:, :3, 3]
    want = (j - j[0]) @ rz(np.pi / 2).T + j[0]
    np.testing.assert_allclose(posed, want, atol=1e-9)


def test_fk_two_link_hand_computed():
    model = chain_model([[0, 0, 0], [1, 0, 0], [2, 0, 0]], (-1, 0, 1))
    theta = np.zeros(9)
    theta[3:6] = [0, 0, np.pi / 2]
    j = regress_joints(model, model.template)
    t = forward_kinematics(model, theta, j)
    end = t[2, :3, :3] @ j[2] + t[2, :3, 3]
    np.testing.assert_allclose(end, [1, 1, 0], atol=1e-9)
    # the rotated joint stays where it was
    np.testing.assert_allclose(t[1, :3, :3] @ j[1] + t[1, :3, 3], [1, 0, 0], atol=1e-12)


def test_fk_maps_rest_joint_to_posed(body_model, rng):
    j = regress_joints(body_model, body_model.template)
    theta = rng.normal(size=15) * 0.4
    t = forward_kinematics(body_model, theta, j)
    # recompute posed joints directly from the parent chain
    rots = [rodrigues(x) for x in theta.reshape(-1, 3)]
    g = [rots[0]]
    posed = [j[0]]
    for k in range(1, 5):
        p = body_model.parents[k]
        posed.append(g[p] @ (j[k] - j[p]) + posed[p])
        g.append(g[p] @ rots[k])
    got = np.einsum("kab,kb->ka", t[:, :3, :3], j) + t[:, :3, 3]
    np.testing.assert_allclose(got, np.array(posed), atol=1e-12)


# --------------------------------------------------------------------------- skinning

def test_skin_identity_is_exact(body_model):
    v = body_model.template.vertices
    out = skin(body_model, np.tile(np.eye(4), (5, 1, 1)), v)
    np.testing.assert_array_equal(out, v)


def test_skin_common_rigid_transform(body_model, rng):
    t = _random_transforms(rng, 1)
    out = skin(body_model, np.repeat(t, 5, axis=0), body_model.template.vertices)
    np.testing.assert_allclose(out, body_model.template.vertices @ t[0, :3, :3].T + t[0, :3, 3], atol=1e-12)


def test_skin_matches_brute_force(body_model, rng):
    for _ in range(5):
        t = _random_transforms(rng, 5)
        v = rng.normal(size=(body_model.n_vertices, 3))
        np.testing.assert_allclose(skin(body_model, t, v), _brute_lbs(body_model.skinning_weights, t, v),
                                   rtol=0, atol=1e-12)


def test_skinned_vertex_in_convex_hull(body_model, rng):
    t = _random_transforms(rng, 5)
    v = body_model.template.vertices
    out = skin(body_model, t, v)
    for i in rng.choice(len(v), 10, replace=False):
        cand = np.array([t[k, :3, :3] @ v[i] + t[k, :3, 3] for k in range(5)])
        a_eq = np.vstack([cand.T, np.ones(5)])
        res = linprog(np.zeros(5), A_eq=a_eq, b_eq=np.append(out[i], 1.0), bounds=[(0, None)] * 5)
        assert res.status == 0


def test_skin_size_mismatch(body_model):
    with pytest.raises(ValueError):
        skin(body_model, np.tile(np.eye(4), (4, 1, 1)), body_model.template.vertices)


# --------------------------------------------------------------------------- pose_body

def test_pose_body_rest(body_model):
    mesh, joints = pose_body(body_model, body_model.zero_params())
    np.testing.assert_array_equal(mesh.vertices, body_model.template.vertices)
    np.testing.assert_allclose(joints, regress_joints(body_model, body_model.template), atol=0)


def test_zero_pose_reproduces_shape_exactly(body_model, rng):
    for _ in range(10):
        beta = rng.normal(size=4)
        mesh, _ = pose_body(body_model, BodyParams(beta, np.zeros(15)))
        np.testing.assert_array_equal(mesh.vertices, shape_mesh(body_model, beta).vertices)


def test_global_rotation_is_rigid(body_model):
    theta = np.zeros(15)
    theta[:3] = [0.3, -0.5, 1.1]
    mesh, _ = pose_body(body_model, BodyParams(np.zeros(4), theta))
    j0 = regress_joints(body_model, body_model.template)[0]
    want = (body_model.template.vertices - j0) @ rodrigues(theta[:3]).T + j0
    np.testing.assert_allclose(mesh.vertices, want, atol=1e-12)


def test_posed_joints_equal_fk_of_rest_joints(body_model, rng):
    p = BodyParams(rng.normal(size=4), rng.normal(size=15) * 0.4)
    _, joints = pose_body(body_model, p)
    rest = regress_joints(body_model, shape_mesh(body_model, p.beta))
    t = forward_kinematics(body_model, p.theta, rest)
    np.testing.assert_allclose(joints, np.einsum("kab,kb->ka", t[:, :3, :3], rest) + t[:, :3, 3], atol=1e-12)


def test_pose_jacobian_vs_central_differences(body_model, rng):
    p = BodyParams(rng.normal(size=4) * 0.3, rng.normal(size=15) * 0.4)
    ids = np.arange(0, body_model.n_vertices, 7)
    verts, dv, joints, dj = pose_body_jacobian(body_model, p, ids)
    mesh, j = pose_body(body_model, p)
    np.testing.assert_allclose(verts, mesh.vertices[ids], atol=1e-12)
    np.testing.assert_allclose(joints, j, atol=1e-12)
    x = np.concatenate([p.beta, p.theta])
    h = 1e-6
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        a = BodyParams((x + e)[:4], (x + e)[4:])
        b = BodyParams((x - e)[:4], (x - e)[4:])
        (ma, ja), (mb, jb) = pose_body(body_model, a), pose_body(body_model, b)
        np.testing.assert_allclose(dv[:, :, i], (ma.vertices[ids] - mb.vertices[ids]) / (2 * h), atol=1e-7)
        np.testing.assert_allclose(dj[:, :, i], (ja - jb) / (2 * h), atol=1e-7)


# --------------------------------------------------------------------------- projection and loss

def test_project_examples(rng):
    j = rng.normal(size=(4, 3))
    np.testing.assert_array_equal(project(j, 1.0), j[:, :2])
    np.testing.assert_allclose(project([[1, 1, 5]], 2.0, (10, 20)), [[12, 22]])
    s, t = 3.7, rng.normal(size=2)
    np.testing.assert_allclose(project(j, s, t), np.column_stack([s * j[:, 0] + t[0], s * j[:, 1] + t[1]]),
                               atol=1e-14)
    with pytest.raises(ValueError):
        project(j, 0.0)


def test_joint_loss_examples(rng):
    pts = rng.normal(size=(3, 2))
    assert joint_loss(pts, Keypoints2D(pts, np.ones(3))) == 0.0
    assert joint_loss(pts + 100, Keypoints2D(pts, np.zeros(3))) == 0.0
    target = Keypoints2D([[0, 0], [0, 0], [9, 9]], [1, 1, 0])
    assert joint_loss([[3, 4], [0, 5], [0, 0]], target) == 10.0
    with pytest.raises(ValueError):
        joint_loss(pts[:2], Keypoints2D(pts, np.ones(3)))
