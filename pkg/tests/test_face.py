import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphfuse.face import FaceCoefficients, MorphableFaceModel, apply_displacement, evaluate_3dmm
from morphfuse.mesh import Mesh, MeshError
from morphfuse.sdf import DomainError, ScalarField2D, edt_sdf, refine_with_sdf, sample_sdf, sample_sdf_many
from morphfuse.synth import make_face_model

from conftest import grid_mesh, uv_sphere


def _random_coeffs(model, rng, scale=1.0):
    return FaceCoefficients(rng.normal(size=model.n_id) * scale, rng.normal(size=model.n_exp) * scale,
                            rng.normal(size=model.n_tex) * 0.1)


def _brute_edt(mask, spacing=1.0):
    pts = np.argwhere(mask)
    rows, cols = np.indices(mask.shape)
    cells = np.column_stack([rows.ravel(), cols.ravel()])
    d2 = ((cells[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return (np.sqrt(d2.astype(np.float64)) * spacing).reshape(mask.shape)


# --------------------------------------------------------------------------- 3DMM

def test_zero_coefficients_give_template(face_model):
    m = evaluate_3dmm(face_model, face_model.zero_coefficients())
    np.testing.assert_array_equal(m.vertices, face_model.template.vertices)
    np.testing.assert_array_equal(m.colors, np.clip(face_model.mean_texture, 0, 1))
    np.testing.assert_array_equal(m.faces, face_model.template.faces)


def test_unit_identity_adds_first_column(face_model):
    c = face_model.zero_coefficients()
    alpha = np.zeros(face_model.n_id)
    alpha[0] = 1.0
    m = evaluate_3dmm(face_model, FaceCoefficients(alpha, c.expression, c.texture))
    np.testing.assert_allclose(m.vertices, face_model.template.vertices + face_model.identity_basis[:, :, 0],
                               atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_superposition(seed):
    model = make_face_model(0)
    rng = np.random.default_rng(seed)
    c1, c2 = _random_coeffs(model, rng), _random_coeffs(model, rng)
    both = FaceCoefficients(c1.identity + c2.identity, c1.expression + c2.expression, c1.texture)
    s = model.template.vertices
    lhs = evaluate_3dmm(model, both).vertices - s
    rhs = (evaluate_3dmm(model, c1).vertices - s) + (evaluate_3dmm(model, c2).vertices - s)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_texture_is_clamped_color_not_geometry(face_model):
    c = face_model.zero_coefficients()
    t = np.full(face_model.n_tex, 100.0)
    m = evaluate_3dmm(face_model, FaceCoefficients(c.identity, c.expression, t))
    np.testing.assert_array_equal(m.vertices, face_model.template.vertices)
    assert m.colors.min() >= 0 and m.colors.max() <= 1
    oracle = np.clip(face_model.mean_texture + np.einsum("vdk,k->vd", face_model.texture_basis, t), 0, 1)
    np.testing.assert_allclose(m.colors, oracle, atol=1e-15)


def test_coefficient_length_mismatch(face_model):
    with pytest.raises(ValueError, match="identity"):
        evaluate_3dmm(face_model, FaceCoefficients(np.zeros(face_model.n_id + 1), np.zeros(face_model.n_exp),
                                                   np.zeros(face_model.n_tex)))


def test_model_directory_round_trip(face_model, tmp_path):
    face_model.save(tmp_path / "fm")
    back = MorphableFaceModel.load(tmp_path / "fm")
    for name in ("identity_basis", "expression_basis", "texture_basis", "mean_texture"):
        np.testing.assert_array_equal(getattr(back, name), getattr(face_model, name))
    np.testing.assert_array_equal(back.template.vertices, face_model.template.vertices)


def test_model_rejects_zero_basis_column(face_model):
    bad = np.array(face_model.identity_basis)
    bad[:, :, 0] = 0
    with pytest.raises(ValueError):
        MorphableFaceModel(face_model.template, face_model.mean_texture, bad, face_model.expression_basis,
                           face_model.texture_basis)


def test_coefficients_json_round_trip(face_model, rng):
    c = _random_coeffs(face_model, rng)
    back = FaceCoefficients.from_json(c.to_json())
    np.testing.assert_array_equal(back.identity, c.identity)


# --------------------------------------------------------------------------- displacement

def test_zero_displacement_unchanged():
    m = grid_mesh(3, 3)
    assert apply_displacement(m, np.zeros(9)) is m


def test_flat_square_lifted():
    m = grid_mesh(3, 3)
    out = apply_displacement(m, np.full(9, 0.5))
    np.testing.assert_allclose(out.vertices, m.vertices + [0, 0, 0.5], atol=1e-15)
    np.testing.assert_array_equal(out.faces, m.faces)


def test_sphere_radius_grows():
    s = uv_sphere(24, 32)
    out = apply_displacement(s, np.full(s.n_vertices, 0.1))
    r = np.linalg.norm(out.vertices, axis=1)
    assert np.max(np.abs(r - 1.1)) < 0.02


def test_displacement_inverse_on_planar_fixture():
    # a uniform offset keeps the plane's normals, so -dmap undoes +dmap
    m = grid_mesh(5, 5)
    up = apply_displacement(m, np.full(25, 0.2))
    np.testing.assert_allclose(apply_displacement(up, np.full(25, -0.2)).vertices, m.vertices, atol=2e-6)


def test_displacement_errors():
    m = grid_mesh(3, 3)
    with pytest.raises(ValueError, match="9 vertices"):
        apply_displacement(m, np.zeros(4))
    lone = Mesh(np.vstack([m.vertices, [[9, 9, 9]]]), m.faces)
    d = np.zeros(10)
    d[9] = 1.0
    with pytest.raises(MeshError, match="vertex 9"):
        apply_displacement(lone, d)


# --------------------------------------------------------------------------- EDT

def test_single_cell_distances():
    mask = np.zeros((9, 11), dtype=bool)
    mask[4, 3] = True
    f = edt_sdf(mask, spacing=0.5)
    assert f.grid[4, 3] == 0.0
    assert f.grid[4, 6] == 1.5


def test_full_mask_gives_zero_field():
    f = edt_sdf(np.ones((6, 6), dtype=bool))
    assert np.all(f.grid == 0)


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        edt_sdf(np.zeros((4, 4), dtype=bool))


def test_random_mask_matches_brute_force_exactly(rng):
    mask = rng.random((32, 32)) < 0.05
    mask[0, 0] = True
    np.testing.assert_array_equal(edt_sdf(mask).grid, _brute_edt(mask))


def test_inside_mask_negates(rng):
    mask = np.zeros((16, 16), dtype=bool)
    mask[8, :] = True
    inside = np.zeros_like(mask)
    inside[:8] = True
    f = edt_sdf(mask, 2.0, inside)
    np.testing.assert_array_equal(f.grid, np.where(inside, -1, 1) * _brute_edt(mask, 2.0))


# --------------------------------------------------------------------------- sampling

def _ramp(h=10, w=12, spacing=0.5, origin=(1.0, -2.0)):
    xs = origin[0] + spacing * np.arange(w)
    return ScalarField2D(np.tile(xs, (h, 1)), origin, spacing)


def test_sample_at_grid_node_exact(rng):
    g = rng.normal(size=(8, 9))
    f = ScalarField2D(g, (0.5, 0.25), 0.3)
    val, _ = sample_sdf(f, (0.5 + 0.3 * 4, 0.25 + 0.3 * 5))
    assert val == pytest.approx(g[5, 4], abs=1e-14)


def test_ramp_gradient(rng):
    f = _ramp()
    pts = np.column_stack([rng.uniform(1.5, 1.0 + 0.5 * 10, 50), rng.uniform(-1.5, -2.0 + 0.5 * 8, 50)])
    val, grad = sample_sdf_many(f, pts)
    np.testing.assert_allclose(val, pts[:, 0], atol=1e-12)
    np.testing.assert_allclose(grad, np.tile([1.0, 0.0], (50, 1)), atol=1e-9)


def test_smooth_field_gradient_vs_fine_differences(rng):
    def fn(x, y):
        return x + 0.2 * y + 0.3 * np.sin(x / 2.0) * np.cos(y / 3.0)

    spacing = 0.2
    ys, xs = np.indices((64, 64)) * spacing
    f = ScalarField2D(fn(xs, ys), (0, 0), spacing)
    pts = rng.uniform(2 * spacing, 61 * spacing, size=(100, 2))
    _, grad = sample_sdf_many(f, pts)
    h = spacing / 10
    x, y = pts[:, 0], pts[:, 1]
    fd = np.column_stack([(fn(x + h, y) - fn(x - h, y)) / (2 * h), (fn(x, y + h) - fn(x, y - h)) / (2 * h)])
    rel = np.linalg.norm(grad - fd, axis=1) / np.linalg.norm(fd, axis=1)
    assert np.max(rel) < 1e-2


def test_out_of_domain_query():
    f = _ramp()
    with pytest.raises(DomainError):
        sample_sdf(f, (1.0, 0.0))  # on the border: no room for the gradient stencil
    with pytest.raises(DomainError):
        f.interpolate([[100.0, 0.0]])


# --------------------------------------------------------------------------- refinement

def _disk_field(n=64, radius=20.0, spacing=1.0):
    rows, cols = np.indices((n, n))
    r = np.hypot(rows - n / 2, cols - n / 2)
    line = np.abs(r - radius) <= 0.5
    return edt_sdf(line, spacing, r < radius)


def test_lambda_zero_unchanged():
    m = Mesh(np.array([[30.0, 30.0, 1.0], [20.0, 35.0, 2.0], [40.0, 25.0, 0.0]]), [[0, 1, 2]])
    assert refine_with_sdf(m, _disk_field(), 0.0) is m


def test_zero_set_vertex_fixed():
    f = _ramp(spacing=1.0, origin=(-5.0, -5.0))   # zero set is the line x = 0
    m = Mesh(np.array([[0.0, 0.0, 3.0], [0.0, 1.5, -1.0], [0.0, -2.0, 0.0]]), [[0, 1, 2]])
    out = refine_with_sdf(m, f, 0.7)
    np.testing.assert_array_equal(out.vertices, m.vertices)


def test_disk_descent_one_step(rng):
    f = _disk_field()
    ang = rng.uniform(0, 2 * np.pi, 200)
    rad = rng.uniform(8, 28, 200)
    rad = rad[np.abs(rad - 20) > 2]
    ang = ang[: len(rad)]
    pts = np.column_stack([32 + rad * np.cos(ang), 32 + rad * np.sin(ang), rng.normal(size=len(rad))])
    before, _ = sample_sdf_many(f, pts[:, :2])
    # measured stability bound on this fixture: |grad| <= 1, so any lam < 1 keeps the step inside the basin
    for lam in (0.1, 0.5, 0.9):
        out = refine_with_sdf(Mesh(pts), f, lam)
        after, _ = sample_sdf_many(f, out.vertices[:, :2])
        assert np.all(np.abs(after) < np.abs(before))
        np.testing.assert_array_equal(out.vertices[:, 2], pts[:, 2])


def test_refine_preserves_topology_and_plane_choice():
    f = _ramp(spacing=1.0, origin=(-5.0, -5.0))
    m = Mesh(np.array([[1.0, 7.0, 2.0], [2.0, 7.5, 1.0], [1.5, 8.0, -1.0]]), [[0, 1, 2]])
    out = refine_with_sdf(m, f, 0.5, plane="xz")
    np.testing.assert_array_equal(out.faces, m.faces)
    np.testing.assert_array_equal(out.vertices[:, 1], m.vertices[:, 1])
    np.testing.assert_allclose(out.vertices[:, 0], 0.5 * m.vertices[:, 0], atol=1e-12)
    twice = refine_with_sdf(m, f, 0.5, plane="xz", iterations=2)
    np.testing.assert_allclose(twice.vertices[:, 0], 0.25 * m.vertices[:, 0], atol=1e-12)


def test_refine_rejects_negative_lambda():
    with pytest.raises(ValueError):
        refine_with_sdf(Mesh(np.zeros((1, 3))), _ramp(), -0.1)
