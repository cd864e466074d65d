import numpy as np
import pytest

from morphfuse.mesh import Mesh
from morphfuse.synth import face_patch, make_body_model, make_face_model, make_scene


def grid_mesh(nx=4, ny=4, z=0.0):
    xs, ys = np.meshgrid(np.arange(nx, dtype=float), np.arange(ny, dtype=float))
    v = np.column_stack([xs.ravel(), ys.ravel(), np.full(nx * ny, z)])
    f = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            f += [(a, a + 1, a + nx + 1), (a, a + nx + 1, a + nx)]
    return Mesh(v, np.array(f))


def tetrahedron():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f)


def uv_sphere(n_rings=24, n_segments=32, radius=1.0):
    from morphfuse.synth import tube_mesh
    m, _ = tube_mesh(n_rings, n_segments, height=2.0, profile=lambda z: np.sqrt(np.clip(1 - (z - 1) ** 2, 0, None)))
    v = m.vertices - [0, 0, 1]
    v = radius * v / np.linalg.norm(v, axis=1, keepdims=True)
    return Mesh(v, m.faces)


def run_cli(*argv):
    from morphfuse.cli import main
    return main([str(a) for a in argv])


def run_pipeline(root, seed=0):
    """synth -> face -> fit -> fuse -> eval inside ``root``; returns the written files."""
    from pathlib import Path
    root = Path(root)
    s = root / "scene"
    steps = [
        ("synth", "--kind", "scene", "--seed", seed, "--out", s),
        ("face", "--model-dir", s / "face_model", "--coeffs", s / "face_coeffs.json", "--dmap", s / "dmap.json",
         "--line-mask", s / "line_mask.pgm", "--inside-mask", s / "inside_mask.pgm",
         "--sdf-spacing", 0.8 / 63, "--sdf-origin=-0.4,-0.4", "--lambda", 0.05, "--out", root / "face.obj"),
        ("fit", "--model-dir", s / "body_model", "--keypoints", s / "keypoints.json", "--config",
         s / "fit_config.json", "--cache", root / "cache.json", "--out", root / "fit.json",
         "--out-mesh", root / "pred" / "body.obj", "--out-joints", root / "pred" / "body.joints.json"),
        ("fuse", "--model-dir", s / "body_model", "--params", s / "fuse_params.json", "--face", root / "face.obj",
         "--spec", s / "region_spec.json", "--strategy", "opt", "--out", root / "fused.obj",
         "--report", root / "fuse_report.json"),
        ("eval", "--pred-dir", root / "pred", "--gt-dir", s / "gt", "--out", root / "eval"),
    ]
    for argv in steps:
        code = run_cli(*argv)
        assert code == 0, f"{argv[0]} exited with {code}"
    return sorted(p for p in root.rglob("*") if p.is_file())


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def body_model():
    return make_body_model(0)


@pytest.fixture(scope="session")
def face_model():
    return make_face_model(0)


@pytest.fixture(scope="session")
def scene():
    return make_scene(0)


@pytest.fixture(scope="session")
def head():
    return face_patch()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title, passed, elapsed, limit, detail)``."""
    def record(n, title, passed, elapsed, limit, detail=""):
        ok = passed and elapsed < limit
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  ({elapsed:.2f}s / {limit:g}s) {detail}".rstrip()
        ACCEPTANCE.append((n, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
