"""Linear blendshape face model with displacement-map detail."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .mesh import Mesh, MeshError, compute_vertex_normals


@dataclass(frozen=True, eq=False)
class MorphableFaceModel:
    """Template mesh plus identity, expression and texture bases (``V x 3 x n``)."""

    template: Mesh
    mean_texture: np.ndarray
    identity_basis: np.ndarray
    expression_basis: np.ndarray
    texture_basis: np.ndarray

    def __post_init__(self):
        nv = self.template.n_vertices
        tex = np.array(self.mean_texture, dtype=np.float64).reshape(nv, 3)
        object.__setattr__(self, "mean_texture", tex)
        for name in ("identity_basis", "expression_basis", "texture_basis"):
            b = np.array(getattr(self, name), dtype=np.float64)
            if b.ndim == 2:
                b = b.reshape(nv, 3, -1)
            if b.ndim != 3 or b.shape[:2] != (nv, 3):
                raise ValueError(f"{name} must have shape ({nv}, 3, n), got {b.shape}")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"{name} must be finite")
            norms = np.linalg.norm(b.reshape(nv * 3, -1), axis=0)
            if np.any(norms == 0):
                raise ValueError(f"{name} has a zero column")
            b.setflags(write=False)
            object.__setattr__(self, name, b)

    @property
    def n_id(self):
        return self.identity_basis.shape[2]

    @property
    def n_exp(self):
        return self.expression_basis.shape[2]

    @property
    def n_tex(self):
        return self.texture_basis.shape[2]

    def zero_coefficients(self) -> "FaceCoefficients":
        return FaceCoefficients(np.zeros(self.n_id), np.zeros(self.n_exp), np.zeros(self.n_tex))

    def save(self, directory) -> None:
        d = io.ensure_dir(directory)
        io.save_mesh(self.template, d / "template.obj")
        io.save_array(d / "mean_texture.mfa", self.mean_texture)
        io.save_array(d / "identity_basis.mfa", self.identity_basis)
        io.save_array(d / "expression_basis.mfa", self.expression_basis)
        io.save_array(d / "texture_basis.mfa", self.texture_basis)

    @classmethod
    def load(cls, directory) -> "MorphableFaceModel":
        d = Path(directory)
        return cls(
            io.load_mesh(d / "template.obj"),
            io.load_array(d / "mean_texture.mfa"),
            io.load_array(d / "identity_basis.mfa"),
            io.load_array(d / "expression_basis.mfa"),
            io.load_array(d / "texture_basis.mfa"),
        )


@dataclass(frozen=True)
class FaceCoefficients:
    identity: np.ndarray
    expression: np.ndarray
    texture: np.ndarray

    def __post_init__(self):
        for name in ("identity", "expression", "texture"):
            a = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} coefficients must be finite")
            object.__setattr__(self, name, a)

    def to_json(self):
        return {"identity": self.identity.tolist(), "expression": self.expression.tolist(),
                "texture": self.texture.tolist()}

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(obj["identity"], obj.get("expression", []), obj.get("texture", []))
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError(f"face coefficients need 'identity', 'expression', 'texture' arrays ({exc})") from None


def _check_len(name, coeffs, n):
    if len(coeffs) != n:
        raise ValueError(f"{name} coefficients have length {len(coeffs)}, model expects {n}")


def evaluate_3dmm(model: MorphableFaceModel, coeffs: FaceCoefficients) -> Mesh:
    """Face geometry and per-vertex color for the given coefficients.

    Geometry is template + identity and expression offsets; texture is carried
    as vertex color, clamped to [0, 1].
    """
    _check_len("identity", coeffs.identity, model.n_id)
    _check_len("expression", coeffs.expression, model.n_exp)
    _check_len("texture", coeffs.texture, model.n_tex)
    geom = (model.template.vertices
            + model.identity_basis @ coeffs.identity
            + model.expression_basis @ coeffs.expression)
    color = np.clip(model.mean_texture + model.texture_basis @ coeffs.texture, 0.0, 1.0)
    return Mesh(geom, model.template.faces, color)


def apply_displacement(mesh: Mesh, dmap) -> Mesh:
    """Offset every vertex along its angle-weighted normal by ``dmap[k]``."""
    d = np.asarray(dmap, dtype=np.float64).reshape(-1)
    if len(d) != mesh.n_vertices:
        raise ValueError(f"displacement map has {len(d)} values for {mesh.n_vertices} vertices")
    if not np.all(np.isfinite(d)):
        raise ValueError("displacement values must be finite")
    if not np.any(d):
        return mesh
    referenced = np.zeros(mesh.n_vertices, dtype=bool)
    referenced[mesh.faces.ravel()] = True
    moved = np.flatnonzero(~referenced & (d != 0))
    if moved.size:
        raise MeshError(f"vertex {int(moved[0])} has no incident face, so its normal is undefined")
    n = compute_vertex_normals(mesh, "angle")
    return mesh.replace(vertices=mesh.vertices + d[:, None] * n, normals=None)
