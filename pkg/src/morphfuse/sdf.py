"""Exact 2-D distance fields built from line masks and sampled for refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mesh import Mesh


class DomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarField2D:
    """Scalar field on a regular grid.

    ``grid[r, c]`` is the value at ``origin + spacing * (c, r)``; values are in
    model units.
    """

    grid: np.ndarray
    origin: np.ndarray = None
    spacing: float = 1.0

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.float64)
        if g.ndim != 2 or min(g.shape) < 1:
            raise ValueError("grid must be a non-empty 2-D array")
        if not np.all(np.isfinite(g)):
            raise ValueError("grid must be finite everywhere")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        o = np.zeros(2) if self.origin is None else np.array(self.origin, dtype=np.float64).reshape(2)
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def shape(self):
        return self.grid.shape

    def to_grid(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return (p - self.origin) / self.spacing  # columns: (col, row)

    def interpolate(self, points):
        """Bilinear values at model-space ``points`` (checked against the grid extent)."""
        uv = self.to_grid(points)
        h, w = self.grid.shape
        u, v = uv[:, 0], uv[:, 1]
        tol = 1e-9
        if np.any(u < -tol) or np.any(u > w - 1 + tol) or np.any(v < -tol) or np.any(v > h - 1 + tol):
            raise DomainError("query outside the field domain")
        u = np.clip(u, 0, w - 1)
        v = np.clip(v, 0, h - 1)
        c0 = np.clip(np.floor(u).astype(np.int64), 0, max(w - 2, 0))
        r0 = np.clip(np.floor(v).astype(np.int64), 0, max(h - 2, 0))
        c1 = np.minimum(c0 + 1, w - 1)
        r1 = np.minimum(r0 + 1, h - 1)
        fu = u - c0
        fv = v - r0
        g = self.grid
        top = g[r0, c0] * (1 - fu) + g[r0, c1] * fu
        bot = g[r1, c0] * (1 - fu) + g[r1, c1] * fu
        return top * (1 - fv) + bot * fv


def edt_sdf(line_mask, spacing=1.0, inside_mask=None, origin=None) -> ScalarField2D:
    """Signed Euclidean distance to the nearest set cell of ``line_mask``.

    Distances are exact: the feature transform gives the nearest line cell and
    the distance is evaluated directly from the integer offsets. Cells set in
    ``inside_mask`` are negated.
    """
    line = np.asarray(line_mask).astype(bool)
    if line.ndim != 2:
        raise ValueError("line_mask must be 2-D")
    if not line.any():
        raise ValueError("line_mask has no set cells")
    _, (ri, ci) = ndimage.distance_transform_edt(~line, return_indices=True)
    rows, cols = np.indices(line.shape)
    dr = (rows - ri).astype(np.float64)
    dc = (cols - ci).astype(np.float64)
    dist = np.sqrt(dr * dr + dc * dc) * float(spacing)
    if inside_mask is not None:
        inside = np.asarray(inside_mask).astype(bool)
        if inside.shape != line.shape:
            raise ValueError("inside_mask shape must match line_mask")
        dist = np.where(inside, -dist, dist)
    return ScalarField2D(dist, origin, spacing)


def sample_sdf_many(field: ScalarField2D, points):
    """Values and central-difference gradients (step = spacing) at many points."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h = field.spacing
    uv = field.to_grid(p)
    rows, cols = field.shape
    tol = 1e-9
    if (np.any(uv[:, 0] < 1 - tol) or np.any(uv[:, 0] > cols - 2 + tol)
            or np.any(uv[:, 1] < 1 - tol) or np.any(uv[:, 1] > rows - 2 + tol)):
        raise DomainError("query outside the field domain (one-cell margin needed for gradients)")
    value = field.interpolate(p)
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    gx = (field.interpolate(p + ex) - field.interpolate(p - ex)) / (2 * h)
    gy = (field.interpolate(p + ey) - field.interpolate(p - ey)) / (2 * h)
    return value, np.column_stack([gx, gy])


def sample_sdf(field: ScalarField2D, p2):
    value, grad = sample_sdf_many(field, np.asarray(p2, dtype=np.float64).reshape(1, 2))
    return float(value[0]), grad[0]


def _plane_axes(plane):
    if plane is None:
        return (0, 1)
    if isinstance(plane, str):
        names = {"x": 0, "y": 1, "z": 2}
        plane = tuple(names[c] for c in plane.lower())
    axes = tuple(int(a) for a in plane)
    if len(axes) != 2 or len(set(axes)) != 2 or not all(0 <= a < 3 for a in axes):
        raise ValueError(f"invalid projection plane {plane!r}")
    return axes


def refine_with_sdf(mesh: Mesh, field: ScalarField2D, lam: float, plane=None, iterations: int = 1) -> Mesh:
    """Move vertices by ``p' = p - lam * SDF(p) * grad SDF(p)`` in a projection plane.

    ``plane`` names the two coordinates the field lives in (``"xy"`` by
    default); the remaining coordinate is left untouched.
    """
    if lam < 0:
        raise ValueError("step size must be non-negative")
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    axes = list(_plane_axes(plane))
    v = np.array(mesh.vertices)
    if lam == 0 or iterations == 0:
        return mesh
    for _ in range(iterations):
        p2 = v[:, axes]
        val, grad = sample_sdf_many(field, p2)
        v[:, axes] = p2 - lam * val[:, None] * grad
    return mesh.replace(vertices=v, normals=None)
