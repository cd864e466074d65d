"""Reconstruction error metrics and report formatting."""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial import cKDTree

from .align import icp_align, procrustes_align
from .mesh import Mesh, MeshError, VertexIndex, compute_vertex_normals


def _pts(x):
    if isinstance(x, Mesh):
        return x.vertices
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def _paired(pred, gt):
    p, g = _pts(pred), _pts(gt)
    if p.shape != g.shape:
        raise ValueError(f"point counts differ: {len(p)} vs {len(g)}")
    if len(p) == 0:
        raise ValueError("no points to compare")
    return p, g


def v2v(pred, gt) -> float:
    p, g = _paired(pred, gt)
    return float(np.mean(np.linalg.norm(p - g, axis=1)))


def mpjpe(pred, gt) -> float:
    return v2v(pred, gt)


def pa_v2v(pred, gt) -> float:
    p, g = _paired(pred, gt)
    if np.array_equal(p, g):
        return 0.0
    _, aligned = procrustes_align(p, g)
    return float(np.mean(np.linalg.norm(aligned - g, axis=1)))


def pa_mpjpe(pred, gt) -> float:
    return pa_v2v(pred, gt)


def crop_indices(points, center, radius):
    if not radius > 0:
        raise ValueError("crop radius must be positive")
    d = np.linalg.norm(_pts(points) - np.asarray(center, dtype=np.float64).reshape(3), axis=1)
    return np.flatnonzero(d <= radius)


def _normals(mesh: Mesh):
    if mesh.normals is not None:
        return mesh.normals
    if mesh.n_faces == 0:
        raise MeshError("point-to-plane distance needs meshes with faces")
    return compute_vertex_normals(mesh, "angle")


def _one_sided(src_pts, dst_pts, dst_normals):
    nn = VertexIndex(dst_pts).query(src_pts)
    return np.abs(np.einsum("ij,ij->i", src_pts - dst_pts[nn], dst_normals[nn]))


def point_to_plane(pred: Mesh, gt: Mesh, crop=None, prealign=False, icp_iterations=50):
    """Symmetric point-to-plane distance.

    Each point is measured against the tangent plane (vertex normal) of its
    nearest vertex on the other mesh; the result is the mean of the two
    directional means. ``crop`` is ``(center, radius)`` applied to both
    meshes. Returns ``(value, (pred_to_gt, gt_to_pred))``.
    """
    p, g = pred.vertices, gt.vertices
    n_p, n_g = _normals(pred), _normals(gt)
    if crop is not None:
        center, radius = crop
        ip, ig = crop_indices(p, center, radius), crop_indices(g, center, radius)
        p, n_p, g, n_g = p[ip], n_p[ip], g[ig], n_g[ig]
    if len(p) == 0 or len(g) == 0:
        raise ValueError("crop region contains no vertices")
    if prealign:
        tf = icp_align(p, g, max_iter=icp_iterations)
        p = tf.apply(p)
        n_p = n_p @ tf.rotation.T
    a = _one_sided(p, g, n_g)
    b = _one_sided(g, p, n_p)
    return 0.5 * (float(a.mean()) + float(b.mean())), (a, b)


@dataclass(frozen=True)
class GridSpec:
    origin: np.ndarray
    spacing: float
    shape: tuple

    def points(self):
        axes = [self.origin[i] + self.spacing * np.arange(self.shape[i]) for i in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([a.ravel() for a in g])

    def contains(self, pts, tol=1e-9):
        hi = self.origin + self.spacing * (np.asarray(self.shape) - 1)
        return bool(np.all(pts >= self.origin - tol) and np.all(pts <= hi + tol))

    @classmethod
    def enclosing(cls, *meshes, resolution=32, padding=0.05):
        pts = np.vstack([_pts(m) for m in meshes])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        ext = max(float(np.max(hi - lo)), 1e-9)
        lo = lo - padding * ext
        spacing = ext * (1 + 2 * padding) / (resolution - 1)
        return cls(lo, spacing, (resolution,) * 3)


def distance_field(points, grid: GridSpec):
    """Unsigned distance from every grid node to the nearest of ``points``."""
    d, _ = cKDTree(_pts(points)).query(grid.points(), k=1)
    return d.reshape(grid.shape)


def df_discrepancy(pred, gt, grid: GridSpec = None, resolution=32) -> float:
    """Mean absolute difference of the two meshes' vertex distance fields."""
    p, g = _pts(pred), _pts(gt)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("distance-field discrepancy needs non-empty meshes")
    if grid is None:
        grid = GridSpec.enclosing(p, g, resolution=resolution)
    if not (grid.contains(p) and grid.contains(g)):
        raise ValueError("meshes extend outside the distance-field grid")
    return float(np.mean(np.abs(distance_field(p, grid) - distance_field(g, grid))))


@dataclass
class MetricReport:
    """One metric over a set of samples; ``value`` is the per-sample mean."""

    metric: str
    per_sample: List[float]
    samples: List[str] = field(default_factory=list)
    alignment: str = "none"
    crop: Optional[dict] = None
    unit: str = "model units"

    @property
    def value(self) -> float:
        return float(np.mean(self.per_sample)) if self.per_sample else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(self.per_sample)) if self.per_sample else float("nan")

    def to_json(self):
        return {"metric": self.metric, "value": self.value, "std": self.std,
                "per_sample": dict(zip(self.samples, self.per_sample)) if self.samples else self.per_sample,
                "alignment": self.alignment, "crop": self.crop, "unit": self.unit}


def format_table(rows: dict, metrics: List[str], precision=4) -> str:
    """Aligned text table: one row per method, ``mean (std)`` per metric column."""
    header = ["method"] + metrics
    body = []
    for method, reports in rows.items():
        by_name = {r.metric: r for r in reports}
        cells = [method]
        for name in metrics:
            r = by_name.get(name)
            cells.append("-" if r is None else f"{r.value:.{precision}f} ({r.std:.{precision}f})")
        body.append(cells)
    widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def per_sample_csv(reports: List[MetricReport]) -> str:
    samples = sorted({s for r in reports for s in r.samples})
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample"] + [r.metric for r in reports])
    for s in samples:
        row = [s]
        for r in reports:
            vals = dict(zip(r.samples, r.per_sample))
            row.append(repr(vals[s]) if s in vals else "")
        w.writerow(row)
    return buf.getvalue()
