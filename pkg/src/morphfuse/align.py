"""Closed-form similarity (Procrustes) alignment and scale-aware ICP."""
from __future__ import annotations

import itertools

import numpy as np

from .mesh import Mesh, MeshError, RigidTransform, VertexIndex, inertia_axes


class DegenerateError(MeshError):
    pass


def _points(x):
    if isinstance(x, Mesh):
        x = x.vertices
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def similarity_fit(src, dst, with_scale=True) -> RigidTransform:
    """Least-squares ``s, R, t`` with ``s R src + t ~ dst`` (Umeyama's method)."""
    src, dst = _points(src), _points(dst)
    if len(src) != len(dst):
        raise ValueError(f"point counts differ: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateError("Procrustes alignment needs at least 3 point pairs")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.sum(xs ** 2) / len(src)
    cov = xd.T @ xs / len(src)
    u, sv, vt = np.linalg.svd(cov)
    if var_s <= 1e-300 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise DegenerateError("degenerate configuration: points are coincident or collinear")
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    rot = (u * d) @ vt
    scale = float(np.sum(sv * d) / var_s) if with_scale else 1.0
    trans = mu_d - scale * rot @ mu_s
    return RigidTransform(rot, trans, scale)


def procrustes_align(pred, gt, with_scale=True):
    """Similarity transform taking ``pred`` onto ``gt`` and the aligned points."""
    tf = similarity_fit(pred, gt, with_scale)
    return tf, tf.apply(_points(pred))


def _proper_sign_flips():
    for signs in itertools.product((1.0, -1.0), repeat=3):
        if np.prod(signs) > 0:
            yield np.array(signs)


def initial_candidates(src, dst, with_scale=True):
    """Starting transforms for ICP: principal-axes alignments under the four
    proper sign assignments, plus the centroid-matched identity rotation."""
    src, dst = _points(src), _points(dst)
    a_s, a_d = inertia_axes(src), inertia_axes(dst)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    if with_scale:
        scale = float(np.sqrt(np.sum((dst - mu_d) ** 2) / len(dst) / (np.sum((src - mu_s) ** 2) / len(src))))
    else:
        scale = 1.0
    rots = [(a_d * signs) @ a_s.T for signs in _proper_sign_flips()] + [np.eye(3)]
    return [RigidTransform(r, mu_d - scale * r @ mu_s, scale) for r in rots]


def _mean_nn(tf, src, index):
    moved = tf.apply(src)
    nn = index.query(moved)
    return float(np.mean(np.linalg.norm(moved - index.points[nn], axis=1))), nn


def inertia_initialization(src, dst, with_scale=True) -> RigidTransform:
    """Principal-axes alignment (with RMS-radius scale) of ``src`` onto ``dst``.

    Of the four proper sign assignments of the matched axes, the one with the
    lowest mean nearest-neighbour distance wins.
    """
    src, dst = _points(src), _points(dst)
    index = VertexIndex(dst)
    best, best_err = None, np.inf
    for tf in initial_candidates(src, dst, with_scale)[:4]:
        err, _ = _mean_nn(tf, src, index)
        if err < best_err - 1e-12:
            best, best_err = tf, err
    return best


def _icp_from(tf, src, dst, index, max_iter, tol, with_scale):
    err, nn = _mean_nn(tf, src, index)
    trace = [err]
    for _ in range(int(max_iter)):
        if err == 0.0:
            break
        try:
            cand = similarity_fit(src, dst[nn], with_scale)
        except DegenerateError:
            break
        cand_err, cand_nn = _mean_nn(cand, src, index)
        if cand_err > err:
            break
        decrease = err - cand_err
        tf, err, nn = cand, cand_err, cand_nn
        trace.append(err)
        if decrease < tol:
            break
    return tf, trace


def icp_align(source, target, max_iter=50, tol=1e-12, with_scale=True, init=None, return_trace=False):
    """Register ``source`` onto ``target`` with a similarity transform.

    Alternates nearest-vertex correspondences with a closed-form similarity
    update. An update that would raise the mean correspondence distance is
    rejected and ends the iteration, so the trace is non-increasing. Without
    ``init``, ICP runs from every start in ``initial_candidates`` and the run
    with the lowest final distance is kept; near-symmetric shapes make the
    principal axes alone ambiguous.
    """
    src, dst = _points(source), _points(target)
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateError("ICP needs at least 3 points on each side")
    index = VertexIndex(dst)
    starts = [init] if init is not None else initial_candidates(src, dst, with_scale)
    best_tf, best_trace = None, None
    for start in starts:
        tf, trace = _icp_from(start, src, dst, index, max_iter, tol, with_scale)
        if best_trace is None or trace[-1] < best_trace[-1] - 1e-15:
            best_tf, best_trace = tf, trace
        if best_trace[-1] == 0.0:
            break
    if return_trace:
        return best_tf, np.array(best_trace)
    return best_tf
