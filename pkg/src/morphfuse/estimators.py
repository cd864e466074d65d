"""scikit-learn compatible wrappers around the fitting and alignment routines."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .align import icp_align, similarity_fit
from .body import Keypoints2D, joint_loss, pose_body, project
from .fitter import FitConfig, StepControl, fit_body
from .mesh import Mesh
from .sdf import edt_sdf, refine_with_sdf


def _points3(X, name="X"):
    X = check_array(X, ensure_min_samples=3, input_name=name)
    if X.shape[1] != 3:
        raise ValueError(f"{name} must be an (n, 3) array of points, got shape {X.shape}")
    return X


class ProcrustesAlignment(TransformerMixin, BaseEstimator):
    """Closed-form similarity alignment of corresponding point sets."""

    def __init__(self, with_scale=True):
        self.with_scale = with_scale

    def fit(self, X, y):
        X, y = _points3(X), _points3(y, "y")
        self.transform_ = similarity_fit(X, y, self.with_scale)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(check_array(X))

    def residual(self, X, y):
        check_is_fitted(self, "transform_")
        return float(np.mean(np.linalg.norm(self.transform(X) - check_array(y), axis=1)))


class ICPRegistration(TransformerMixin, BaseEstimator):
    """Similarity ICP with principal-axes initialisation.

    ``fit(X, y)`` registers source points ``X`` onto target points ``y``.
    """

    def __init__(self, max_iter=50, tol=1e-12, with_scale=True):
        self.max_iter = max_iter
        self.tol = tol
        self.with_scale = with_scale

    def fit(self, X, y):
        X, y = _points3(X), _points3(y, "y")
        self.transform_, self.trace_ = icp_align(X, y, self.max_iter, self.tol, self.with_scale, return_trace=True)
        self.n_iter_ = len(self.trace_) - 1
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        return self.transform_.apply(check_array(X))


class SDFRefiner(TransformerMixin, BaseEstimator):
    """Builds a signed distance field from a line mask and pulls vertices onto its zero set.

    ``fit(line_mask, inside_mask=None)`` builds the field; ``transform`` moves
    ``(n, 3)`` vertices by ``p - step_size * SDF(p) * grad SDF(p)`` in ``plane``.
    """

    def __init__(self, spacing=1.0, origin=(0.0, 0.0), step_size=0.1, plane="xy", iterations=1):
        self.spacing = spacing
        self.origin = origin
        self.step_size = step_size
        self.plane = plane
        self.iterations = iterations

    def fit(self, X, y=None):
        line = check_array(X, ensure_min_features=1, input_name="line_mask")
        inside = None if y is None else check_array(y, input_name="inside_mask")
        self.field_ = edt_sdf(line, self.spacing, inside, self.origin)
        return self

    def transform(self, X):
        check_is_fitted(self, "field_")
        v = check_array(X)
        mesh = Mesh(v)
        return refine_with_sdf(mesh, self.field_, self.step_size, self.plane, self.iterations).vertices.copy()


class BodyFitter(BaseEstimator):
    """Fit a body model to one frame of 2D keypoints.

    ``X`` is a ``(K, 2)`` keypoint array; ``visibility`` defaults to all ones.
    After fitting, ``params_``, ``loss_`` and ``trace_`` hold the result and
    ``predict`` returns the reprojected joints.
    """

    def __init__(self, model=None, max_iterations=500, convergence_tol=1e-12, lambda_pose=0.0,
                 lambda_shape=0.0, init=None, initial_damping=1e-3):
        self.model = model
        self.max_iterations = max_iterations
        self.convergence_tol = convergence_tol
        self.lambda_pose = lambda_pose
        self.lambda_shape = lambda_shape
        self.init = init
        self.initial_damping = initial_damping

    def _config(self):
        return FitConfig(self.max_iterations, self.convergence_tol, self.lambda_pose, self.lambda_shape,
                         StepControl(initial_damping=self.initial_damping), self.init)

    def fit(self, X, y=None, visibility=None, cache=None, sample_id=None):
        if self.model is None:
            raise ValueError("BodyFitter needs a body model")
        X = check_array(X, input_name="keypoints")
        if visibility is None:
            visibility = np.ones(len(X))
        targets = Keypoints2D(X, visibility)
        self.params_, self.loss_, self.trace_ = fit_body(self.model, targets, self._config())
        self.n_iter_ = len(self.trace_) - 1
        if cache is not None and sample_id is not None:
            cache.update(sample_id, self.params_, self.loss_)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "params_")
        _, joints = pose_body(self.model, self.params_)
        return project(joints, self.params_.scale, self.params_.translation)

    def score(self, X, y=None, visibility=None):
        """Negative reprojection loss of the fitted parameters against ``X``."""
        X = check_array(X, input_name="keypoints")
        vis = np.ones(len(X)) if visibility is None else visibility
        return -joint_loss(self.predict(), Keypoints2D(X, vis))

    def posed_mesh(self):
        check_is_fitted(self, "params_")
        return pose_body(self.model, self.params_)[0]


__all__ = ["BodyFitter", "ICPRegistration", "ProcrustesAlignment", "SDFRefiner"]
