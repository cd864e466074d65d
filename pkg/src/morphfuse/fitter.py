"""Fit body shape, pose and camera to 2D keypoints."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from .body import BodyModel, BodyParams, Keypoints2D, joint_loss, pose_body, pose_body_jacobian, project

ZERO_RESIDUAL = 1e-12


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class StepControl:
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.3
    max_damping: float = 1e12


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 500
    convergence_tol: float = 1e-12
    lambda_pose: float = 0.0
    lambda_shape: float = 0.0
    step_control: StepControl = field(default_factory=StepControl)
    init: BodyParams = None

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.lambda_pose < 0 or self.lambda_shape < 0:
            raise ValueError("prior weights must be non-negative")

    def to_json(self):
        sc = self.step_control
        out = {"max_iterations": int(self.max_iterations), "convergence_tol": self.convergence_tol,
               "lambda_pose": self.lambda_pose, "lambda_shape": self.lambda_shape,
               "step_control": {"initial_damping": sc.initial_damping, "damping_up": sc.damping_up,
                                "damping_down": sc.damping_down, "max_damping": sc.max_damping}}
        if self.init is not None:
            out["init"] = self.init.to_json()
        return out

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ValueError("fit config must be a JSON object")
        kw = {k: obj[k] for k in ("max_iterations", "convergence_tol", "lambda_pose", "lambda_shape") if k in obj}
        if "step_control" in obj:
            kw["step_control"] = StepControl(**obj["step_control"])
        if obj.get("init") is not None:
            kw["init"] = BodyParams.from_json(obj["init"])
        return cls(**kw)


def priors(beta, theta, lambda_pose, lambda_shape) -> float:
    """Quadratic shape prior plus pose prior on the articulated joints (root excluded)."""
    beta = np.asarray(beta, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return float(lambda_pose * np.sum(theta[3:] ** 2) + lambda_shape * np.sum(beta ** 2))


def fit_objective(model: BodyModel, params: BodyParams, targets: Keypoints2D, lambda_pose, lambda_shape):
    _, joints = pose_body(model, params)
    proj = project(joints, params.scale, params.translation)
    return joint_loss(proj, targets) + priors(params.beta, params.theta, lambda_pose, lambda_shape)


def _projected_with_jacobian(model, params):
    _, _, joints, d_joints = pose_body_jacobian(model, params, vertex_ids=[])
    s, t = params.scale, params.translation
    proj = s * joints[:, :2] + t
    k = model.n_joints
    jac = np.zeros((k, 2, d_joints.shape[2] + 3))
    jac[:, :, :-3] = s * d_joints[:, :2]
    jac[:, :, -3] = joints[:, :2]
    jac[:, 0, -2] = 1.0
    jac[:, 1, -1] = 1.0
    return proj, jac


def objective_gradient(model: BodyModel, params: BodyParams, targets: Keypoints2D,
                       lambda_pose=0.0, lambda_shape=0.0):
    """Value and analytic gradient of the fit objective in ``to_vector`` layout.

    Joints whose residual norm is below ``ZERO_RESIDUAL`` contribute no gradient.
    """
    proj, jac = _projected_with_jacobian(model, params)
    res = targets.visibility[:, None] * (proj - targets.points)
    norms = np.linalg.norm(res, axis=1)
    unit = np.divide(res, norms[:, None], out=np.zeros_like(res), where=norms[:, None] > ZERO_RESIDUAL)
    grad = np.einsum("ka,kap->p", unit * targets.visibility[:, None], jac)
    nb = model.n_betas
    grad[:nb] += 2 * lambda_shape * params.beta
    grad[nb + 3:nb + 3 * model.n_joints] += 2 * lambda_pose * params.theta[3:]
    value = float(norms.sum()) + priors(params.beta, params.theta, lambda_pose, lambda_shape)
    return value, grad


def _residuals(model, params, targets, cfg):
    """Stacked least-squares residuals used to propose steps, and their Jacobian."""
    proj, jac = _projected_with_jacobian(model, params)
    vis = targets.visibility > 0
    r = [(proj - targets.points)[vis].ravel()]
    j = [jac[vis].reshape(-1, jac.shape[2])]
    n = jac.shape[2]
    nb = model.n_betas
    if cfg.lambda_shape > 0:
        w = np.sqrt(cfg.lambda_shape)
        r.append(w * params.beta)
        jb = np.zeros((nb, n))
        jb[:, :nb] = w * np.eye(nb)
        j.append(jb)
    if cfg.lambda_pose > 0:
        w = np.sqrt(cfg.lambda_pose)
        na = 3 * (model.n_joints - 1)
        r.append(w * params.theta[3:])
        jp = np.zeros((na, n))
        jp[:, nb + 3:nb + 3 + na] = w * np.eye(na)
        j.append(jp)
    return np.concatenate(r), np.vstack(j)


def fit_body(model: BodyModel, targets: Keypoints2D, config: FitConfig = None):
    """Minimise reprojection loss + priors over (beta, theta, camera).

    Steps come from Levenberg-Marquardt on the squared residuals and are
    accepted only if they lower the true objective, so the returned trace of
    accepted losses is non-increasing.

    Returns ``(params, final_loss, trace)`` where ``trace[0]`` is the initial loss.
    """
    config = config or FitConfig()
    if len(targets.points) != model.n_joints:
        raise FitError(f"{len(targets.points)} keypoints for a {model.n_joints}-joint model")
    if not np.any(targets.visibility):
        raise FitError("all keypoints are invisible; the fit objective is unconstrained")
    params = config.init
    if params is None:
        params = model.zero_params()
    if len(params.beta) != model.n_betas or len(params.theta) != 3 * model.n_joints:
        raise FitError("initial parameters do not match the model dimensions")
    lp, ls = config.lambda_pose, config.lambda_shape
    loss = fit_objective(model, params, targets, lp, ls)
    if not np.isfinite(loss):
        raise FitError("initial loss is not finite")
    trace = [loss]
    sc = config.step_control
    mu = sc.initial_damping
    nb, nj = model.n_betas, model.n_joints
    for _ in range(int(config.max_iterations)):
        if loss == 0.0:
            break
        r, jac = _residuals(model, params, targets, config)
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag < 1e-12] = 1e-12
        x = params.to_vector()
        accepted = False
        while mu <= sc.max_damping:
            try:
                step = np.linalg.solve(jtj + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= sc.damping_up
                continue
            cand_x = x + step
            if cand_x[nb + 3 * nj] > 0:
                cand = BodyParams.from_vector(cand_x, nb, nj)
                cand_loss = fit_objective(model, cand, targets, lp, ls)
                if np.isfinite(cand_loss) and cand_loss < loss:
                    accepted = True
                    break
            mu *= sc.damping_up
        if not accepted:
            break
        decrease = loss - cand_loss
        params, loss = cand, cand_loss
        trace.append(loss)
        mu = max(mu * sc.damping_down, 1e-15)
        if decrease < config.convergence_tol:
            break
    return params, loss, np.array(trace)


class BestFitCache:
    """Best (lowest-loss) fit seen per sample id; safe for concurrent writers."""

    def __init__(self, entries: Dict[str, Tuple[BodyParams, float]] = None):
        self._entries = dict(entries or {})
        self._lock = threading.Lock()

    def __contains__(self, key):
        return key in self._entries

    def __len__(self):
        return len(self._entries)

    def get(self, key):
        return self._entries.get(key)

    def items(self):
        return sorted(self._entries.items())

    def update(self, key, params: BodyParams, loss: float) -> bool:
        """Store the candidate if it beats the stored loss; return True if it was kept."""
        loss = float(loss)
        if not np.isfinite(loss):
            raise ValueError("cache candidates need a finite loss")
        with self._lock:
            cur = self._entries.get(key)
            if cur is None or loss < cur[1]:
                self._entries[key] = (params, loss)
                return True
            return False

    def to_json(self):
        return {k: {"params": p.to_json(), "loss": l} for k, (p, l) in self.items()}

    @classmethod
    def from_json(cls, obj):
        return cls({k: (BodyParams.from_json(v["params"]), float(v["loss"])) for k, v in obj.items()})


def cache_update(cache: BestFitCache, key, params: BodyParams, loss: float):
    kept = cache.update(key, params, loss)
    return cache, kept


def with_init(config: FitConfig, init: BodyParams) -> FitConfig:
    return replace(config, init=init)
