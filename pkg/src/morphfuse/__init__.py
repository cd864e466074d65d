"""Morphable face and body models, keypoint fitting, face/body fusion and mesh metrics."""
from .align import icp_align, procrustes_align, similarity_fit
from .body import (
    BodyModel,
    BodyParams,
    Keypoints2D,
    forward_kinematics,
    joint_loss,
    pose_body,
    pose_body_jacobian,
    project,
    rodrigues,
)
from .face import FaceCoefficients, MorphableFaceModel, apply_displacement, evaluate_3dmm
from .fitter import BestFitCache, FitConfig, StepControl, fit_body
from .fusion import (
    FaceRegionSpec,
    FusionResult,
    copy_paste_fuse,
    optimize_seam,
    seam_loss,
    smooth_merged_normals,
    stitch,
    transfer_neck_normals,
)
from .io import load_mesh, save_mesh
from .mesh import Mesh, RigidTransform, boundary_loops, compute_vertex_normals
from .metrics import df_discrepancy, mpjpe, pa_mpjpe, pa_v2v, point_to_plane, v2v
from .sdf import ScalarField2D, edt_sdf, refine_with_sdf, sample_sdf

__version__ = "0.1.0"

__all__ = [
    "BestFitCache",
    "BodyModel",
    "BodyParams",
    "FaceCoefficients",
    "FaceRegionSpec",
    "FitConfig",
    "FusionResult",
    "Keypoints2D",
    "Mesh",
    "MorphableFaceModel",
    "RigidTransform",
    "ScalarField2D",
    "StepControl",
    "apply_displacement",
    "boundary_loops",
    "compute_vertex_normals",
    "copy_paste_fuse",
    "df_discrepancy",
    "edt_sdf",
    "evaluate_3dmm",
    "fit_body",
    "forward_kinematics",
    "icp_align",
    "joint_loss",
    "load_mesh",
    "mpjpe",
    "optimize_seam",
    "pa_mpjpe",
    "pa_v2v",
    "point_to_plane",
    "pose_body",
    "pose_body_jacobian",
    "procrustes_align",
    "project",
    "refine_with_sdf",
    "rodrigues",
    "sample_sdf",
    "save_mesh",
    "seam_loss",
    "similarity_fit",
    "smooth_merged_normals",
    "stitch",
    "transfer_neck_normals",
    "v2v",
]
