"""SMPL-style parametric body model: blend shapes, kinematic chain and LBS."""

from .model import (
    BodyModel,
    BoneTransformSet,
    beta_from_joints,
    bone_transforms,
    canonical_vertices,
    estimate_vertices_from_transforms,
    joints_from_shape,
    lbs_apply,
    pose_offsets,
    posed_vertices,
    shape_offsets,
)
from .rotations import is_rotation, matrix_to_axis_angle, rodrigues, rodrigues_value
from .synthetic import JOINT_NAMES, ModelGenerationError, make_synthetic_model, sample_pose

__all__ = [
    "BodyModel", "BoneTransformSet", "JOINT_NAMES", "ModelGenerationError",
    "beta_from_joints", "bone_transforms", "canonical_vertices",
    "estimate_vertices_from_transforms", "is_rotation", "joints_from_shape", "lbs_apply",
    "make_synthetic_model", "matrix_to_axis_angle", "pose_offsets", "posed_vertices",
    "rodrigues", "rodrigues_value", "sample_pose", "shape_offsets",
]
