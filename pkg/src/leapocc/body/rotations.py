"""Axis-angle <-> rotation matrix conversions (numpy and differentiable)."""

from __future__ import annotations

import numpy as np

from ..autodiff import F, Value, as_value


def rodrigues(aa: np.ndarray) -> np.ndarray:
    """Axis-angle vectors [..., 3] to rotation matrices [..., 3, 3]."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    safe = np.where(theta > 1e-12, theta, 1.0)
    k = np.where(theta > 1e-12, aa / safe, 0.0)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = np.zeros_like(kx)
    K = np.stack([zero, -kz, ky, kz, zero, -kx, -ky, kx, zero], axis=-1).reshape(aa.shape[:-1] + (3, 3))
    s = np.sin(theta)[..., None]
    c = np.cos(theta)[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + s * K + (1.0 - c) * (K @ K)


def rodrigues_value(aa) -> Value:
    """Differentiable Rodrigues for axis-angles away from zero, shape [..., 3]."""
    aa = as_value(aa)
    theta = F.sqrt(F.sum(F.square(aa), axis=-1, keepdims=True))
    k = F.div(aa, theta)
    kx, ky, kz = k[..., 0], k[..., 1], k[..., 2]
    zero = F.mul(kx, 0.0)
    K = F.reshape(
        F.stack([zero, F.neg(kz), ky, kz, zero, F.neg(kx), F.neg(ky), kx, zero], axis=-1),
        aa.shape[:-1] + (3, 3),
    )
    s = F.expand_dims(F.sin(theta), -1)
    c = F.expand_dims(F.cos(theta), -1)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return F.add(F.add(eye, F.mul(s, K)), F.mul(F.sub(1.0, c), F.matmul(K, K)))


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    R = np.asarray(R)
    return Rotation.from_matrix(R.reshape(-1, 3, 3)).as_rotvec().reshape(R.shape[:-2] + (3,))


def is_rotation(R: np.ndarray, tol: float = 1e-8) -> bool:
    R = np.asarray(R)
    eye = np.eye(3)
    err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max()
    return bool(err < tol and np.all(np.linalg.det(R) > 0))
