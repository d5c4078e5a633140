"""Continuous 6D rotation representation (first two columns of a rotation matrix)."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, DegeneracyError

DEGENERACY_EPS = 1e-9
ORTHONORMAL_TOL = 1e-6


def rot6d_to_matrix(v) -> np.ndarray:
    """Map 6D vectors (..., 6) to rotation matrices (..., 3, 3) via Gram-Schmidt.

    The 6 values are the two column vectors ``a1 = v[:3]`` and ``a2 = v[3:]``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 6:
        raise ContractViolation(f"expected trailing dimension 6, got {v.shape}")
    a1, a2 = v[..., :3], v[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if (n1 < DEGENERACY_EPS).any():
        raise DegeneracyError("first column of 6D rotation is zero")
    b1 = a1 / n1
    resid = a2 - (b1 * a2).sum(axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(resid, axis=-1, keepdims=True)
    if (n2 < DEGENERACY_EPS).any():
        raise DegeneracyError("6D rotation columns are parallel")
    b2 = resid / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ContractViolation(f"expected (..., 3, 3) matrices, got {R.shape}")
    eye = np.eye(3)
    gram_err = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() if R.size else 0.0
    if gram_err > ORTHONORMAL_TOL or (np.abs(np.linalg.det(R) - 1.0) > ORTHONORMAL_TOL).any():
        raise ContractViolation("matrix is not a proper rotation")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def random_rotations(n, rng=None) -> np.ndarray:
    """Uniformly distributed rotations from normalized random quaternions."""
    rng = np.random.default_rng(rng)
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)], -1),
            np.stack([2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)], -1),
            np.stack([2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )
