"""SO(3) / so(3) geometry.

Rotations are plain ``(..., 3, 3)`` float arrays and tangent vectors plain
``(..., 3)`` arrays; every function broadcasts over leading axes. Quaternions
are stored scalar-first, ``(w, x, y, z)``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateColumns, NearPiSingularity, NonSkewInput

EPS_LOG = 1e-6
SMALL_ANGLE = 1e-4
ORTHO_TOL = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Map 3-vectors to skew-symmetric matrices."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(s: np.ndarray, check: bool = True) -> np.ndarray:
    """Inverse of :func:`hat`.

    Raises NonSkewInput when ``||s + s^T||_F >= 1e-8`` and ``check`` is set.
    """
    s = np.asarray(s, dtype=float)
    if check:
        defect = np.linalg.norm(s + np.swapaxes(s, -1, -2), axis=(-2, -1))
        if np.any(defect >= 1e-8):
            raise NonSkewInput(f"matrix is not skew-symmetric (defect {np.max(defect):.3e})")
    return np.stack([s[..., 2, 1], s[..., 0, 2], s[..., 1, 0]], axis=-1)


def _exp_coeffs(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # sin(t)/t and (1 - cos t)/t^2 with series below SMALL_ANGLE
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    return a, b


def exp_map(xi: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    xi = np.asarray(xi, dtype=float)
    theta = np.linalg.norm(xi, axis=-1)
    a, b = _exp_coeffs(theta)
    K = hat(xi)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def rotation_angle(r: np.ndarray) -> np.ndarray:
    """Angle in [0, pi] of a rotation, accurate near 0 and near pi."""
    r = np.asarray(r, dtype=float)
    s = np.linalg.norm(vee(r - np.swapaxes(r, -1, -2), check=False), axis=-1) / 2.0
    c = (np.trace(r, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arctan2(s, c)


def log_map(r: np.ndarray) -> np.ndarray:
    """Rotation vector of ``r``; raises NearPiSingularity at angles >= pi - 1e-6."""
    r = np.asarray(r, dtype=float)
    theta = rotation_angle(r)
    if np.any(theta >= np.pi - EPS_LOG):
        raise NearPiSingularity(f"rotation angle {np.max(theta):.9f} too close to pi")
    w = vee(r - np.swapaxes(r, -1, -2), check=False) / 2.0
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    scale = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0, t / np.sin(t))
    return scale[..., None] * w


def left_jacobian(v: np.ndarray) -> np.ndarray:
    """Left Jacobian of Exp: d/dt Exp(v(t)) = hat(J_l(v) v') Exp(v(t))."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(t)) / (t * t))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (t - np.sin(t)) / (t**3))
    K = hat(v)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + b[..., None, None] * K + c[..., None, None] * (K @ K)


def right_jacobian(v: np.ndarray) -> np.ndarray:
    return left_jacobian(-np.asarray(v, dtype=float))


def geodesic_dist(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """``||Log(r1 r2^T)||``, the intrinsic distance on SO(3)."""
    rel = np.asarray(r1) @ np.swapaxes(np.asarray(r2), -1, -2)
    return np.linalg.norm(log_map(rel), axis=-1)


def rge(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Rotational geodesic error ``2 asin(||r2 - r1||_F / (2 sqrt 2))``.

    Defined for every pair, including antipodal ones.
    """
    d = np.linalg.norm(np.asarray(r2, dtype=float) - np.asarray(r1, dtype=float), axis=(-2, -1))
    return 2.0 * np.arcsin(np.clip(d / (2.0 * np.sqrt(2.0)), 0.0, 1.0))


def to_6d(r: np.ndarray) -> np.ndarray:
    """First two columns of ``r`` stacked as (c1, c2)."""
    r = np.asarray(r, dtype=float)
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def from_6d_gso(v: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a 6-vector (two stacked columns) into a rotation matrix."""
    v = np.asarray(v, dtype=float)
    a1, a2 = v[..., :3], v[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1)
    n2 = np.linalg.norm(a2, axis=-1)
    if np.any(n1 <= 1e-300) or np.any(n2 <= 1e-300):
        raise DegenerateColumns("zero column in 6D representation")
    angle = np.arctan2(np.linalg.norm(np.cross(a1, a2), axis=-1), np.sum(a1 * a2, axis=-1))
    if np.any(np.minimum(angle, np.pi - angle) <= 1e-6):
        raise DegenerateColumns("parallel columns in 6D representation")
    b1 = a1 / n1[..., None]
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    b2 = u2 / np.linalg.norm(u2, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def orthogonality_defect(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.linalg.norm(np.swapaxes(r, -1, -2) @ r - np.eye(3), axis=(-2, -1))


def reorthonormalize(r: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    """Project back onto SO(3) by GSO when the defect exceeds ``tol``."""
    r = np.asarray(r, dtype=float)
    if np.all(orthogonality_defect(r) <= tol):
        return r
    return from_6d_gso(to_6d(r))


def is_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    r = np.asarray(r, dtype=float)
    return bool(
        np.all(orthogonality_defect(r) < tol) and np.all(np.abs(np.linalg.det(r) - 1.0) < tol)
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix, via Shepperd's method."""
    r = np.asarray(r, dtype=float)
    flat = r.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, m in enumerate(flat):
        tr = np.trace(m)
        diag = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
        k = int(np.argmax(diag))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [s / 4, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, s / 4, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, s / 4, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, s / 4]
        q = np.asarray(q)
        out[i] = q if q[0] >= 0 else -q
    return out.reshape(r.shape[:-2] + (4,))


def sphere_projection(r: np.ndarray) -> np.ndarray:
    """Unit rotation axis taken from the quaternion vector part (for S^2 plots).

    Identity rotations have no axis; they map to the zero vector.
    """
    q = matrix_to_quat(r)
    vec = q[..., 1:]
    n = np.linalg.norm(vec, axis=-1, keepdims=True)
    return np.where(n > 1e-15, vec / np.where(n > 1e-15, n, 1.0), 0.0)


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotation(s) via Shoemake's subgroup algorithm."""
    shape = () if size is None else (size,)
    u1, u2, u3 = (rng.random(shape) for _ in range(3))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.stack(
        [
            b * np.cos(2 * np.pi * u3),
            a * np.sin(2 * np.pi * u2),
            a * np.cos(2 * np.pi * u2),
            b * np.sin(2 * np.pi * u3),
        ],
        axis=-1,
    )
    return quat_to_matrix(q)


def sample_tangent_noise(delta: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    shape = (3,) if size is None else (size, 3)
    if delta == 0:
        return np.zeros(shape)
    return rng.normal(0.0, delta, shape)


def perturb(x: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Left-multiplicative tangent noise: ``Exp(eps) x`` with ``eps ~ N(0, delta^2 I)``."""
    x = np.asarray(x, dtype=float)
    if delta == 0:
        return x.copy()
    batch = x.reshape(-1, 3, 3)
    eps = sample_tangent_noise(delta, rng, batch.shape[0])
    return (exp_map(eps) @ batch).reshape(x.shape)
