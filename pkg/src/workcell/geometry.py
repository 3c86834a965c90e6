"""Rigid-body math, serial-arm kinematics, velocity IK, and pinhole projection.

Conventions: quaternions are scalar-first (w, x, y, z) and renormalized after
every composition; Denavit-Hartenberg parameters follow the standard (distal)
convention; twists stack linear before angular components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DimensionError, InvalidDepthError, SingularityError

QUAT_NORM_TOL = 1e-9


def _unit_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    qv = np.array([0.0, v[0], v[1], v[2]])
    return quat_multiply(quat_multiply(q, qv), quat_conjugate(q))[1:]


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit scalar-first quaternion with w >= 0."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return _unit_quat(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a unit quaternion, shortest arc."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = min(1.0, max(-1.0, float(q[0])))
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    return 2.0 * np.arctan2(s, w) * v / s


def quat_slerp(qa: np.ndarray, qb: np.ndarray, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation; antipodal tie keeps qa's sign."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    dot = min(1.0, dot)
    theta = np.arccos(dot)
    if theta < 1e-10:
        return _unit_quat(qa + alpha * (qb - qa))
    s = np.sin(theta)
    return _unit_quat((np.sin((1 - alpha) * theta) * qa + np.sin(alpha * theta) * qb) / s)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: position in meters, orientation as a unit quaternion."""

    position: np.ndarray
    orientation: np.ndarray  # (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", _unit_quat(self.orientation))
        if self.position.shape != (3,):
            raise DimensionError(f"position must be a 3-vector, got {self.position.shape}")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        return Pose(T[:3, 3], quat_from_matrix(T[:3, :3]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def transform(self, p: np.ndarray) -> np.ndarray:
        """Map a point from this pose's frame into the parent frame."""
        return quat_rotate(self.orientation, np.asarray(p, dtype=float)) + self.position

    def as_vector(self) -> np.ndarray:
        """(x, y, z, qw, qx, qy, qz) layout used on the wire and in episodes."""
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=float)
        return Pose(v[:3], v[3:7])


def compose(a: Pose, b: Pose) -> Pose:
    """Pose product a*b: b expressed in a's parent frame."""
    return Pose(a.transform(b.position), quat_multiply(a.orientation, b.orientation))


def invert(a: Pose) -> Pose:
    qi = quat_conjugate(a.orientation)
    return Pose(-quat_rotate(qi, a.position), qi)


@dataclass(frozen=True)
class Twist:
    """Cartesian velocity: linear m/s, angular rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float))
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float))
        if self.linear.shape != (3,) or self.angular.shape != (3,):
            raise DimensionError("twist parts must be 3-vectors")
        if not (np.all(np.isfinite(self.linear)) and np.all(np.isfinite(self.angular))):
            raise ValueError("twist components must be finite")

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    @staticmethod
    def from_vector(v) -> "Twist":
        v = np.asarray(v, dtype=float)
        return Twist(v[:3], v[3:6])


@dataclass(frozen=True)
class DHParams:
    """Standard (distal) DH table, one row per joint: a, alpha, d, theta_offset."""

    a: np.ndarray
    alpha: np.ndarray
    d: np.ndarray
    theta_offset: np.ndarray

    def __post_init__(self):
        for name in ("a", "alpha", "d", "theta_offset"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        n = self.a.shape[0]
        if not (self.alpha.shape[0] == self.d.shape[0] == self.theta_offset.shape[0] == n):
            raise DimensionError("DH columns must all have the same length")

    @property
    def dof(self) -> int:
        return int(self.a.shape[0])

    @staticmethod
    def from_rows(rows) -> "DHParams":
        """Rows of [a, alpha, d, theta_offset]."""
        arr = np.asarray(rows, dtype=float).reshape(-1, 4)
        return DHParams(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    def to_rows(self):
        return np.stack([self.a, self.alpha, self.d, self.theta_offset], axis=1).tolist()


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_dof(model: DHParams, q: np.ndarray) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape[0] != model.dof:
        raise DimensionError(f"q has {q.shape[0]} entries, model has {model.dof} joints")
    return q


def _link_frames(model: DHParams, q: np.ndarray):
    """Cumulative transforms T_0..T_n (base first, end-effector last)."""
    frames = [np.eye(4)]
    T = np.eye(4)
    for i in range(model.dof):
        T = T @ dh_transform(model.a[i], model.alpha[i], model.d[i], q[i] + model.theta_offset[i])
        frames.append(T)
    return frames


def fk(model: DHParams, q: np.ndarray) -> Pose:
    """Base-frame end-effector pose for joint positions q."""
    q = _check_dof(model, q)
    return Pose.from_matrix(_link_frames(model, q)[-1])


def jacobian(model: DHParams, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian, 6 x dof, rows: linear xyz then angular xyz."""
    q = _check_dof(model, q)
    frames = _link_frames(model, q)
    o_n = frames[-1][:3, 3]
    J = np.zeros((6, model.dof))
    for i in range(model.dof):
        z = frames[i][:3, 2]
        o = frames[i][:3, 3]
        J[:3, i] = np.cross(z, o_n - o)
        J[3:, i] = z
    return J


def dls_velocity_ik(J: np.ndarray, v: Twist, lam: float = 0.05) -> np.ndarray:
    """Damped least squares joint velocities: qd = J^T (J J^T + lam^2 I)^-1 v."""
    if lam < 0.0:
        raise ValueError("damping must be non-negative")
    J = np.asarray(J, dtype=float)
    vv = v.as_vector() if isinstance(v, Twist) else np.asarray(v, dtype=float)
    A = J @ J.T + (lam * lam) * np.eye(J.shape[0])
    if lam == 0.0:
        # No damping: refuse rank-deficient J J^T instead of blowing up.
        if np.linalg.matrix_rank(A, tol=1e-12) < A.shape[0]:
            raise SingularityError("J J^T is singular and damping is zero")
    return J.T @ np.linalg.solve(A, vv)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project(K: Intrinsics, p_cam: np.ndarray):
    """Camera-frame point (m) to pixel (u, v)."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z <= 0.0:
        raise BehindCameraError(f"point depth {z} is not in front of the camera")
    return (K.fx * x / z + K.cx, K.fy * y / z + K.cy)


def deproject(K: Intrinsics, pixel, depth: float) -> np.ndarray:
    """Pixel plus metric depth to a camera-frame point."""
    if depth <= 0.0:
        raise InvalidDepthError(f"depth {depth} must be positive")
    u, v = pixel
    return np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])
