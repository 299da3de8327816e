"""Sim(3) and SO(3) transform algebra.

Conventions used throughout the package:

* rotations are stored as unit quaternions (w, x, y, z) and renormalized
  after every composition so long chains do not drift;
* a similarity transform acts on points as ``scale * R @ p + t``;
* tangent vectors are ordered (translation[3], rotation[3], log_scale[1])
  and the translational block of exp/log uses the scaled left Jacobian,
  evaluated exactly through a block matrix exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import AngleNearPi

# A 3-vector is a plain float64 ndarray of shape (3,).
Vec3 = np.ndarray
# Tangent coordinates: (rho[3], phi[3], sigma), shape (7,).
TangentSim3 = np.ndarray

_QUAT_TINY = 1e-12


def _as_vec3(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64)
    if v.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {v.shape}")
    return v


def skew(v: Vec3) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _quat_from_matrix(m: np.ndarray) -> np.ndarray:
    # Shepperd's branch selection keeps the divisor away from zero
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        r = math.sqrt(1.0 + t)
        s = 0.5 / r
        q = (0.5 * r, (m[2, 1] - m[1, 2]) * s, (m[0, 2] - m[2, 0]) * s,
             (m[1, 0] - m[0, 1]) * s)
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        r = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        s = 0.5 / r
        q = ((m[2, 1] - m[1, 2]) * s, 0.5 * r, (m[0, 1] + m[1, 0]) * s,
             (m[0, 2] + m[2, 0]) * s)
    elif m[1, 1] >= m[2, 2]:
        r = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
        s = 0.5 / r
        q = ((m[0, 2] - m[2, 0]) * s, (m[0, 1] + m[1, 0]) * s, 0.5 * r,
             (m[1, 2] + m[2, 1]) * s)
    else:
        r = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
        s = 0.5 / r
        q = ((m[1, 0] - m[0, 1]) * s, (m[0, 2] + m[2, 0]) * s,
             (m[1, 2] + m[2, 1]) * s, 0.5 * r)
    return np.array(q)


def _rotvec_from_unit_quat(quat: np.ndarray) -> np.ndarray:
    q = quat if quat[0] >= 0.0 else -quat
    w = q[0]
    xyz = q[1:]
    n = float(np.linalg.norm(xyz))
    if n < _QUAT_TINY:
        return (2.0 / w) * xyz
    return xyz * (2.0 * math.atan2(n, w) / n)


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion wrapper; immutable."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components (w, x, y, z)")
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < _QUAT_TINY:
            raise ValueError("quaternion norm is zero or non-finite")
        object.__setattr__(self, "quat", q / n)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_quat(w: float, x: float, y: float, z: float) -> "Rotation":
        return Rotation(np.array([w, x, y, z], dtype=np.float64))

    @staticmethod
    def from_rotvec(phi) -> "Rotation":
        """Axis-angle vector (radians) to quaternion."""
        phi = _as_vec3(phi)
        angle = float(np.linalg.norm(phi))
        if angle < 1e-9:
            # sin(a/2)/a ~ 1/2 - a^2/48; truncation below double precision here
            return Rotation(np.concatenate(([1.0 - angle * angle / 8.0], 0.5 * phi)))
        return Rotation(np.concatenate(([math.cos(0.5 * angle)],
                                        (math.sin(0.5 * angle) / angle) * phi)))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        """Quaternion from a (possibly slightly non-orthogonal) rotation matrix."""
        return Rotation(_quat_from_matrix(np.asarray(m, dtype=np.float64)))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def as_rotvec(self) -> np.ndarray:
        return _rotvec_from_unit_quat(self.quat)

    @property
    def angle(self) -> float:
        """Rotation angle in [0, pi]."""
        n = float(np.linalg.norm(self.quat[1:]))
        return 2.0 * math.atan2(n, abs(float(self.quat[0])))

    def compose(self, other: "Rotation") -> "Rotation":
        aw, ax, ay, az = self.quat
        bw, bx, by, bz = other.quat
        # Rotation() renormalizes, which keeps long chains on the unit sphere.
        return Rotation(np.array([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, p) -> np.ndarray:
        return self.as_matrix() @ _as_vec3(p)


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform: p -> scale * R @ p + translation."""

    scale: float = 1.0
    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")
        t = _as_vec3(self.translation)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation components must be finite")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Sim3Transform":
        return Sim3Transform()

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form [[s*R, t], [0, 1]]."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m


def sim3_apply(a: Sim3Transform, p) -> np.ndarray:
    return a.scale * a.rotation.apply(p) + a.translation


def sim3_apply_many(a: Sim3Transform, pts: np.ndarray) -> np.ndarray:
    """Apply to an (n, 3) array of points."""
    pts = np.asarray(pts, dtype=np.float64)
    return a.scale * pts @ a.rotation.as_matrix().T + a.translation


def sim3_compose(a: Sim3Transform, b: Sim3Transform) -> Sim3Transform:
    """Composite transform applying b first, then a."""
    return Sim3Transform(
        scale=a.scale * b.scale,
        rotation=a.rotation.compose(b.rotation),
        translation=a.scale * a.rotation.apply(b.translation) + a.translation,
    )


def sim3_inverse(a: Sim3Transform) -> Sim3Transform:
    inv_rot = a.rotation.inverse()
    inv_scale = 1.0 / a.scale
    return Sim3Transform(
        scale=inv_scale,
        rotation=inv_rot,
        translation=-inv_scale * inv_rot.apply(a.translation),
    )


def expm_phi1(a: np.ndarray) -> np.ndarray:
    """phi1(A) = sum_k A^k / (k+1)!  (equals A^-1 (e^A - I) when A is invertible).

    Evaluated through expm([[A, I], [0, 0]]), whose upper-right block is
    phi1(A); exact for singular A and smooth in A, unlike the usual
    closed-form coefficient branches.
    """
    n = a.shape[0]
    if np.linalg.norm(a) < 0.5:
        # Taylor sum; truncation below 1e-15 at this norm, and it agrees
        # with the expm path to the same level so there is no seam
        term = np.eye(n)
        total = np.eye(n)
        for k in range(2, 14):
            term = term @ a / k
            total = total + term
            if float(np.abs(term).max()) < 1e-17:
                break
        return total
    block = np.zeros((2 * n, 2 * n))
    block[:n, :n] = a
    block[:n, n:] = np.eye(n)
    return expm(block)[:n, n:]


def _translation_jacobian(sigma: float, phi: np.ndarray) -> np.ndarray:
    # Scaled left Jacobian: exp maps rho to W @ rho with W = phi1(sigma*I + phi^).
    return expm_phi1(sigma * np.eye(3) + skew(phi))


def sim3_exp(v: TangentSim3) -> Sim3Transform:
    """Exponential map from tangent coordinates (rho, phi, sigma)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (7,):
        raise ValueError("tangent vector must have 7 components")
    rho, phi, sigma = v[:3], v[3:6], float(v[6])
    w = _translation_jacobian(sigma, phi)
    return Sim3Transform(
        scale=math.exp(sigma),
        rotation=Rotation.from_rotvec(phi),
        translation=w @ rho,
    )


def sim3_log(a: Sim3Transform) -> TangentSim3:
    """Logarithm map; inverse of sim3_exp for rotation angles below pi.

    Raises AngleNearPi when the rotation angle is within 1e-6 of pi, where
    the map is ill-conditioned.
    """
    angle = a.rotation.angle
    if angle >= math.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {angle:.9f} too close to pi")
    phi = a.rotation.as_rotvec()
    sigma = math.log(a.scale)
    w = _translation_jacobian(sigma, phi)
    rho = np.linalg.solve(w, a.translation)
    return np.concatenate([rho, phi, [sigma]])


def sim3_log_parts(scale: float, rot: np.ndarray, trans: np.ndarray) -> TangentSim3:
    """sim3_log on raw (scale, rotation matrix, translation) parts.

    Object-free path for hot loops; same math and the same AngleNearPi
    guard as sim3_log.
    """
    quat = _quat_from_matrix(rot)
    quat = quat / np.linalg.norm(quat)
    n = float(np.linalg.norm(quat[1:]))
    if 2.0 * math.atan2(n, abs(float(quat[0]))) >= math.pi - 1e-6:
        raise AngleNearPi("rotation angle too close to pi")
    phi = _rotvec_from_unit_quat(quat)
    sigma = math.log(scale)
    a = sigma * np.eye(3) + skew(phi)
    if np.linalg.norm(a) < 0.5:
        # rho = phi1(A)^-1 t via the Bernoulli series A/(e^A - 1);
        # truncation ~|A|^8/1.2e6, below 4e-12 at this norm
        a2 = a @ a
        a4 = a2 @ a2
        rho = (np.eye(3) - 0.5 * a + a2 / 12.0
               - a4 / 720.0 + (a4 @ a2) / 30240.0) @ trans
    else:
        rho = np.linalg.solve(expm_phi1(a), trans)
    return np.concatenate([rho, phi, [sigma]])


def sim3_adjoint(a: Sim3Transform) -> np.ndarray:
    """7x7 group adjoint: sim3_exp(adjoint(a) @ v) == a * exp(v) * a^-1."""
    r = a.rotation.as_matrix()
    t = a.translation
    adj = np.zeros((7, 7))
    adj[:3, :3] = a.scale * r
    adj[:3, 3:6] = skew(t) @ r
    adj[:3, 6] = -t
    adj[3:6, 3:6] = r
    adj[6, 6] = 1.0
    return adj


def sim3_tangent_ad(v: TangentSim3) -> np.ndarray:
    """7x7 algebra adjoint (bracket matrix) of a tangent vector."""
    rho, phi, sigma = v[:3], v[3:6], float(v[6])
    ad = np.zeros((7, 7))
    ad[:3, :3] = sigma * np.eye(3) + skew(phi)
    ad[:3, 3:6] = skew(rho)
    ad[:3, 6] = -rho
    ad[3:6, 3:6] = skew(phi)
    return ad


def rotation_distance(a: Rotation, b: Rotation) -> float:
    """Geodesic angle between two rotations, in radians."""
    return a.inverse().compose(b).angle


def sim3_distance(a: Sim3Transform, b: Sim3Transform) -> float:
    """Crude scalar gap between two transforms; used by tests and reports."""
    return (
        rotation_distance(a.rotation, b.rotation)
        + abs(math.log(b.scale / a.scale))
        + float(np.linalg.norm(a.translation - b.translation))
    )
