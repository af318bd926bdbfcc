"""SE(3) poses, rotation helpers and seeded random streams.

Conventions used throughout the toolkit:

- rotations are 3x3 orthonormal matrices with determinant +1
- translations are 3-vectors in millimetres
- a pose maps points as ``p -> R @ p + t``
- angles at the API surface are degrees; radians stay internal
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Re-orthonormalize after compose chains longer than this many factors to
# bound drift in long trajectory chains.
_RENORM_DEPTH = 8

# Construction-time orthonormality guard. Internal operations keep rotations
# far tighter than this; the loose bound is for user-supplied matrices.
_ORTHO_TOL = 1e-6


def _as_vec3(v, name="vector"):
    arr = np.array(v, dtype=float)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def _as_rotation(R, name="rotation"):
    arr = np.array(R, dtype=float)
    if arr.shape != (3, 3):
        raise ValidationError(f"{name} must have shape (3, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    err = np.abs(arr @ arr.T - np.eye(3)).max()
    if err > _ORTHO_TOL:
        raise ValidationError(f"{name} is not orthonormal (max deviation {err:.3g})")
    if abs(np.linalg.det(arr) - 1.0) > _ORTHO_TOL:
        raise ValidationError(f"{name} has determinant != +1 (reflection?)")
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: 3x3 rotation plus translation in mm.

    Immutable; the wrapped arrays are copied and marked read-only so poses
    are safe to share across threads.
    """

    rotation: np.ndarray
    translation: np.ndarray
    _depth: int = 0

    def __post_init__(self):
        R = _as_rotation(self.rotation)
        t = _as_vec3(self.translation, "translation")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValidationError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self):
        q = matrix_to_quat(self.rotation)
        t = self.translation
        return (f"Pose(q=[{q[0]:.6f} {q[1]:.6f} {q[2]:.6f} {q[3]:.6f}], "
                f"t=[{t[0]:.3f} {t[1]:.3f} {t[2]:.3f}] mm)")


def compose(a: Pose, b: Pose, *rest: Pose) -> Pose:
    """Compose poses; the result applies the rightmost pose first.

    compose(a, b)(x) == a(b(x)).
    """
    for nxt in (b,) + rest:
        R = a.rotation @ nxt.rotation
        t = a.rotation @ nxt.translation + a.translation
        depth = max(a._depth, nxt._depth) + 1
        if depth > _RENORM_DEPTH:
            R = normalize_rotation(R)
            depth = 0
        a = Pose(R, t, depth)
    return a


def invert(a: Pose) -> Pose:
    """Inverse pose (R^T, -R^T t)."""
    Rt = a.rotation.T
    return Pose(Rt, -(Rt @ a.translation), a._depth)


def apply(a: Pose, points):
    """Map one point (3,) or a stack (N, 3) through the pose."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        return a.rotation @ pts + a.translation
    return pts @ a.rotation.T + a.translation


def normalize_rotation(R) -> np.ndarray:
    """Project a near-rotation onto SO(3); never returns a reflection."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def axis_angle(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis by an angle in degrees."""
    ax = _as_vec3(axis, "axis")
    norm = np.linalg.norm(ax)
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError(f"axis must be unit length (|axis| = {norm:.12f})")
    theta = np.radians(angle_deg)
    K = np.array([[0.0, -ax[2], ax[1]],
                  [ax[2], 0.0, -ax[0]],
                  [-ax[1], ax[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_distance(a, b) -> float:
    """Geodesic angle between two rotations, in degrees, in [0, 180]."""
    Ra = np.asarray(a, dtype=float)
    Rb = np.asarray(b, dtype=float)
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z).

    The sign is canonicalized (first non-zero component positive) so equal
    rotations serialize identically.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    q = q / np.linalg.norm(q)
    for component in q:
        if component != 0.0:
            if component < 0.0:
                q = -q
            break
    return q


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic generator; distinct streams from one seed are independent.

    Identical (seed, stream) reproduces the identical sequence on every
    platform, which is what makes simulation reports byte-stable.
    """
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream,))))


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit sphere (normalized Gaussian draw)."""
    while True:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation (normalized 4-D Gaussian quaternion)."""
    while True:
        q = rng.standard_normal(4)
        norm = np.linalg.norm(q)
        if norm > 1e-12:
            return quat_to_matrix(q / norm)
