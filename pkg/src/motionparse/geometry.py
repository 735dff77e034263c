"""Camera geometry: pinhole projection, SE(3) transforms, rigid scene flow.

Conventions used across the package:

* Pixel coordinates (u, v) address pixel centers. Column u, row v of an
  image has homogeneous coordinates (u, v, 1); both start at 0.
* Depth is distance along the camera z axis, not ray length.
* A Pose maps points between camera frames: x_out = R @ x_in + t.
* Twists are 6-vectors laid out (tx, ty, tz, rx, ry, rz). pose_from_twist
  is the full SE(3) exponential map (Rodrigues rotation plus the coupled
  translation block), so exp(-log(P)) is exactly inverse(P).

Scalar helpers are plain numpy. Dense per-pixel ops are torch float64 and
differentiable, because the optimizer backpropagates through them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ._tensor import DTYPE, as_tensor
from .errors import BehindCameraError, DomainError

# Transformed points at or below this z are treated as behind the camera.
MIN_PROJECT_DEPTH = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics plus the pixel extent they refer to."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image extent must be positive, got {self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        """3x3 projection matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    def scaled(self, level: int) -> "CameraIntrinsics":
        """Intrinsics of pyramid level `level` under 2x2 average pooling.

        Level-l pixel i covers level-0 pixels [2^l * i, 2^l * (i + 1)),
        whose centers average to 2^l * i + (2^l - 1) / 2. That fixes both
        the focal scaling and the principal-point shift.
        """
        if level < 0:
            raise DomainError(f"pyramid level must be >= 0, got {level}")
        if level == 0:
            return self
        s = float(2**level)
        off = (s - 1.0) / 2.0
        w, h = self.width, self.height
        for _ in range(level):
            w = (w + 1) // 2
            h = (h + 1) // 2
        return CameraIntrinsics(self.fx / s, self.fy / s, (self.cx - off) / s, (self.cy - off) / s, w, h)


@dataclass(frozen=True)
class Pose:
    """Rigid transform x_out = rotation @ x_in + translation."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3):
            raise DomainError(f"rotation must be (3, 3), got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise DomainError(f"translation must be (3,), got {self.translation.shape}")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or an array of points (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


# ---------------------------------------------------------------------------
# SE(3) exponential / logarithm
# ---------------------------------------------------------------------------

_TAYLOR_EPS = 1e-8  # switch to series below this squared angle


def _skew(w: torch.Tensor) -> torch.Tensor:
    zero = w[0] * 0.0
    return torch.stack(
        [
            torch.stack([zero, -w[2], w[1]]),
            torch.stack([w[2], zero, -w[0]]),
            torch.stack([-w[1], w[0], zero]),
        ]
    )


def twist_to_tensors(twist: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """SE(3) exponential of a twist, differentiable and stable near zero.

    twist: (6,) tensor laid out (tx, ty, tz, rx, ry, rz).
    Returns (rotation (3, 3), translation (3,)).

    R = I + A * W + B * W^2 and t = (I + B * W + C * W^2) @ v with
    A = sin(h)/h, B = (1 - cos(h))/h^2, C = (h - sin(h))/h^3 for angle h.
    The coefficients are functions of h^2 alone, so tiny angles use their
    series and autograd stays finite at exactly zero rotation.
    """
    twist = as_tensor(twist)
    if twist.shape != (6,):
        raise DomainError(f"twist must have shape (6,), got {tuple(twist.shape)}")
    v, w = twist[:3], twist[3:]
    h2 = (w * w).sum()
    small = h2 < _TAYLOR_EPS
    h2_safe = torch.where(small, torch.ones_like(h2), h2)
    h = torch.sqrt(h2_safe)
    a = torch.where(small, 1.0 - h2 / 6.0 + h2 * h2 / 120.0, torch.sin(h) / h)
    b = torch.where(small, 0.5 - h2 / 24.0 + h2 * h2 / 720.0, (1.0 - torch.cos(h)) / h2_safe)
    c = torch.where(small, 1.0 / 6.0 - h2 / 120.0 + h2 * h2 / 5040.0, (h - torch.sin(h)) / (h2_safe * h))
    skew = _skew(w)
    skew2 = skew @ skew
    eye = torch.eye(3, dtype=DTYPE)
    rotation = eye + a * skew + b * skew2
    translation = (eye + b * skew + c * skew2) @ v
    return rotation, translation


def pose_from_twist(twist) -> Pose:
    """SE(3) exponential map of a (tx, ty, tz, rx, ry, rz) twist."""
    with torch.no_grad():
        r, t = twist_to_tensors(as_tensor(np.asarray(twist, dtype=np.float64)))
    return Pose(r.numpy(), t.numpy())


def twist_from_pose(pose: Pose) -> np.ndarray:
    """SE(3) logarithm; inverse of pose_from_twist for rotation angles < pi."""
    r, t = pose.rotation, pose.translation
    cos_h = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    h = float(np.arccos(cos_h))
    vee = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if h < 1e-6:
        w = vee  # sin(h)/h ~ 1
        k = 1.0 / 12.0
    else:
        if abs(np.pi - h) < 1e-6:
            raise DomainError("twist_from_pose is singular near a half-turn rotation")
        w = h / np.sin(h) * vee
        k = (1.0 - (h * np.sin(h)) / (2.0 * (1.0 - np.cos(h)))) / (h * h)
    skew = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    v_inv = np.eye(3) - 0.5 * skew + k * (skew @ skew)
    return np.concatenate([v_inv @ t, w])


def pose_inverse(pose: Pose) -> Pose:
    rt = pose.rotation.T
    return Pose(rt, -rt @ pose.translation)


def pose_compose(first: Pose, second: Pose) -> Pose:
    """Pose applying `first`, then `second`: x -> second(first(x))."""
    return Pose(second.rotation @ first.rotation, second.rotation @ first.translation + second.translation)


# ---------------------------------------------------------------------------
# Scalar projection helpers
# ---------------------------------------------------------------------------


def back_project(p, depth: float, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Lift pixel p = (u, v) at the given depth to a camera-frame point.

    Returns (3,): depth * K^-1 @ (u, v, 1).
    """
    if depth <= 0:
        raise DomainError(f"back_project requires positive depth, got {depth}")
    u, v = float(p[0]), float(p[1])
    return np.array(
        [
            depth * (u - intrinsics.cx) / intrinsics.fx,
            depth * (v - intrinsics.cy) / intrinsics.fy,
            depth,
        ]
    )


def project(point, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection keeping depth: (x, y, z) -> (u, v, z)."""
    x, y, z = (float(c) for c in point)
    if abs(z) < MIN_PROJECT_DEPTH:
        raise DomainError(f"cannot project point with |z| < {MIN_PROJECT_DEPTH}: z={z}")
    return np.array([intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy, z])


def rigid_reproject(p, depth: float, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Where pixel p at `depth` lands in the other camera, with its new depth.

    Returns (u', v', projected_depth). Raises BehindCameraError when the
    transformed point has z <= MIN_PROJECT_DEPTH.
    """
    moved = pose.transform(back_project(p, depth, intrinsics))
    if moved[2] <= MIN_PROJECT_DEPTH:
        raise BehindCameraError(f"point reprojects behind the camera: z={moved[2]}")
    return project(moved, intrinsics)


# ---------------------------------------------------------------------------
# Dense (differentiable) field ops
# ---------------------------------------------------------------------------


def pixel_grid(height: int, width: int) -> torch.Tensor:
    """(H, W, 2) tensor of pixel-center coordinates, last axis (u, v)."""
    vv, uu = torch.meshgrid(
        torch.arange(height, dtype=DTYPE), torch.arange(width, dtype=DTYPE), indexing="ij"
    )
    return torch.stack([uu, vv], dim=-1)


def back_project_field(depth, intrinsics: CameraIntrinsics) -> torch.Tensor:
    """Per-pixel camera-frame points of a depth map. (H, W) -> (H, W, 3)."""
    d = as_tensor(depth)
    grid = pixel_grid(d.shape[0], d.shape[1])
    x = d * (grid[..., 0] - intrinsics.cx) / intrinsics.fx
    y = d * (grid[..., 1] - intrinsics.cy) / intrinsics.fy
    return torch.stack([x, y, d], dim=-1)


def transform_field(points, pose_r, pose_t) -> torch.Tensor:
    """Apply a rigid transform to a (..., 3) point field."""
    r = as_tensor(pose_r)
    t = as_tensor(pose_t)
    return as_tensor(points) @ r.T + t


def project_field(points, intrinsics: CameraIntrinsics):
    """Project a (..., 3) point field.

    Returns (coords (..., 2), proj_depth (...,), valid (...,) bool) where
    valid is False for points behind the camera (z <= MIN_PROJECT_DEPTH).
    Coordinates of invalid points are computed against a clamped depth and
    carry no meaning; downstream consumers must honor the flag.
    """
    pts = as_tensor(points)
    z = pts[..., 2]
    valid = z > MIN_PROJECT_DEPTH
    z_safe = torch.where(valid, z, torch.ones_like(z))
    u = intrinsics.fx * pts[..., 0] / z_safe + intrinsics.cx
    v = intrinsics.fy * pts[..., 1] / z_safe + intrinsics.cy
    return torch.stack([u, v], dim=-1), z, valid


def rigid_reproject_field(depth, pose: Pose | tuple, intrinsics: CameraIntrinsics):
    """Dense counterpart of rigid_reproject.

    `pose` is either a Pose or a (rotation, translation) tensor pair (the
    tensor form keeps autograd connected to a twist upstream).
    Returns (coords (H, W, 2), proj_depth (H, W), valid (H, W))."""
    if isinstance(pose, Pose):
        pose_r, pose_t = pose.rotation, pose.translation
    else:
        pose_r, pose_t = pose
    moved = transform_field(back_project_field(depth, intrinsics), pose_r, pose_t)
    return project_field(moved, intrinsics)


def rigid_flow_field(depth, pose: Pose | tuple, intrinsics: CameraIntrinsics):
    """Optical flow induced by camera motion over a static scene.

    Returns (flow (H, W, 2), valid (H, W)); flow is the pixel displacement
    p_reprojected - p, and valid flags pixels that stay in front of the
    camera (nothing is clamped away).
    """
    coords, _, valid = rigid_reproject_field(depth, pose, intrinsics)
    grid = pixel_grid(coords.shape[0], coords.shape[1])
    return coords - grid, valid
