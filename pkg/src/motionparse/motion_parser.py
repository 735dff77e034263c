"""Per-pixel 3D motion decomposition.

Splits the apparent motion of every target pixel into the part explained
by camera motion over the static scene and a residual dynamic part, and
derives visibility plus soft/binary moving-object masks from them.  All
motion vectors live in camera frames: the rigid map in the target frame,
the dynamic map in the source frame (both of its branches are expressed
after applying the camera transform, which keeps segmentation thresholds
frame-consistent).

There are no tunable parameters here beyond the visibility deposit
threshold; every output is a deterministic function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ._tensor import DTYPE, as_tensor
from .errors import DomainError
from .geometry import CameraIntrinsics, Pose, back_project_field, pixel_grid, transform_field
from .imaging import bilinear_sample, forward_splat_weights

# Fraction of a full unit deposit a target pixel must collect under
# forward splatting of the source->target flow to count as visible.  A
# plain "> 0" test would pass sliver weights from distant bilinear tails.
VISIBILITY_TAU = 0.25


@dataclass(frozen=True)
class MotionDecomposition:
    """Holistic parse of a frame pair's 3D motion.

    m_b: (H, W, 3) rigid background motion, target camera frame.
    m_d: (H, W, 3) dynamic motion on visible pixels, source camera frame.
    v:   (H, W) visibility indicator in {0, 1}; m_d is exactly 0 where v = 0.
    s:   (H, W) soft moving-object mask, s = 1 - exp(-alpha_s * |m_d|), in [0, 1).
    """

    m_b: torch.Tensor
    m_d: torch.Tensor
    v: torch.Tensor
    s: torch.Tensor


def _require_positive_depth(depth: torch.Tensor, name: str) -> None:
    if not torch.all(depth > 0):
        raise DomainError(f"{name} must be strictly positive everywhere")


def visibility_mask(flow_s_to_t) -> torch.Tensor:
    """Occlusion-aware visibility of target pixels, from the reverse flow.

    Every source pixel deposits a unit of mass at its flow destination on
    the target grid; target pixels whose accumulated weight exceeds
    VISIBILITY_TAU are marked visible (1.0), the rest occluded (0.0).
    Deposits falling outside the grid are dropped, so uniform flow pushing
    everything off-image yields an all-zero mask.
    """
    weights = forward_splat_weights(as_tensor(flow_s_to_t))
    return (weights > VISIBILITY_TAU).to(DTYPE)


def rigid_motion_map(depth_t, pose: Pose, intrinsics: CameraIntrinsics) -> torch.Tensor:
    """Scene-flow field induced by camera motion alone.

    Back-projects the target depth map and returns T(phi) - phi per pixel,
    i.e. (R - I) phi + t, a (H, W, 3) field in the target camera frame.
    Identity pose gives the zero field; a pure translation gives a field
    constant and equal to that translation.
    """
    depth = as_tensor(depth_t)
    _require_positive_depth(depth, "depth_t")
    phi = back_project_field(depth, intrinsics)
    rot = as_tensor(pose.rotation)
    t = as_tensor(pose.translation)
    # grouped so the R = I case cancels exactly and returns t bitwise
    return (phi @ rot.T - phi) + t


def dynamic_motion_map(
    depth_t,
    depth_s,
    flow_t_to_s,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    visibility,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Residual 3D motion not explained by the rigid transform.

    For each visible target pixel, compares the flow-tracked 3D point
    (source depth sampled bilinearly at p + flow, then back-projected)
    against the rigidly transformed point T(phi(p)); both live in the
    source camera frame, so their difference isolates object motion.

    Returns (m_d, valid) where m_d is (H, W, 3), zero wherever visibility
    is 0 or the flow target leaves the image, and valid is the (H, W)
    boolean in-image mask of p + flow (invalid pixels must be excluded
    from any downstream aggregation).
    """
    depth_t = as_tensor(depth_t)
    depth_s = as_tensor(depth_s)
    _require_positive_depth(depth_t, "depth_t")
    _require_positive_depth(depth_s, "depth_s")
    flow = as_tensor(flow_t_to_s)

    h, w = depth_t.shape
    coords = pixel_grid(h, w) + flow  # (H,W,2) sampling points on the source grid
    sampled_depth, valid = bilinear_sample(depth_s, coords)

    ray = torch.stack(
        [
            (coords[..., 0] - intrinsics.cx) / intrinsics.fx,
            (coords[..., 1] - intrinsics.cy) / intrinsics.fy,
            torch.ones_like(sampled_depth),
        ],
        dim=-1,
    )
    tracked = sampled_depth.unsqueeze(-1) * ray
    rigid = transform_field(
        back_project_field(depth_t, intrinsics),
        as_tensor(pose.rotation),
        as_tensor(pose.translation),
    )

    v = as_tensor(visibility)
    m_d = v.unsqueeze(-1) * (tracked - rigid)
    m_d = torch.where(valid.unsqueeze(-1), m_d, torch.zeros_like(m_d))
    return m_d, valid


def moving_mask(m_d, alpha_s: float) -> torch.Tensor:
    """Soft moving-object mask 1 - exp(-alpha_s * |m_d|), in [0, 1).

    alpha_s = 0 returns the zero field regardless of motion; negative
    values are rejected.  Strictly increasing in the motion norm and
    never reaches 1.
    """
    if alpha_s < 0:
        raise DomainError("alpha_s must be non-negative")
    norm = torch.linalg.vector_norm(as_tensor(m_d), dim=-1)
    return 1.0 - torch.exp(-alpha_s * norm)


def binary_segmentation(m_d, threshold: float = 3.0) -> torch.Tensor:
    """Hard moving-object mask: |m_d| strictly above threshold (scene units)."""
    norm = torch.linalg.vector_norm(as_tensor(m_d), dim=-1)
    return norm > threshold


def parse(
    depth_t,
    depth_s,
    flow_t_to_s,
    flow_s_to_t,
    pose: Pose,
    intrinsics: CameraIntrinsics,
    alpha_s: float,
) -> MotionDecomposition:
    """Full decomposition of a frame pair's motion.

    Composes visibility splatting, the rigid map, the dynamic residual and
    the soft mask.  Pixels whose flow target leaves the source image are
    folded into v = 0 so the "m_d = 0 exactly where v = 0" invariant holds
    for a single mask.  All outputs are detached: masks act as constants
    inside any objective built on top of them.
    """
    v = visibility_mask(flow_s_to_t)
    m_d, valid = dynamic_motion_map(depth_t, depth_s, flow_t_to_s, pose, intrinsics, v)
    v = torch.where(valid, v, torch.zeros_like(v))
    m_b = rigid_motion_map(depth_t, pose, intrinsics)
    s = moving_mask(m_d, alpha_s)
    return MotionDecomposition(
        m_b=m_b.detach(),
        m_d=m_d.detach(),
        v=v.detach(),
        s=s.detach(),
    )
