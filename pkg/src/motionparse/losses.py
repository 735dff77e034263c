"""Unsupervised objectives over depth, camera motion and flow.

Five families, all pure functions of their field inputs:

* structural matching: masked photometric + structural error between the
  target image and a view synthesized from the source,
* edge-aware smoothness: curvature of a field, discounted where the
  guiding image itself is curved,
* rigid-region consistency: depth and 2D-coordinate agreement between the
  flow-tracked and rigidly reprojected correspondences,
* occluded-region flow consistency: flow pinned to rigid geometry where
  no photometric evidence exists,
* multi-scale totals (monocular and stereo) combining the above over a
  fixed 4-level pyramid with per-term weights.

Every term is normalized by its active-pixel count (+ a fixed epsilon),
so weight magnitudes transfer across resolutions and scenes.  Visibility
and soft-mask inputs are treated as constants: they gate the losses but
never receive gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, fields

import torch

from ._tensor import DTYPE, as_tensor
from .errors import DomainError
from .geometry import CameraIntrinsics, Pose, pixel_grid, rigid_reproject_field
from .imaging import (
    PYRAMID_LEVELS,
    bilinear_sample,
    build_flow_pyramid,
    build_pyramid,
    laplacian,
    ssim_map,
)

# Structural-vs-photometric mix in the matching cost.
DEFAULT_BETA = 0.85
# Edge-awareness strength in the smoothness discount.
EDGE_WEIGHT_ALPHA = 10.0
# Added to every active-pixel normalizer.
NORMALIZATION_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative per-term weights; zero disables a term."""

    lambda_dvs: float = 0.0
    lambda_fvs: float = 0.0
    lambda_ds: float = 0.0
    lambda_fs: float = 0.0
    lambda_dc: float = 0.0
    lambda_mc: float = 0.0
    lambda_fc: float = 0.0
    lambda_cvs: float = 0.0
    lambda_cs: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"{f.name} must be nonnegative")


# term name -> (weight attribute, whether the per-level 2^l factor applies)
_TERM_RULES = {
    "dvs": ("lambda_dvs", False),
    "fvs": ("lambda_fvs", False),
    "ds": ("lambda_ds", True),
    "fs": ("lambda_fs", True),
    "dc": ("lambda_dc", False),
    "mc": ("lambda_mc", False),
    "fc": ("lambda_fc", False),
    "cvs": ("lambda_cvs", False),
    "cs": ("lambda_cs", True),
}
_TERM_ORDER = ("dvs", "fvs", "ds", "fs", "dc", "mc", "fc", "cvs", "cs")


def _weighted_total(terms: dict, weights: LossWeights) -> torch.Tensor:
    total = torch.zeros((), dtype=DTYPE)
    for name in _TERM_ORDER:
        if name not in terms:
            continue
        attr, level_weighted = _TERM_RULES[name]
        lam = getattr(weights, attr)
        for level, value in enumerate(terms[name]):
            scale = float(2**level) if level_weighted else 1.0
            total = total + lam * scale * value
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term, per-level values with their normalization counts.

    `terms` maps a term name to its unweighted per-level scalars;
    `counts` holds the active-pixel normalizer of each entry.  `total`
    is the weighted sum, recomputable via `recompute_total`
    (smoothness-family terms pick up a 2^level factor).
    """

    terms: dict
    counts: dict
    weights: LossWeights
    total: torch.Tensor

    def recompute_total(self) -> torch.Tensor:
        return _weighted_total(self.terms, self.weights)


def structural_matching_loss(image_t, synthesized, mask, beta: float = DEFAULT_BETA) -> torch.Tensor:
    """Masked mix of absolute photometric error and structural dissimilarity.

    Per pixel: (1 - beta)|I - I_hat| + beta (1 - SSIM)/2, channel-averaged
    for multi-channel images, then mask-weighted and normalized by the
    mask sum.  An effectively empty mask yields 0 and a RuntimeWarning.
    """
    if not 0.0 <= beta <= 1.0:
        raise DomainError("beta must lie in [0, 1]")
    a = as_tensor(image_t)
    b = as_tensor(synthesized)
    if a.shape != b.shape:
        raise DomainError("image shapes differ")
    m = as_tensor(mask).detach()
    mask_sum = m.sum()
    if float(mask_sum) < NORMALIZATION_EPS:
        warnings.warn("structural matching mask is empty; loss is 0", RuntimeWarning, stacklevel=2)
        return torch.zeros((), dtype=DTYPE)
    per_pixel = (1.0 - beta) * (a - b).abs() + beta * (1.0 - ssim_map(a, b)) / 2.0
    if per_pixel.dim() == 3:
        per_pixel = per_pixel.mean(dim=-1)
    return (m * per_pixel).sum() / (mask_sum + NORMALIZATION_EPS)


def smoothness_loss(field, image, alpha_e: float = EDGE_WEIGHT_ALPHA) -> torch.Tensor:
    """Second-order smoothness of a field, relaxed at image curvature.

    Sums |laplacian| over the field's channels, weights each pixel by
    exp(-alpha_e |laplacian of image|), and normalizes by pixel count.
    Constant and linear-ramp fields cost nothing in the interior.
    """
    f = as_tensor(field)
    img = as_tensor(image)
    if f.shape[:2] != img.shape[:2]:
        raise DomainError("field and image grids differ")
    curvature = laplacian(f).abs()
    if curvature.dim() == 3:
        curvature = curvature.sum(dim=-1)
    image_curvature = laplacian(img).abs()
    if image_curvature.dim() == 3:
        image_curvature = image_curvature.mean(dim=-1)
    edge_weight = torch.exp(-alpha_e * image_curvature)
    return (curvature * edge_weight).sum() / float(f.shape[0] * f.shape[1])


def _consistency_parts(depth_t, depth_s, flow_t_to_s, pose, intrinsics, v, s):
    """Shared core of the rigid-region consistency losses.

    Returns (L_dc, L_mc, weight_sum); the weight is v (1 - s), gated by
    the flow target staying in-image and the rigid point staying in front
    of the camera, and receives no gradient.
    """
    d_t = as_tensor(depth_t)
    d_s = as_tensor(depth_s)
    if not torch.all(d_t > 0) or not torch.all(d_s > 0):
        raise DomainError("depths must be strictly positive everywhere")
    flow = as_tensor(flow_t_to_s)

    h, w = d_t.shape
    p_sf = pixel_grid(h, w) + flow
    sampled, in_bounds = bilinear_sample(d_s, p_sf)
    coords_rigid, proj_depth, valid_proj = rigid_reproject_field(d_t, pose, intrinsics)

    weight = (
        as_tensor(v).detach()
        * (1.0 - as_tensor(s).detach())
        * in_bounds.to(DTYPE)
        * valid_proj.to(DTYPE)
    ).detach()
    weight_sum = weight.sum()
    denom = weight_sum + NORMALIZATION_EPS
    depth_term = (weight * (sampled - proj_depth).abs()).sum() / denom
    coord_term = (weight * (p_sf - coords_rigid).abs().sum(dim=-1)).sum() / denom
    return depth_term, coord_term, weight_sum


def motion_consistency_losses(depth_t, depth_s, flow_t_to_s, pose, intrinsics, v, s):
    """Depth and 2D-coordinate consistency on visible rigid regions.

    L_dc compares the source depth sampled at the flow target against the
    rigidly projected depth; L_mc compares the flow target against the
    rigid reprojection coordinate (L1 over both components).  Both are
    weighted by v (1 - s) and normalized by that weight's sum.
    """
    depth_term, coord_term, _ = _consistency_parts(
        depth_t, depth_s, flow_t_to_s, pose, intrinsics, v, s
    )
    return depth_term, coord_term


def occluded_flow_consistency(flow_t_to_s, depth_t, pose, intrinsics, v) -> torch.Tensor:
    """Rigid-geometry supervision of flow on non-visible pixels.

    L1 distance between the flow target and the rigid reprojection on
    pixels with v = 0 (occlusion/out-of-view), normalized by their count.
    Assumes occluded pixels are overwhelmingly rigid background.
    """
    d_t = as_tensor(depth_t)
    flow = as_tensor(flow_t_to_s)
    h, w = d_t.shape
    p_sf = pixel_grid(h, w) + flow
    coords_rigid, _, valid_proj = rigid_reproject_field(d_t, pose, intrinsics)
    weight = ((1.0 - as_tensor(v).detach()) * valid_proj.to(DTYPE)).detach()
    residual = (p_sf - coords_rigid).abs().sum(dim=-1)
    return (weight * residual).sum() / (weight.sum() + NORMALIZATION_EPS)


@dataclass(frozen=True)
class LossInputs:
    """Pyramid bundle consumed by the multi-scale totals.

    Tuples hold one tensor per level, finest first; intrinsics are
    rescaled per level.  `pose` is a Pose or a (rotation, translation)
    tensor pair (the tensor form keeps autograd connected upstream).
    Stereo fields stay None for monocular input.
    """

    image_t: tuple
    image_s: tuple
    depth_t: tuple
    depth_s: tuple
    flow: tuple
    v: tuple
    s: tuple
    pose: object
    intrinsics: tuple
    image_c: tuple | None = None
    stereo_pose: object | None = None


def build_loss_inputs(
    image_t,
    image_s,
    depth_t,
    depth_s,
    flow_t_to_s,
    pose,
    intrinsics: CameraIntrinsics,
    v,
    s,
    *,
    image_c=None,
    stereo_pose: Pose | None = None,
) -> LossInputs:
    """Pool full-resolution fields into the 4-level pyramid bundle.

    Images, depths and masks are 2x2 average-pooled; flow is pooled and
    halved per level.  Pooled masks become fractional coverage weights,
    which is exactly what the normalized losses expect.  Pyramids of
    depth and flow stay differentiable w.r.t. the full-resolution inputs;
    mask pyramids are detached.
    """
    mask_v = as_tensor(v).detach()
    mask_s = as_tensor(s).detach()
    return LossInputs(
        image_t=build_pyramid(as_tensor(image_t)).levels,
        image_s=build_pyramid(as_tensor(image_s)).levels,
        depth_t=build_pyramid(as_tensor(depth_t)).levels,
        depth_s=build_pyramid(as_tensor(depth_s)).levels,
        flow=build_flow_pyramid(as_tensor(flow_t_to_s)).levels,
        v=build_pyramid(mask_v).levels,
        s=build_pyramid(mask_s).levels,
        pose=pose,
        intrinsics=tuple(intrinsics.scaled(level) for level in range(PYRAMID_LEVELS)),
        image_c=None if image_c is None else build_pyramid(as_tensor(image_c)).levels,
        stereo_pose=stereo_pose,
    )


def _check_levels(inputs: LossInputs) -> None:
    named = {
        "image_t": inputs.image_t,
        "image_s": inputs.image_s,
        "depth_t": inputs.depth_t,
        "depth_s": inputs.depth_s,
        "flow": inputs.flow,
        "v": inputs.v,
        "s": inputs.s,
        "intrinsics": inputs.intrinsics,
    }
    for name, levels in named.items():
        if len(levels) != PYRAMID_LEVELS:
            raise DomainError(f"{name} must have {PYRAMID_LEVELS} pyramid levels")


def total_monocular_loss(
    inputs: LossInputs,
    weights: LossWeights,
    *,
    beta: float = DEFAULT_BETA,
    alpha_e: float = EDGE_WEIGHT_ALPHA,
) -> LossBreakdown:
    """Weighted multi-scale objective for a monocular frame pair.

    Per level: view synthesis driven by depth+pose (mask v (1 - s)) and
    by flow (mask v), edge-aware smoothness of depth and flow (weighted
    2^level), rigid-region depth/coordinate consistency and occluded
    flow consistency.  Term values are stored unweighted in the
    breakdown; the total applies the weights.
    """
    _check_levels(inputs)
    term_values: dict = {name: [] for name in ("dvs", "fvs", "ds", "fs", "dc", "mc", "fc")}
    term_counts: dict = {name: [] for name in term_values}

    for level in range(PYRAMID_LEVELS):
        k = inputs.intrinsics[level]
        img_t = inputs.image_t[level]
        img_s = inputs.image_s[level]
        d_t = inputs.depth_t[level]
        d_s = inputs.depth_s[level]
        flow = inputs.flow[level]
        v = inputs.v[level]
        s = inputs.s[level]
        h, w = d_t.shape

        coords_rigid, _, valid_proj = rigid_reproject_field(d_t, inputs.pose, k)
        synth_rigid, inb_rigid = bilinear_sample(img_s, coords_rigid)
        mask_rigid = (v * (1.0 - s) * inb_rigid.to(DTYPE) * valid_proj.to(DTYPE)).detach()
        term_values["dvs"].append(structural_matching_loss(img_t, synth_rigid, mask_rigid, beta))
        term_counts["dvs"].append(float(mask_rigid.sum()))

        p_sf = pixel_grid(h, w) + flow
        synth_flow, inb_flow = bilinear_sample(img_s, p_sf)
        mask_flow = (v * inb_flow.to(DTYPE)).detach()
        term_values["fvs"].append(structural_matching_loss(img_t, synth_flow, mask_flow, beta))
        term_counts["fvs"].append(float(mask_flow.sum()))

        term_values["ds"].append(smoothness_loss(d_t, img_t, alpha_e))
        term_counts["ds"].append(float(h * w))
        term_values["fs"].append(smoothness_loss(flow, img_t, alpha_e))
        term_counts["fs"].append(float(h * w))

        depth_term, coord_term, weight_sum = _consistency_parts(
            d_t, d_s, flow, inputs.pose, k, v, s
        )
        term_values["dc"].append(depth_term)
        term_counts["dc"].append(float(weight_sum))
        term_values["mc"].append(coord_term)
        term_counts["mc"].append(float(weight_sum))

        term_values["fc"].append(occluded_flow_consistency(flow, d_t, inputs.pose, k, v))
        occ_weight = ((1.0 - v) * valid_proj.to(DTYPE)).sum()
        term_counts["fc"].append(float(occ_weight))

    terms = {name: tuple(values) for name, values in term_values.items()}
    counts = {name: tuple(values) for name, values in term_counts.items()}
    return LossBreakdown(
        terms=terms, counts=counts, weights=weights, total=_weighted_total(terms, weights)
    )


def total_stereo_loss(
    inputs: LossInputs,
    weights: LossWeights,
    *,
    beta: float = DEFAULT_BETA,
    alpha_e: float = EDGE_WEIGHT_ALPHA,
) -> LossBreakdown:
    """Monocular total plus stereo-view depth supervision.

    The stereo image is one more source view with a known, fixed camera
    pose and no motion/flow involvement: per level, a view-synthesis term
    from the stereo image (masked only by in-image/in-front validity,
    simultaneous capture leaves no occlusion estimate to apply) and one
    more edge-aware depth smoothness term (weighted 2^level).
    """
    if inputs.image_c is None or inputs.stereo_pose is None:
        raise DomainError("stereo inputs require image_c and stereo_pose")
    if len(inputs.image_c) != PYRAMID_LEVELS:
        raise DomainError(f"image_c must have {PYRAMID_LEVELS} pyramid levels")
    mono = total_monocular_loss(inputs, weights, beta=beta, alpha_e=alpha_e)

    cvs_values, cvs_counts, cs_values, cs_counts = [], [], [], []
    for level in range(PYRAMID_LEVELS):
        k = inputs.intrinsics[level]
        img_t = inputs.image_t[level]
        img_c = inputs.image_c[level]
        d_t = inputs.depth_t[level]

        coords_c, _, valid_c = rigid_reproject_field(d_t, inputs.stereo_pose, k)
        synth_c, inb_c = bilinear_sample(img_c, coords_c)
        mask_c = (inb_c.to(DTYPE) * valid_c.to(DTYPE)).detach()
        cvs_values.append(structural_matching_loss(img_t, synth_c, mask_c, beta))
        cvs_counts.append(float(mask_c.sum()))

        cs_values.append(smoothness_loss(d_t, img_t, alpha_e))
        cs_counts.append(float(d_t.shape[0] * d_t.shape[1]))

    terms = {**mono.terms, "cvs": tuple(cvs_values), "cs": tuple(cs_values)}
    counts = {**mono.counts, "cvs": tuple(cvs_counts), "cs": tuple(cs_counts)}
    return LossBreakdown(
        terms=terms, counts=counts, weights=weights, total=_weighted_total(terms, weights)
    )
