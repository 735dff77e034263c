"""Synthetic scenes with exact ground truth, plus brute-force oracles.

A scene is a fronto-parallel background plane, optionally with a nearer
fronto-parallel square patch ("box") that translates rigidly between the
two time instants. Surfaces carry smooth band-limited procedural textures
(sums of a few sinusoids in material coordinates), so any camera can
render any surface point exactly and the analytic flow / occlusion /
depth fields below are correct to machine precision, not to a sampling
tolerance.

Image construction is chosen so the photometric identity holds exactly:
the source view is rendered from the continuous textures, and the target
view is defined as the bilinear resample of that source image along the
ground-truth correspondence wherever the scene says the pixel is visible
(occluded or out-of-view pixels fall back to the exact render). Bilinear
warping the source by the true correspondence therefore reproduces the
target bit-for-bit on visible pixels, which is what makes the true state
an exact optimum of the photometric objective.

Everything here is plain numpy and deliberately independent of the
package's differentiable code paths: occlusion comes from per-pixel ray
casting with explicit z-ordering, flows from closed-form projection of
material points, and numeric_gradient from central differences.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._tensor import to_numpy
from .errors import DomainError
from .geometry import CameraIntrinsics, Pose, pose_from_twist

_ZBUFFER_TOL = 1e-9


@dataclass(frozen=True)
class TextureModel:
    """Band-limited procedural texture: offset + sum of plane waves.

    When `flat_before_x` is set, the wave part is windowed out left of
    that material-x coordinate and fades in over a smoothstep ramp of
    width `flat_ramp`, leaving a strip of exactly constant albedo. Such
    a strip makes a stereo pair fully reconstructable even where the
    second camera's frame cuts the scene off.
    """

    offset: float
    amps: np.ndarray  # (K,)
    freqs: np.ndarray  # (K, 2) angular frequencies over material (x, y)
    phases: np.ndarray  # (K,)
    flat_before_x: float | None = None
    flat_ramp: float = 1.0

    def sample(self, x, y):
        args = (
            self.freqs[:, 0][:, None] * np.ravel(x)[None, :]
            + self.freqs[:, 1][:, None] * np.ravel(y)[None, :]
            + self.phases[:, None]
        )
        vals = (self.amps[:, None] * np.sin(args)).sum(axis=0)
        if self.flat_before_x is not None:
            s = np.clip((np.ravel(x) - self.flat_before_x) / self.flat_ramp, 0.0, 1.0)
            vals = vals * (s * s * (3.0 - 2.0 * s))
        return (self.offset + vals).reshape(np.shape(x))


@dataclass(frozen=True)
class BoxModel:
    """Fronto-parallel square patch translating by `delta` between frames."""

    center: np.ndarray  # (2,) material-plane center at the first instant
    half_size: np.ndarray  # (2,)
    depth: float
    delta: np.ndarray  # (3,) world translation between the instants
    texture: TextureModel


@dataclass(frozen=True)
class SceneModel:
    """Parametric description every oracle re-derives its answers from."""

    intrinsics: CameraIntrinsics
    pose: Pose  # target frame -> source frame
    bg_depth: float
    bg_texture: TextureModel
    box: BoxModel | None

    def __post_init__(self):
        if self.box is not None:
            zs = self.box.depth + min(0.0, self.box.delta[2])
            if not (0 < self.box.depth < self.bg_depth and 0 < self.box.depth + self.box.delta[2] < self.bg_depth):
                raise DomainError("box must stay strictly between the camera and the background")
            if zs <= 0:
                raise DomainError("box moves behind the camera")


@dataclass(frozen=True)
class SyntheticScene:
    """A rendered scene pair with complete ground truth (all numpy)."""

    model: SceneModel
    image_t: np.ndarray  # (H, W) in [0, 1]
    image_s: np.ndarray
    depth_t: np.ndarray  # (H, W)
    depth_s: np.ndarray
    flow_fwd: np.ndarray  # (H, W, 2) target -> source correspondence offsets
    flow_bwd: np.ndarray  # (H, W, 2) source -> target
    visibility_t: np.ndarray  # (H, W) bool; target pixel visible in source
    visibility_s: np.ndarray  # (H, W) bool; source pixel visible in target
    moving_mask_t: np.ndarray  # (H, W) bool
    moving_mask_s: np.ndarray
    object_motion: np.ndarray  # (3,) box translation (zeros when static)
    object_motion_map: np.ndarray  # (H, W, 3) per-pixel world motion at time t
    stereo_image: np.ndarray | None = None
    stereo_pose: Pose | None = None
    stereo_baseline: float | None = None

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return self.model.intrinsics

    @property
    def pose(self) -> Pose:
        return self.model.pose


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def _pixel_dirs(intrinsics: CameraIntrinsics) -> np.ndarray:
    """(H, W, 3) unit-z ray directions through every pixel center."""
    u = np.arange(intrinsics.width, dtype=np.float64)
    v = np.arange(intrinsics.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    return np.stack(
        [(uu - intrinsics.cx) / intrinsics.fx, (vv - intrinsics.cy) / intrinsics.fy, np.ones_like(uu)],
        axis=-1,
    )


def _cast(model: SceneModel, cam_pose: Pose, dirs: np.ndarray, second_instant: bool):
    """Intersect camera rays with the scene at one time instant.

    dirs are unit-z directions in the camera frame; cam_pose maps world
    (target-camera) coordinates into that camera frame. Returns the hit
    depth along the camera z axis, the box-hit mask, and the material
    point of each hit expressed in first-instant world coordinates.
    """
    r, t = cam_pose.rotation, cam_pose.translation
    a = dirs @ r  # R^T applied to each direction
    b = -(r.T @ t)
    az = a[..., 2]
    if np.any(np.abs(az) < 1e-12):
        raise DomainError("camera ray parallel to scene planes; pose is out of the supported range")

    lam_bg = (model.bg_depth - b[2]) / az
    hit_depth = lam_bg
    box_hit = np.zeros(dirs.shape[:2], dtype=bool)
    material = a * lam_bg[..., None] + b  # bg material = its world point

    if model.box is not None:
        offset = model.box.delta if second_instant else np.zeros(3)
        lam_box = (model.box.depth + offset[2] - b[2]) / az
        pt = a * lam_box[..., None] + b
        m = pt - offset
        inside = (
            (np.abs(m[..., 0] - model.box.center[0]) <= model.box.half_size[0])
            & (np.abs(m[..., 1] - model.box.center[1]) <= model.box.half_size[1])
            & (lam_box > 0)
            & (lam_box < lam_bg)
        )
        box_hit = inside
        hit_depth = np.where(inside, lam_box, lam_bg)
        material = np.where(inside[..., None], m, material)

    return hit_depth, box_hit, material


def _shade(model: SceneModel, box_hit: np.ndarray, material: np.ndarray) -> np.ndarray:
    bg = model.bg_texture.sample(material[..., 0], material[..., 1])
    if model.box is None:
        return bg
    box = model.box.texture.sample(
        material[..., 0] - model.box.center[0], material[..., 1] - model.box.center[1]
    )
    return np.where(box_hit, box, bg)


def _project(points: np.ndarray, intrinsics: CameraIntrinsics):
    """(..., 3) world/camera points -> pixel coords (..., 2) plus depth."""
    z = points[..., 2]
    u = intrinsics.fx * points[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * points[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1), z


def _points_visible(
    model: SceneModel,
    cam_pose: Pose,
    points: np.ndarray,
    second_instant: bool,
    in_image_margin: float = 0.0,
):
    """Z-ordered visibility of world points from a camera at one instant.

    A point is visible when it projects inside the image and no scene
    surface intersects its viewing ray strictly nearer than the point.
    The in-image span is [-margin, extent - 1 + margin]: margin 0 keeps
    the interpolation-valid span of pixel centers (what warp identities
    need), margin 0.5 extends to the pixel-cell footprint a rasterizer
    would fill. Returns (visible (H, W) bool, pixel coords (H, W, 2)).
    """
    k = model.intrinsics
    cam_pts = points @ cam_pose.rotation.T + cam_pose.translation
    z = cam_pts[..., 2]
    front = z > _ZBUFFER_TOL
    z_safe = np.where(front, z, 1.0)
    dirs = cam_pts / z_safe[..., None]
    first_hit, _, _ = _cast(model, cam_pose, dirs, second_instant)
    coords, _ = _project(np.where(front[..., None], cam_pts, [0.0, 0.0, 1.0]), k)
    in_img = (
        (coords[..., 0] >= -in_image_margin)
        & (coords[..., 0] <= k.width - 1 + in_image_margin)
        & (coords[..., 1] >= -in_image_margin)
        & (coords[..., 1] <= k.height - 1 + in_image_margin)
    )
    unblocked = z <= first_hit + _ZBUFFER_TOL
    return front & in_img & unblocked, coords


# ---------------------------------------------------------------------------
# Scene assembly
# ---------------------------------------------------------------------------


def _scene_from_model(model: SceneModel) -> SyntheticScene:
    from .imaging import bilinear_sample  # local import: imaging pulls in torch

    k = model.intrinsics
    dirs = _pixel_dirs(k)
    identity = Pose.identity()

    depth_t, box_t, mat_t = _cast(model, identity, dirs, second_instant=False)
    depth_s, box_s, mat_s = _cast(model, model.pose, dirs, second_instant=True)
    image_t_exact = _shade(model, box_t, mat_t)
    image_s = _shade(model, box_s, mat_s)

    delta = model.box.delta if model.box is not None else np.zeros(3)
    motion_map = np.where(box_t[..., None], delta, 0.0)

    # Forward correspondence: where each target material point sits at the
    # second instant, seen from the source camera.
    pts_second = mat_t + motion_map
    vis_t, coords_fwd = _points_visible(model, model.pose, pts_second, second_instant=True)
    grid = np.stack(np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64)), axis=-1)
    flow_fwd = coords_fwd - grid

    # Backward correspondence: where each source material point sat at the
    # first instant, seen from the target camera.
    vis_s, coords_bwd = _points_visible(model, identity, mat_s, second_instant=False)
    flow_bwd = coords_bwd - grid

    warped, _ = bilinear_sample(image_s, coords_fwd)
    image_t = np.where(vis_t, to_numpy(warped), image_t_exact)

    return SyntheticScene(
        model=model,
        image_t=image_t,
        image_s=image_s,
        depth_t=depth_t,
        depth_s=depth_s,
        flow_fwd=flow_fwd,
        flow_bwd=flow_bwd,
        visibility_t=vis_t,
        visibility_s=vis_s,
        moving_mask_t=box_t if model.box is not None else np.zeros_like(box_t, dtype=bool),
        moving_mask_s=box_s if model.box is not None else np.zeros_like(box_s, dtype=bool),
        object_motion=delta,
        object_motion_map=motion_map,
    )


def _random_texture(
    rng: np.random.Generator,
    pixel_extent: float,
    waves: int = 6,
    lo: float = 0.15,
    hi: float = 0.85,
    wavelength_px: tuple = (7.0, 25.0),
) -> TextureModel:
    wavelengths = rng.uniform(wavelength_px[0], wavelength_px[1], size=waves) * pixel_extent
    angles = rng.uniform(0.0, 2 * np.pi, size=waves)
    freqs = (2 * np.pi / wavelengths)[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    amps = rng.uniform(0.5, 1.0, size=waves)
    amps *= (hi - lo) / 2.0 / amps.sum()
    return TextureModel(offset=(hi + lo) / 2.0, amps=amps, freqs=freqs, phases=rng.uniform(0.0, 2 * np.pi, size=waves))


def _default_intrinsics(size: int) -> CameraIntrinsics:
    return CameraIntrinsics(fx=float(size), fy=float(size), cx=(size - 1) / 2.0, cy=(size - 1) / 2.0, width=size, height=size)


def _random_pose(rng: np.random.Generator, translation_scale: float, rotation_scale: float) -> Pose:
    twist = np.concatenate(
        [rng.uniform(-1.0, 1.0, size=3) * translation_scale, rng.uniform(-1.0, 1.0, size=3) * rotation_scale]
    )
    return pose_from_twist(twist)


def make_static_scene(
    seed: int,
    *,
    size: int = 64,
    depth_range: tuple = (2.0, 6.0),
    plane_depth: float | None = None,
    pose: Pose | None = None,
    translation_frac: float = 0.03,
    rotation_scale: float = 0.015,
    stereo_disparity: int | None = None,
    flat_left_margin_px: float = 0.0,
) -> SyntheticScene:
    """Textured fronto-parallel plane seen from two nearby viewpoints.

    Camera translation scales with the plane depth (translation_frac of
    it per axis) so pixel displacements stay a few pixels regardless of
    the sampled depth. `plane_depth` and `pose` pin those two draws to
    explicit values instead. With stereo_disparity=n, a rectified third
    view at integer disparity n is attached (constant depth makes it
    exact). flat_left_margin_px > 0 renders the texture as a constant
    over roughly that many leftmost target columns, which lets every
    pyramid level of a stereo pair reconstruct the target exactly.
    """
    rng = np.random.default_rng(seed)
    k = _default_intrinsics(size)
    depth = float(rng.uniform(*depth_range)) if plane_depth is None else float(plane_depth)
    if depth <= 0:
        raise DomainError("plane must sit strictly in front of the camera")
    if pose is None:
        pose = _random_pose(rng, translation_frac * depth, rotation_scale)
    texture = _random_texture(rng, pixel_extent=depth / k.fx)
    if flat_left_margin_px > 0.0:
        texture = replace(
            texture,
            flat_before_x=(flat_left_margin_px - k.cx) * depth / k.fx,
            flat_ramp=8.0 * depth / k.fx,
        )
    model = SceneModel(
        intrinsics=k,
        pose=pose,
        bg_depth=depth,
        bg_texture=texture,
        box=None,
    )
    scene = _scene_from_model(model)
    if stereo_disparity is not None:
        scene = _attach_stereo(scene, int(stereo_disparity))
    return scene


def make_moving_box_scene(
    seed: int,
    *,
    size: int = 64,
    bg_depth_range: tuple = (18.0, 30.0),
    box_depth_frac: tuple = (0.45, 0.65),
    box_side_px: tuple = (24, 34),
    motion_norm: tuple = (3.5, 5.0),
    lateral_frac: float = 0.25,
    translation_frac: float = 0.02,
    rotation_scale: float = 0.008,
    max_displacement_px: float = 7.0,
    bg_texture_range: tuple = (0.15, 0.85),
    box_texture_range: tuple = (0.15, 0.85),
    texture_wavelength_px: tuple = (7.0, 25.0),
    bg_texture_wavelength_px: tuple | None = None,
    box_texture_wavelength_px: tuple | None = None,
    texture_waves: int = 6,
    bg_depth: float | None = None,
    box_depth: float | None = None,
    box_center_px: tuple | None = None,
    box_side: int | None = None,
    pose: Pose | None = None,
    box_delta: np.ndarray | None = None,
) -> SyntheticScene:
    """Background plane plus an independently translating textured patch.

    The patch translation is dominated by its z component (lateral parts
    capped at lateral_frac of the norm) and rescaled if its projected
    pixel displacement would exceed max_displacement_px, keeping the pair
    inside the small-motion regime the losses are built for. The texture
    ranges set each surface's intensity band; disjoint bands give the
    patch a photometric silhouette against the background, the way a
    distinct object photographs against its surroundings. Shorter
    texture wavelengths sharpen the photometric response to small
    misalignments and raise image curvature everywhere, which weakens
    the edge-aware smoothness discount. The scalar
    keyword overrides (bg_depth, box_depth, box_center_px, box_side,
    pose, box_delta) replace the corresponding random draw with an
    explicit value, for scripting exact geometric situations.
    """
    rng = np.random.default_rng(seed)
    k = _default_intrinsics(size)
    bg_depth = float(rng.uniform(*bg_depth_range)) if bg_depth is None else float(bg_depth)
    box_depth = float(bg_depth * rng.uniform(*box_depth_frac)) if box_depth is None else float(box_depth)

    side = rng.integers(box_side_px[0], box_side_px[1] + 1) if box_side is None else int(box_side)
    half_px = side / 2.0
    if box_center_px is None:
        center_px = rng.uniform(-6.0, 6.0, size=2) + np.array([k.cx, k.cy])
    else:
        center_px = np.asarray(box_center_px, dtype=np.float64)
    center = (center_px - np.array([k.cx, k.cy])) * box_depth / np.array([k.fx, k.fy])
    half_size = np.array([half_px, half_px]) * box_depth / k.fx

    def _max_disp(d):
        # projected pixel displacement due to the object alone, worst corner
        worst = 0.0
        for sx in (-1.0, 1.0):
            for sy in (-1.0, 1.0):
                c = np.array([center[0] + sx * half_size[0], center[1] + sy * half_size[1], box_depth])
                m = c + d
                worst = max(
                    worst,
                    abs(k.fx * (m[0] / m[2] - c[0] / c[2])),
                    abs(k.fy * (m[1] / m[2] - c[1] / c[2])),
                )
        return worst

    if box_delta is not None:
        delta = np.asarray(box_delta, dtype=np.float64)
    else:
        norm = float(rng.uniform(*motion_norm))
        lateral = rng.uniform(-1.0, 1.0, size=2)
        lateral *= lateral_frac * norm / max(1.0, np.abs(lateral).max())
        dz_sign = 1.0 if rng.uniform(-1, 1) >= 0 else -1.0
        z_lo, z_hi = 0.3 * bg_depth, 0.85 * bg_depth

        def _assemble(lat, sign):
            dz_budget = norm**2 - float(lat @ lat)
            dz = float(sign * np.sqrt(max(dz_budget, 0.0)))
            dz = float(np.clip(dz, z_lo - box_depth, z_hi - box_depth))
            d = np.array([lat[0], lat[1], dz])
            if _max_disp(d) <= max_displacement_px:
                return d
            # Largest scale that respects the cap; displacement grows
            # monotonically with scale for either z sign, so bisect.
            lo, hi = 0.0, 1.0
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if _max_disp(mid * d) <= max_displacement_px:
                    lo = mid
                else:
                    hi = mid
            return lo * d

        # Motion toward the camera magnifies hard and may get damped below
        # the useful range; retry with a trimmed lateral part and the
        # opposite z sign before falling back to near-pure away-pointing
        # motion, which projects gently, so the norm survives the
        # displacement cap.
        candidates = (
            (lateral, dz_sign),
            (0.6 * lateral, dz_sign),
            (lateral, -dz_sign),
            (0.6 * lateral, -dz_sign),
            (lateral, 1.0),
            (0.25 * lateral, 1.0),
        )
        for lat, sign in candidates:
            delta = _assemble(lat, sign)
            if np.linalg.norm(delta) >= 0.9 * motion_norm[0]:
                break

    if pose is None:
        pose = _random_pose(rng, translation_frac * bg_depth, rotation_scale)
    model = SceneModel(
        intrinsics=k,
        pose=pose,
        bg_depth=bg_depth,
        bg_texture=_random_texture(
            rng, pixel_extent=bg_depth / k.fx, waves=texture_waves,
            lo=bg_texture_range[0], hi=bg_texture_range[1],
            wavelength_px=bg_texture_wavelength_px or texture_wavelength_px),
        box=BoxModel(
            center=center,
            half_size=half_size,
            depth=box_depth,
            delta=delta,
            texture=_random_texture(
                rng, pixel_extent=box_depth / k.fx, waves=texture_waves,
                lo=box_texture_range[0], hi=box_texture_range[1],
                wavelength_px=box_texture_wavelength_px or texture_wavelength_px),
        ),
    )
    return _scene_from_model(model)


def _attach_stereo(scene: SyntheticScene, disparity: int) -> SyntheticScene:
    """Attach a rectified constant-integer-disparity stereo view.

    Only constant-depth scenes qualify; the stereo image is then the
    target image shifted by the disparity (exact), with the unread right
    strip rendered from the textures.
    """
    model = scene.model
    if model.box is not None or disparity < 1:
        raise DomainError("stereo views require a static constant-depth scene and disparity >= 1")
    k = model.intrinsics
    baseline = disparity * model.bg_depth / k.fx
    stereo_pose = Pose(np.eye(3), np.array([-baseline, 0.0, 0.0]))

    dirs = _pixel_dirs(k)
    _, box_c, mat_c = _cast(model, stereo_pose, dirs, second_instant=False)
    exact = _shade(model, box_c, mat_c)
    stereo = exact.copy()
    stereo[:, : k.width - disparity] = scene.image_t[:, disparity:]
    return replace(scene, stereo_image=stereo, stereo_pose=stereo_pose, stereo_baseline=baseline)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def occlusion_oracle(scene: SyntheticScene) -> np.ndarray:
    """Visibility of each target pixel in the source view by ray casting.

    Re-derives the answer from the parametric scene: take each target
    pixel's material point, move it to the second instant, and test its
    source viewing ray for a strictly nearer scene intersection (plus the
    in-image condition). Exhaustive per-pixel z-ordering, no splatting.
    The in-image test uses the pixel-cell footprint (half a pixel beyond
    the border centers), matching what a rasterizing renderer of the
    source view would fill.
    """
    model = scene.model
    dirs = _pixel_dirs(model.intrinsics)
    _, box_t, mat_t = _cast(model, Pose.identity(), dirs, second_instant=False)
    delta = model.box.delta if model.box is not None else np.zeros(3)
    pts = mat_t + np.where(box_t[..., None], delta, 0.0)
    visible, _ = _points_visible(
        model, model.pose, pts, second_instant=True, in_image_margin=0.5
    )
    return visible


def analytic_flow_oracle(scene: SyntheticScene) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (forward, backward) correspondence fields.

    Forward: project each target material point's second-instant position
    into the source camera. Backward: project each source material
    point's first-instant position into the target camera. Both are exact
    projective constructions straight from the scene parameters.
    """
    model = scene.model
    k = model.intrinsics
    dirs = _pixel_dirs(k)
    grid = np.stack(np.meshgrid(np.arange(k.width, dtype=np.float64), np.arange(k.height, dtype=np.float64)), axis=-1)

    _, box_t, mat_t = _cast(model, Pose.identity(), dirs, second_instant=False)
    delta = model.box.delta if model.box is not None else np.zeros(3)
    pts = mat_t + np.where(box_t[..., None], delta, 0.0)
    coords_fwd, _ = _project(pts @ model.pose.rotation.T + model.pose.translation, k)

    _, _, mat_s = _cast(model, model.pose, dirs, second_instant=True)
    coords_bwd, _ = _project(mat_s, k)

    return coords_fwd - grid, coords_bwd - grid


def numeric_gradient(objective, x0: np.ndarray, *, indices=None, eps: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar objective over a flat vector.

    objective: callable taking a 1-D numpy vector, returning a float.
    indices: coordinate subset to probe (default: all of them).
    Purely numeric by construction; serves as the independent cross-check
    for any analytic or autograd gradient in the package.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1:
        raise DomainError(f"numeric_gradient expects a flat vector, got shape {x0.shape}")
    probe = range(x0.size) if indices is None else list(indices)
    out = np.empty(len(probe), dtype=np.float64)
    for row, i in enumerate(probe):
        xp = x0.copy()
        xp[i] += eps
        fp = float(objective(xp))
        xm = x0.copy()
        xm[i] -= eps
        fm = float(objective(xm))
        out[row] = (fp - fm) / (2.0 * eps)
    return out
