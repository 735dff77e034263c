"""Motion decomposition tests against the synthetic-scene oracles."""

import numpy as np
import pytest
import torch

from motionparse.errors import DomainError
from motionparse.geometry import CameraIntrinsics, Pose
from motionparse.motion_parser import (
    MotionDecomposition,
    VISIBILITY_TAU,
    binary_segmentation,
    dynamic_motion_map,
    moving_mask,
    parse,
    rigid_motion_map,
    visibility_mask,
)
from motionparse.synthoracle import make_moving_box_scene, make_static_scene, occlusion_oracle


def _small_intrinsics(h=4, w=5):
    return CameraIntrinsics(fx=50.0, fy=55.0, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


def _erode(mask, iterations=2):
    # 4-neighbourhood erosion; roll wrap-around only touches the border
    # rows/cols, which are cleared right after.
    m = mask.copy()
    for _ in range(iterations):
        m = m & np.roll(m, 1, 0) & np.roll(m, -1, 0) & np.roll(m, 1, 1) & np.roll(m, -1, 1)
        m[0, :] = m[-1, :] = False
        m[:, 0] = m[:, -1] = False
    return m


class TestVisibilityMask:
    def test_zero_flow_everything_visible(self):
        v = visibility_mask(np.zeros((6, 7, 2)))
        np.testing.assert_array_equal(v.numpy(), np.ones((6, 7)))

    def test_flow_off_grid_everything_occluded(self):
        flow = np.zeros((5, 8, 2))
        flow[..., 0] = 8.0  # every deposit lands beyond the last column
        v = visibility_mask(flow)
        np.testing.assert_array_equal(v.numpy(), np.zeros((5, 8)))

    def test_partial_deposit_threshold(self):
        # Uniform flow +0.9 px: column 0 only collects the 0.1 left-over
        # from its own pixels (0.1 < tau), columns 1.. collect
        # 0.9 + 0.1 = 1.0 from their two neighbours.
        flow = np.zeros((3, 3, 2))
        flow[..., 0] = 0.9
        v = visibility_mask(flow)
        np.testing.assert_array_equal(v.numpy(), np.tile([0.0, 1.0, 1.0], (3, 1)))

    def test_half_deposit_is_visible(self):
        # +0.5 px: column 0 keeps weight 0.5 > tau = 0.25.
        assert 0.25 == VISIBILITY_TAU
        flow = np.zeros((3, 4, 2))
        flow[..., 0] = 0.5
        v = visibility_mask(flow)
        np.testing.assert_array_equal(v.numpy(), np.ones((3, 4)))

    def test_agrees_with_occlusion_oracle(self):
        # Gentle camera motion keeps the border outflow below the deposit
        # threshold's reach, so only subpixel box-edge ambiguity remains.
        for seed in range(6):
            sc = make_moving_box_scene(seed, translation_frac=0.004, rotation_scale=0.0015)
            v = visibility_mask(sc.flow_bwd).numpy().astype(bool)
            agree = (v == occlusion_oracle(sc)).mean()
            assert agree >= 0.99

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        flow = rng.normal(scale=2.0, size=(16, 16, 2))
        a = visibility_mask(flow)
        b = visibility_mask(flow)
        assert torch.equal(a, b)


class TestRigidMotionMap:
    def test_identity_pose_zero_field(self):
        k = _small_intrinsics()
        m = rigid_motion_map(np.full((4, 5), 2.0), Pose.identity(), k)
        np.testing.assert_array_equal(m.numpy(), np.zeros((4, 5, 3)))

    def test_pure_translation_constant_field(self):
        k = _small_intrinsics()
        t = np.array([0.3, -0.2, 0.75])
        m = rigid_motion_map(np.full((4, 5), 3.0), Pose(np.eye(3), t), k)
        np.testing.assert_allclose(m.numpy() - t, 0.0, atol=0)

    def test_pure_rotation_matches_direct_evaluation(self):
        k = _small_intrinsics()
        c, s = np.cos(0.2), np.sin(0.2)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        depth = np.linspace(2.0, 4.0, 20).reshape(4, 5)
        m = rigid_motion_map(depth, Pose(rot, np.zeros(3)), k).numpy()
        for row in range(4):
            for col in range(5):
                phi = depth[row, col] * np.array(
                    [(col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0]
                )
                np.testing.assert_allclose(m[row, col], (rot - np.eye(3)) @ phi, atol=1e-12)

    def test_nonpositive_depth_rejected(self):
        k = _small_intrinsics()
        depth = np.full((4, 5), 2.0)
        depth[1, 2] = 0.0
        with pytest.raises(DomainError):
            rigid_motion_map(depth, Pose.identity(), k)


class TestDynamicMotionMap:
    def test_static_translation_scene_vanishes(self):
        # Constant source depth makes the bilinear lookup exact, so the
        # flow-tracked and rigidly transformed branches coincide.
        for seed in range(3):
            sc = make_static_scene(seed, rotation_scale=0.0)
            v = visibility_mask(sc.flow_bwd)
            m_d, _ = dynamic_motion_map(
                sc.depth_t, sc.depth_s, sc.flow_fwd, sc.pose, sc.intrinsics, v
            )
            assert float(torch.linalg.vector_norm(m_d, dim=-1).max()) < 1e-9

    def test_static_rotating_scene_below_interp_error(self):
        # With camera rotation the source depth map is curved, so the
        # bilinear sample carries an O(h^2) error; measured 7.5e-8 max.
        for seed in range(3):
            sc = make_static_scene(seed)
            v = visibility_mask(sc.flow_bwd)
            m_d, _ = dynamic_motion_map(
                sc.depth_t, sc.depth_s, sc.flow_fwd, sc.pose, sc.intrinsics, v
            )
            assert float(torch.linalg.vector_norm(m_d, dim=-1).max()) < 1e-6

    def test_zero_visibility_zeroes_field(self):
        sc = make_static_scene(4)
        m_d, _ = dynamic_motion_map(
            sc.depth_t, sc.depth_s, sc.flow_fwd, sc.pose, sc.intrinsics,
            np.zeros_like(sc.depth_t),
        )
        np.testing.assert_array_equal(m_d.numpy(), 0.0)

    def test_flow_leaving_image_marks_invalid(self):
        k = CameraIntrinsics(fx=10.0, fy=10.0, cx=1.0, cy=1.0, width=3, height=3)
        flow = np.full((3, 3, 2), 10.0)
        m_d, valid = dynamic_motion_map(
            np.ones((3, 3)), np.ones((3, 3)), flow, Pose.identity(), k,
            np.ones((3, 3)),
        )
        assert not valid.any()
        np.testing.assert_array_equal(m_d.numpy(), 0.0)

    def test_box_scene_recovers_object_motion(self):
        # On visible box pixels the residual is the object translation
        # rotated into the source frame; its norm equals |delta| exactly.
        for seed in (0, 3):
            sc = make_moving_box_scene(seed)
            v = visibility_mask(sc.flow_bwd)
            m_d, _ = dynamic_motion_map(
                sc.depth_t, sc.depth_s, sc.flow_fwd, sc.pose, sc.intrinsics, v
            )
            md = m_d.numpy()
            expected = sc.pose.rotation @ sc.object_motion
            interior = _erode(sc.moving_mask_t & sc.visibility_t)
            assert interior.sum() > 50
            np.testing.assert_allclose(md[interior] - expected, 0.0, atol=1e-6)
            np.testing.assert_allclose(
                np.linalg.norm(md[interior], axis=-1),
                np.linalg.norm(sc.object_motion),
                atol=1e-6,
            )
            background = _erode(~sc.moving_mask_t & sc.visibility_t)
            assert np.linalg.norm(md[background], axis=-1).max() < 1e-6


class TestMovingMask:
    def test_zero_motion_gives_zero(self):
        s = moving_mask(np.zeros((4, 4, 3)), 0.01)
        np.testing.assert_array_equal(s.numpy(), 0.0)

    def test_zero_alpha_gives_zero_everywhere(self):
        rng = np.random.default_rng(0)
        s = moving_mask(rng.normal(size=(5, 6, 3)) * 10, 0.0)
        np.testing.assert_array_equal(s.numpy(), 0.0)

    def test_reference_value_at_norm_three(self):
        # 1 - exp(-0.01 * 3) = 0.029554466451491845
        m_d = np.zeros((1, 2, 3))
        m_d[0, 0] = [3.0, 0.0, 0.0]
        m_d[0, 1] = [0.0, 0.0, 3.0]
        s = moving_mask(m_d, 0.01)
        np.testing.assert_allclose(s.numpy(), 0.029554466451491845, rtol=1e-15)

    def test_negative_alpha_rejected(self):
        with pytest.raises(DomainError):
            moving_mask(np.zeros((2, 2, 3)), -0.1)

    def test_strictly_increasing_and_below_one(self):
        norms = np.linspace(0.0, 500.0, 64)
        m_d = np.zeros((64, 1, 3))
        m_d[:, 0, 0] = norms
        s = moving_mask(m_d, 0.01).numpy()[:, 0]
        assert (np.diff(s) > 0).all()
        assert (s < 1.0).all()


class TestBinarySegmentation:
    def test_threshold_is_strict(self):
        m_d = np.zeros((1, 3, 3))
        m_d[0, 0, 1] = 2.9
        m_d[0, 1, 1] = 3.0
        m_d[0, 2, 1] = 3.1
        seg = binary_segmentation(m_d)  # default threshold 3
        np.testing.assert_array_equal(seg.numpy(), [[False, False, True]])

    def test_custom_threshold(self):
        m_d = np.zeros((2, 2, 3))
        m_d[0, 0, 0] = 1.5
        seg = binary_segmentation(m_d, threshold=1.0)
        assert seg.numpy().sum() == 1


class TestParse:
    def test_trivial_identity_inputs(self):
        k = _small_intrinsics(6, 6)
        depth = np.full((6, 6), 2.0)
        zero_flow = np.zeros((6, 6, 2))
        out = parse(depth, depth, zero_flow, zero_flow, Pose.identity(), k, 0.01)
        assert isinstance(out, MotionDecomposition)
        np.testing.assert_array_equal(out.m_b.numpy(), 0.0)
        np.testing.assert_array_equal(out.m_d.numpy(), 0.0)
        np.testing.assert_array_equal(out.v.numpy(), 1.0)
        np.testing.assert_array_equal(out.s.numpy(), 0.0)

    def test_static_scene_parse(self):
        for seed in range(3):
            sc = make_static_scene(seed)
            out = parse(
                sc.depth_t, sc.depth_s, sc.flow_fwd, sc.flow_bwd,
                sc.pose, sc.intrinsics, 0.01,
            )
            norm = torch.linalg.vector_norm(out.m_d, dim=-1)
            assert float(norm.max()) < 1e-6
            assert float(out.s.max()) < 1e-6
            agree = (out.v.numpy().astype(bool) == sc.visibility_t).mean()
            assert agree >= 0.99

    def test_box_scene_segmentation_iou(self):
        for seed in range(5):
            sc = make_moving_box_scene(seed)
            out = parse(
                sc.depth_t, sc.depth_s, sc.flow_fwd, sc.flow_bwd,
                sc.pose, sc.intrinsics, 0.01,
            )
            seg = binary_segmentation(out.m_d, 3.0).numpy()
            inter = (seg & sc.moving_mask_t).sum()
            union = (seg | sc.moving_mask_t).sum()
            assert inter / union >= 0.9

    def test_dynamic_motion_zero_exactly_where_invisible(self):
        sc = make_moving_box_scene(1)
        out = parse(
            sc.depth_t, sc.depth_s, sc.flow_fwd, sc.flow_bwd,
            sc.pose, sc.intrinsics, 0.01,
        )
        hidden = out.v.numpy() == 0.0
        assert hidden.any()
        np.testing.assert_array_equal(out.m_d.numpy()[hidden], 0.0)

    def test_scale_covariance(self):
        sc = make_moving_box_scene(2)
        base = parse(
            sc.depth_t, sc.depth_s, sc.flow_fwd, sc.flow_bwd,
            sc.pose, sc.intrinsics, 0.01,
        )
        c = 2.5
        scaled_pose = Pose(sc.pose.rotation, c * sc.pose.translation)
        scaled = parse(
            c * sc.depth_t, c * sc.depth_s, sc.flow_fwd, sc.flow_bwd,
            scaled_pose, sc.intrinsics, 0.01,
        )
        np.testing.assert_allclose(scaled.m_b.numpy(), c * base.m_b.numpy(), atol=1e-9)
        np.testing.assert_allclose(scaled.m_d.numpy(), c * base.m_d.numpy(), atol=1e-9)
        before = binary_segmentation(base.m_d, 3.0).numpy()
        after = binary_segmentation(scaled.m_d, c * 3.0).numpy()
        np.testing.assert_array_equal(before, after)

    def test_outputs_detached(self):
        k = _small_intrinsics(6, 6)
        depth = torch.full((6, 6), 2.0, dtype=torch.float64, requires_grad=True)
        flow = torch.zeros((6, 6, 2), dtype=torch.float64, requires_grad=True)
        out = parse(depth, depth, flow, flow, Pose.identity(), k, 0.01)
        for field in (out.m_b, out.m_d, out.v, out.s):
            assert not field.requires_grad
