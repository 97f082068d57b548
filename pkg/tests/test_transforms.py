import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collage_forge.transforms import (
    DegenerateMatrixError,
    HumanPose,
    build_matrix,
    from_human,
    invert_matrix,
    matrix_with_raw_grads,
    squash,
    squash_jacobian,
    to_human,
)

finite_raw = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


class TestSquash:
    def test_zero_raw_is_identity_pose(self):
        assert squash(np.zeros(6), 1.0) == (0.0, 0.0, 0.0, 1.0, 1.0, 0.0)

    def test_translation_closed_form(self):
        raw = np.zeros(6)
        raw[0] = math.atanh(0.5)
        tx, *_ = squash(raw, 1.0)
        assert tx == pytest.approx(0.5, abs=1e-12)

    def test_scale_saturates_at_twice_base(self):
        raw = np.zeros(6)
        raw[3] = 50.0
        _, _, _, s, _, _ = squash(raw, 1.0)
        assert s <= 2.0
        assert s == pytest.approx(2.0, abs=1e-9)
        raw[3] = -50.0
        assert squash(raw, 1.0)[3] == pytest.approx(0.5, abs=1e-9)

    def test_base_scale_scales_only_scale(self):
        raw = np.zeros(6)
        eff = squash(raw, 3.0)
        assert eff[3] == 3.0
        assert eff[4] == 1.0

    def test_rotation_unbounded(self):
        raw = np.zeros(6)
        raw[2] = 12.0
        assert squash(raw, 1.0)[2] == 12.0

    @given(a=finite_raw, b=finite_raw)
    def test_componentwise_monotonicity(self, a, b):
        if abs(a - b) < 1e-6:  # below float resolution of exp(tanh(.))
            return
        lo, hi = min(a, b), max(a, b)
        for idx in range(6):
            raw_lo, raw_hi = np.zeros(6), np.zeros(6)
            raw_lo[idx], raw_hi[idx] = lo, hi
            assert squash(raw_lo, 1.0)[idx] < squash(raw_hi, 1.0)[idx]

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        step = 1e-5
        for _ in range(20):
            raw = rng.normal(0.0, 1.0, size=6)
            jac = squash_jacobian(raw, 1.7)
            for idx in range(6):
                plus, minus = raw.copy(), raw.copy()
                plus[idx] += step
                minus[idx] -= step
                fd = (squash(plus, 1.7)[idx] - squash(minus, 1.7)[idx]) / (2 * step)
                assert jac[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestBuildMatrix:
    def test_identity(self):
        assert np.allclose(build_matrix((0, 0, 0, 1, 1, 0)), np.eye(3))

    def test_pure_translation(self):
        m = build_matrix((0.5, 0.0, 0.0, 1.0, 1.0, 0.0))
        expected = np.eye(3)
        expected[0, 2] = 0.5
        assert np.allclose(m, expected)

    def test_quarter_turn_rotation_block(self):
        m = build_matrix((0.0, 0.0, math.pi / 2, 1.0, 1.0, 0.0))
        assert np.allclose(m[:2, :2], [[0.0, -1.0], [1.0, 0.0]], atol=1e-12)

    def test_squeeze_is_anisotropic_area_preserving(self):
        m = build_matrix((0.0, 0.0, 0.0, 1.0, 2.0, 0.0))
        assert m[0, 0] == pytest.approx(2.0)
        assert m[1, 1] == pytest.approx(0.5)
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        assert det == pytest.approx(1.0)

    def test_shear_adds_y_into_x(self):
        m = build_matrix((0.0, 0.0, 0.0, 1.0, 1.0, 0.7))
        p = m @ np.array([1.0, 2.0, 1.0])
        assert p[0] == pytest.approx(1.0 + 0.7 * 2.0)
        assert p[1] == pytest.approx(2.0)

    def test_bottom_row_always_affine(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            m = build_matrix(squash(rng.normal(0, 2, size=6), 1.3))
            assert np.array_equal(m[2], [0.0, 0.0, 1.0])


class TestInvertMatrix:
    def test_identity(self):
        assert np.allclose(invert_matrix(np.eye(3)), np.eye(3))

    def test_pure_translation_negates(self):
        m = build_matrix((0.5, 0.25, 0.0, 1.0, 1.0, 0.0))
        inv = invert_matrix(m)
        assert inv[0, 2] == pytest.approx(-0.5)
        assert inv[1, 2] == pytest.approx(-0.25)

    @given(raws=st.lists(finite_raw, min_size=6, max_size=6))
    @settings(max_examples=200)
    def test_inverse_property(self, raws):
        m = build_matrix(squash(np.array(raws), 1.0))
        assert np.allclose(m @ invert_matrix(m), np.eye(3), atol=1e-10)

    def test_degenerate_raises(self):
        singular = np.array([[1.0, 2.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(DegenerateMatrixError):
            invert_matrix(singular)


class TestMatrixGradients:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        step = 1e-5
        for _ in range(25):
            raw = rng.normal(0.0, 1.0, size=6)
            base_scale = float(rng.uniform(0.5, 2.0))
            _, dm = matrix_with_raw_grads(raw, base_scale)
            for k in range(6):
                plus, minus = raw.copy(), raw.copy()
                plus[k] += step
                minus[k] -= step
                fd = (
                    build_matrix(squash(plus, base_scale))
                    - build_matrix(squash(minus, base_scale))
                ) / (2 * step)
                err = np.abs(dm[k] - fd)
                scale = np.maximum(np.abs(dm[k]), np.abs(fd))
                assert np.all((err <= 1e-7) | (err <= 1e-4 * scale))


class TestHumanPose:
    def test_zero_raw_centers_on_canvas(self):
        pose = to_human(np.zeros(6), np.zeros(3), 0.0, 224, 224)
        assert pose.x == 112.0
        assert pose.y == 112.0
        assert pose.rotation == 0.0
        assert pose.scale == 1.0
        assert pose.squeeze == 1.0
        assert pose.shear == 0.0
        assert pose.rgb == (0.5, 0.5, 0.5)
        assert pose.order == 0.5

    def test_x_pixel_maps_to_atanh_raw(self):
        update = from_human({"x": 168.0}, 224, 224)
        assert update.affine[0] == pytest.approx(math.atanh(0.5), abs=1e-12)
        assert not update.clamped

    def test_scale_out_of_range_clamps(self):
        update = from_human({"scale": 5.0}, 224, 224, base_scale=1.0)
        assert update.clamped
        raw = np.zeros(6)
        raw[3] = update.affine[3]
        assert squash(raw, 1.0)[3] < 2.0

    def test_round_trip_non_saturated(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            affine = rng.normal(0.0, 0.8, size=6)
            color = rng.normal(0.0, 0.8, size=3)
            order = float(rng.normal(0.0, 0.8))
            pose = to_human(affine, color, order, 224, 160, base_scale=1.2)
            update = from_human(
                {
                    "x": pose.x,
                    "y": pose.y,
                    "rotation": pose.rotation,
                    "scale": pose.scale,
                    "squeeze": pose.squeeze,
                    "shear": pose.shear,
                    "rgb": pose.rgb,
                    "order": pose.order,
                },
                224,
                160,
                base_scale=1.2,
            )
            assert not update.clamped
            for idx in range(6):
                assert update.affine[idx] == pytest.approx(affine[idx], abs=1e-9)
            assert np.allclose(update.color_rgb, color, atol=1e-9)
            assert update.order_raw == pytest.approx(order, abs=1e-9)

    def test_partial_update_only_touches_given_fields(self):
        update = from_human({"rotation": 90.0}, 64, 64)
        assert set(update.affine) == {2}
        assert update.affine[2] == pytest.approx(math.pi / 2)
        assert update.color_rgb is None
        assert update.order_raw is None

    def test_non_square_canvas_uses_longer_side(self):
        # 200x100 canvas: normalized unit = 100 px along both axes
        pose = to_human(np.array([math.atanh(0.5), 0, 0, 0, 0, 0.0]), np.zeros(3), 0.0, 200, 100)
        assert pose.x == pytest.approx(100 + 0.5 * 100)
        update = from_human({"y": 75.0}, 200, 100)
        assert update.affine[1] == pytest.approx(math.atanh(0.25), abs=1e-12)

    def test_zero_scale_clamps_to_minimum(self):
        update = from_human({"scale": 0.0}, 64, 64)
        assert update.clamped
        raw = np.zeros(6)
        raw[3] = update.affine[3]
        assert squash(raw, 1.0)[3] > 0.5 - 1e-3

    def test_rgb_needs_three_components(self):
        with pytest.raises(ValueError):
            from_human({"rgb": (0.5, 0.5)}, 64, 64)

    def test_order_clamps_to_open_interval(self):
        update = from_human({"order": 1.0}, 64, 64)
        assert update.clamped
        assert math.isfinite(update.order_raw)


class TestColorOrderingInvariance:
    @given(
        raws=st.lists(finite_raw, min_size=3, max_size=3),
        factor=st.floats(min_value=0.1, max_value=5.0),
    )
    def test_positive_scaling_preserves_channel_order(self, raws, factor):
        def mults(values):
            return [1.0 / (1.0 + math.exp(-v)) for v in values]

        before = mults(raws)
        after = mults([factor * v for v in raws])
        assert np.argsort(before).tolist() == np.argsort(after).tolist()


def test_human_pose_is_value_type():
    pose = HumanPose(1, 2, 3, 4, 5, 6, (0.1, 0.2, 0.3), 0.4)
    with pytest.raises(AttributeError):
        pose.x = 10
