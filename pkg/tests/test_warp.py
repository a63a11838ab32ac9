import math

import numpy as np
import pytest

from posepaste.errors import DomainError
from posepaste.warp import (
    AugParams,
    affine_from_params,
    grad_check,
    map_point,
    warp_backward,
    warp_patch,
)


def hand_matrix(s, r, tx, ty):
    # Independent construction of the placement matrix, written out longhand.
    return np.array(
        [
            [s * math.cos(r), s * math.sin(r), tx],
            [-s * math.sin(r), s * math.cos(r), ty],
            [0.0, 0.0, 1.0],
        ]
    )


class TestAffineFromParams:
    def test_identity_is_exact(self):
        H = affine_from_params(AugParams(1, 0, 0, 0))
        assert (H == np.eye(3)).all()

    def test_pure_scale_translation(self):
        H = affine_from_params(AugParams(2, 0, 0.3, -0.4))
        assert (H == np.array([[2, 0, 0.3], [0, 2, -0.4], [0, 0, 1]])).all()

    def test_quarter_turn(self):
        H = affine_from_params(AugParams(1, math.pi / 2, 0, 0))
        assert np.allclose(H, [[0, 1, 0], [-1, 0, 0], [0, 0, 1]], atol=1e-15)

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(DomainError):
            AugParams(0.0, 0, 0, 0)
        with pytest.raises(DomainError):
            AugParams(-1.0, 0, 0, 0)

    def test_determinant_is_scale_squared(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            s = float(rng.uniform(0.05, 5.0))
            p = AugParams(s, float(rng.uniform(-6, 6)),
                          float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))
            H = affine_from_params(p)
            det = H[0, 0] * H[1, 1] - H[0, 1] * H[1, 0]
            assert abs(det - s * s) <= 1e-12 * s * s
            assert (H[2] == np.array([0.0, 0.0, 1.0])).all()

    def test_transposed_convention(self):
        H = affine_from_params(AugParams(1, math.pi / 2, 0, 0), convention="transposed")
        assert np.allclose(H, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-15)


class TestMapPoint:
    def test_identity(self):
        H = affine_from_params(AugParams(1, 0, 0, 0))
        assert map_point(H, (0.5, -0.5)) == (0.5, -0.5)

    def test_pure_translation(self):
        tx, ty = 0.37, -0.21
        H = affine_from_params(AugParams(1, 0, tx, ty))
        x, y = 0.11, 0.53
        assert map_point(H, (x, y)) == (x + tx, y + ty)

    def test_rotate_scale_hand_product(self):
        s, r = 2.0, math.pi / 2
        H = affine_from_params(AugParams(s, r, 0, 0))
        x, y = 0.1, 0.2
        # Hand multiplication of the placement matrix against (x, y, 1).
        exp_x = s * math.cos(r) * x + s * math.sin(r) * y + 0.0
        exp_y = -s * math.sin(r) * x + s * math.cos(r) * y + 0.0
        got = map_point(H, (x, y))
        assert got == (exp_x, exp_y)
        assert got == pytest.approx((0.4, -0.2), abs=1e-15)

    def test_composition_order_scale_rotate_translate(self):
        # The matrix acts as translate(rotate(scale(pt))) with the row
        # convention used by affine_from_params.
        rng = np.random.default_rng(11)
        for _ in range(200):
            p = AugParams(float(rng.uniform(0.2, 3)), float(rng.uniform(-4, 4)),
                          float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
            H = affine_from_params(p)
            x, y = rng.uniform(-1, 1, size=2)
            sx, sy = p.s * x, p.s * y
            rx = math.cos(p.r) * sx + math.sin(p.r) * sy
            ry = -math.sin(p.r) * sx + math.cos(p.r) * sy
            expect = (rx + p.tx, ry + p.ty)
            got = map_point(H, (x, y))
            assert abs(got[0] - expect[0]) < 1e-12
            assert abs(got[1] - expect[1]) < 1e-12


class TestWarpPatch:
    def test_identity_reproduces_grid(self):
        rng = np.random.default_rng(0)
        patch = rng.random((9, 6, 4))
        out = warp_patch(patch, AugParams(1, 0, 0, 0), (9, 6))
        assert (out == patch).all()

    def test_fully_off_canvas_is_zero(self):
        patch = np.ones((8, 8, 4))
        out = warp_patch(patch, AugParams(1, 0, 5.0, 0), (8, 8))
        assert (out == 0).all()

    def test_center_of_two_by_two_is_mean(self):
        patch = np.arange(16, dtype=np.float64).reshape(2, 2, 4)
        out = warp_patch(patch, AugParams(1, 0, 0, 0), (1, 1))
        expect = patch.reshape(4, 4).mean(axis=0)
        assert np.allclose(out[0, 0], expect, atol=1e-12)

    def test_zero_sized_patch_rejected(self):
        with pytest.raises(DomainError):
            warp_patch(np.zeros((0, 3, 4)), AugParams(1, 0, 0, 0), (4, 4))
        with pytest.raises(DomainError):
            warp_patch(np.zeros((4, 4, 4)), AugParams(1, 0, 0, 0), (0, 4))

    def test_alpha_never_exceeds_input_max(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            patch = rng.random((7, 7, 4))
            p = AugParams(float(rng.uniform(0.3, 3)), float(rng.uniform(-3, 3)),
                          float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
            out = warp_patch(patch, p, (11, 13))
            assert out[..., 3].max() <= patch[..., 3].max() + 1e-12
            assert out[..., 3].min() >= 0.0

    def test_integer_translation_round_trip(self):
        rng = np.random.default_rng(5)
        patch = rng.random((16, 16, 4))
        dx, dy = 2 * 3 / 16, 2 * 2 / 16  # 3 and 2 whole pixels
        once = warp_patch(patch, AugParams(1, 0, dx, dy), (16, 16))
        back = warp_patch(once, AugParams(1, 0, -dx, -dy), (16, 16))
        assert (back[2:, 3:] == patch[2:, 3:]).all()

    def test_canvas_frame_equals_physical_embedding(self):
        rng = np.random.default_rng(9)
        patch = rng.random((12, 9, 4))
        embedded = np.zeros((40, 33, 4))
        oy, ox = (40 - 12) // 2, (33 - 9) // 2
        embedded[oy:oy + 12, ox:ox + 9] = patch
        for p in [AugParams(1, 0, 0, 0), AugParams(0.8, 0.4, 0.2, -0.3),
                  AugParams(1.3, -0.2, -0.4, 0.1)]:
            a = warp_patch(patch, p, (40, 33), frame="canvas")
            b = warp_patch(embedded, p, (40, 33), frame="patch")
            assert np.abs(a - b).max() < 1e-12

    def test_canvas_frame_identity_centers_patch(self):
        rng = np.random.default_rng(13)
        patch = rng.random((12, 10, 4))
        out = warp_patch(patch, AugParams(1, 0, 0, 0), (64, 64), frame="canvas")
        oy, ox = 26, 27
        assert (out[oy:oy + 12, ox:ox + 10] == patch).all()
        mask = np.ones((64, 64), dtype=bool)
        mask[oy:oy + 12, ox:ox + 10] = False
        assert (out[mask] == 0).all()


class TestWarpBackward:
    def test_zero_upstream_gives_zero_grads(self):
        patch = np.random.default_rng(1).random((6, 6, 4))
        g = warp_backward(patch, AugParams(1.2, 0.4, 0.1, 0.2), np.zeros((6, 6, 4)))
        assert (g.d_params == 0).all()
        assert (g.d_pixels == 0).all()

    def test_uniform_patch_interior_translation_grads_vanish(self):
        patch = np.full((10, 10, 4), 0.6)
        # Upstream supported strictly inside the warped patch so every sampled
        # neighborhood is constant.
        upstream = np.zeros((10, 10, 4))
        upstream[4:6, 4:6] = 1.0
        g = warp_backward(patch, AugParams(1.0, 0.0, 0.003, -0.002), upstream)
        assert abs(g.d_params[2]) <= 1e-10
        assert abs(g.d_params[3]) <= 1e-10

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        patch = rng.random((8, 8, 4))
        p = AugParams(1.1, 0.3, 0.05, -0.07)
        upstream = rng.standard_normal((8, 8, 4))
        g = warp_backward(patch, p, upstream)
        h = 1e-5
        base = np.array(p.as_tuple())
        for k in range(4):
            plus, minus = base.copy(), base.copy()
            plus[k] += h
            minus[k] -= h
            lp = float(np.sum(upstream * warp_patch(patch, AugParams(*plus), (8, 8))))
            lm = float(np.sum(upstream * warp_patch(patch, AugParams(*minus), (8, 8))))
            fd = (lp - lm) / (2 * h)
            assert abs(g.d_params[k] - fd) <= 1e-4 * max(1.0, abs(fd))

    def test_shape_mismatch_rejected(self):
        patch = np.zeros((4, 4, 4))
        with pytest.raises(DomainError):
            warp_backward(patch, AugParams(1, 0, 0, 0), np.zeros((4, 4, 3)))

    def test_pixel_gradients_match_finite_differences(self):
        rng = np.random.default_rng(21)
        patch = rng.random((5, 6, 4))
        p = AugParams(0.9, -0.25, 0.11, 0.07)
        upstream = rng.standard_normal((5, 6, 4))
        g = warp_backward(patch, p, upstream)
        h = 1e-6
        flat = patch.reshape(-1)
        picks = rng.choice(flat.size, size=12, replace=False)
        for idx in picks:
            pp = flat.copy()
            pp[idx] += h
            lp = float(np.sum(upstream * warp_patch(pp.reshape(patch.shape), p, (5, 6))))
            pp[idx] -= 2 * h
            lm = float(np.sum(upstream * warp_patch(pp.reshape(patch.shape), p, (5, 6))))
            fd = (lp - lm) / (2 * h)
            assert abs(g.d_pixels.reshape(-1)[idx] - fd) <= 1e-5 * max(1.0, abs(fd))


class TestGradCheck:
    def test_constant_patch_error_negligible(self):
        patch = np.full((6, 6, 4), 0.5)
        err = grad_check(patch, AugParams(1.0, 0.0, 0.0031, -0.0017), trials=3,
                         h=1e-5, rng=np.random.default_rng(2))
        assert err <= 1e-10

    def test_hundred_random_trials_within_tolerance(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(10):
            patch = rng.random((8, 8, 4))
            p = AugParams(float(rng.uniform(0.6, 1.8)), float(rng.uniform(-1, 1)),
                          float(rng.uniform(-0.4, 0.4)), float(rng.uniform(-0.4, 0.4)))
            worst = max(worst, grad_check(patch, p, trials=10, h=1e-5, rng=rng))
        assert worst <= 1e-4

    def test_zero_step_rejected(self):
        with pytest.raises(DomainError):
            grad_check(np.zeros((4, 4, 4)), AugParams(1, 0, 0, 0), trials=1, h=0.0)

    def test_zero_trials_rejected(self):
        with pytest.raises(DomainError):
            grad_check(np.zeros((4, 4, 4)), AugParams(1, 0, 0, 0), trials=0, h=1e-5)
