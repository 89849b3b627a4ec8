import numpy as np
import pytest
import torch

from blurvid.gradcheck import OPERATORS, check_function
from blurvid.warp import (affine_grid_sample, identity_theta, local_warp,
                          translation_theta)


def shift_oracle(U, dx, dy):
    """out[y, x] = U[y + dy, x + dx], zero outside."""
    out = np.zeros_like(U)
    h, w = U.shape[-2:]
    for y in range(h):
        for x in range(w):
            sy, sx = y + dy, x + dx
            if 0 <= sy < h and 0 <= sx < w:
                out[..., y, x] = U[..., sy, sx]
    return out


@pytest.fixture
def feature():
    return torch.as_tensor(np.random.default_rng(0).standard_normal((2, 3, 7, 9)))


def smooth_feature(h=24, w=24):
    yy, xx = np.mgrid[0:h, 0:w] / 6.0
    f = np.stack([np.sin(xx) * np.cos(yy), np.cos(0.7 * xx + 0.3 * yy)])
    return torch.as_tensor(f[None])


class TestAffine:
    def test_identity_exact(self, feature):
        out = affine_grid_sample(feature, identity_theta(2, torch.float64))
        assert torch.equal(out, feature)

    @pytest.mark.parametrize("dx, dy", [(1, 0), (-1, 0), (0, 1), (0, -1)])
    def test_one_pixel_translation(self, feature, dx, dy):
        h, w = feature.shape[-2:]
        theta = translation_theta(dx, dy, h, w)
        out = affine_grid_sample(feature, theta).numpy()
        ref = shift_oracle(feature.numpy(), dx, dy)
        np.testing.assert_array_equal(out[..., 1:-1, 1:-1], ref[..., 1:-1, 1:-1])

    def test_out_of_bounds_is_zero(self, feature):
        theta = translation_theta(100, 0, *feature.shape[-2:])
        assert torch.count_nonzero(affine_grid_sample(feature, theta)) == 0

    def test_non_finite_theta(self, feature):
        theta = identity_theta(2, torch.float64)
        theta[0, 0, 2] = float("nan")
        with pytest.raises(ValueError, match="non-finite"):
            affine_grid_sample(feature, theta)

    def test_linearity(self, feature):
        rng = np.random.default_rng(1)
        theta = identity_theta(2, torch.float64) + 0.2 * torch.as_tensor(rng.standard_normal((2, 2, 3)))
        U2 = torch.as_tensor(rng.standard_normal(feature.shape))
        lhs = affine_grid_sample(2.5 * feature - 1.5 * U2, theta)
        rhs = 2.5 * affine_grid_sample(feature, theta) - 1.5 * affine_grid_sample(U2, theta)
        assert (lhs - rhs).abs().max() < 1e-9

    def test_gradients(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            fn, inputs, eps = OPERATORS["affine_grid_sample"](rng)
            assert check_function(fn, inputs, eps) < 1e-3

    def test_half_pixel_composition(self):
        U = smooth_feature()
        half = translation_theta(0.5, 0.0, 24, 24)
        twice = affine_grid_sample(affine_grid_sample(U, half), half)
        once = affine_grid_sample(U, translation_theta(1.0, 0.0, 24, 24))
        assert (twice - once)[..., 2:-2, 2:-2].abs().mean() < 0.05

    def test_gradient_flows_at_identity(self, feature):
        theta = identity_theta(2, torch.float64).requires_grad_(True)
        affine_grid_sample(feature, theta).sum().backward()
        assert theta.grad.abs().sum() > 0


class TestLocalWarp:
    def test_zero_flow_exact(self, feature):
        flow = torch.zeros(2, 2, 7, 9, dtype=torch.float64)
        assert torch.equal(local_warp(feature, flow), feature)

    def test_integer_flow(self, feature):
        flow = torch.zeros(2, 2, 7, 9, dtype=torch.float64)
        flow[:, 0] = 2.0
        out = local_warp(feature, flow).numpy()
        ref = shift_oracle(feature.numpy(), 2, 0)
        np.testing.assert_array_equal(out[..., 2:-2, 2:-2], ref[..., 2:-2, 2:-2])

    def test_shape_mismatch(self, feature):
        with pytest.raises(ValueError, match="does not match"):
            local_warp(feature, torch.zeros(2, 2, 7, 8, dtype=torch.float64))

    def test_linearity(self, feature):
        rng = np.random.default_rng(3)
        flow = torch.as_tensor(rng.uniform(-2, 2, (2, 2, 7, 9)))
        U2 = torch.as_tensor(rng.standard_normal(feature.shape))
        lhs = local_warp(0.3 * feature + 4 * U2, flow)
        rhs = 0.3 * local_warp(feature, flow) + 4 * local_warp(U2, flow)
        assert (lhs - rhs).abs().max() < 1e-9

    def test_gradients(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            fn, inputs, eps = OPERATORS["local_warp"](rng)
            assert check_function(fn, inputs, eps) < 1e-3

    def test_matches_affine_for_uniform_flow(self):
        U = smooth_feature()
        flow = torch.zeros(1, 2, 24, 24, dtype=torch.float64)
        flow[:, 0], flow[:, 1] = 0.37, -1.21
        theta = translation_theta(0.37, -1.21, 24, 24)
        assert torch.allclose(local_warp(U, flow), affine_grid_sample(U, theta), atol=1e-12)
