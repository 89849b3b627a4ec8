import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from blurvid import objectives as obj
from blurvid.gradcheck import OPERATORS, check_function


def const(v, shape=(1, 3, 8, 8)):
    return torch.full(shape, float(v), dtype=torch.float64)


class TestPhotometric:
    def test_exact_match(self):
        gt = [torch.rand(1, 3, 8, 8, dtype=torch.float64) for _ in range(3)]
        pred = [[obj.downsample(y, (4, 4)), y.clone()] for y in gt]
        assert float(obj.multiscale_photometric(pred, gt, (0.5, 1.0))) == 0.0

    def test_single_scale_constant_error(self):
        val = obj.multiscale_photometric([[const(0.6)]], [const(0.5)], (1.0,))
        assert float(val) == pytest.approx(0.1, abs=1e-9)

    def test_two_scales(self):
        gt = [const(0.5)]
        pred = [[const(0.3, (1, 3, 4, 4)), const(0.4)]]
        val = obj.multiscale_photometric(pred, gt, (0.5, 1.0))
        assert float(val) == pytest.approx(0.2, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            obj.multiscale_photometric([[const(0.1)]], [const(0.1), const(0.2)], (1.0,))

    def test_default_level_weights(self):
        assert obj.default_level_weights(3) == (0.25, 0.5, 1.0)


class TestConsistency:
    def test_constant_levels(self):
        th = torch.randn(2, 2, 3, dtype=torch.float64)
        assert float(obj.transformation_consistency([[th, th.clone(), th.clone()]])) == 0.0

    def test_two_levels(self):
        a = torch.zeros(6, dtype=torch.float64)
        b = a.clone()
        b[0] = 0.1
        assert float(obj.transformation_consistency([[a, b]])) == pytest.approx(0.01, abs=1e-12)

    def test_three_levels(self):
        a = torch.zeros(6, dtype=torch.float64)
        b = a.clone()
        b[1] = 0.1
        c = b.clone()
        c[2] = 0.2
        assert float(obj.transformation_consistency([[a, b, c]])) == pytest.approx(0.05, abs=1e-12)

    def test_too_few_levels(self):
        with pytest.raises(ValueError):
            obj.transformation_consistency([[torch.zeros(6)]])


class TestPenalty:
    def test_mirrored_prediction_is_zero(self):
        gt = [torch.rand(1, 3, 6, 6, dtype=torch.float64) for _ in range(5)]
        pred = [gt[4 - j].clone() for j in range(5)]
        assert float(obj.symmetric_penalty(pred, gt)) == 0.0

    def test_static_scene_degeneracy(self):
        y = torch.rand(1, 3, 6, 6, dtype=torch.float64)
        gt = [y, torch.rand_like(y), y]
        assert float(obj.symmetric_penalty([t.clone() for t in gt], gt)) == 0.0

    def test_hand_arithmetic(self):
        gt = [const(0.2), const(0.5), const(0.7)]
        pred = [const(0.9), const(0.5), const(0.3)]
        assert float(obj.symmetric_penalty(pred, gt)) == pytest.approx(-0.3, abs=1e-9)

    def test_nonpositive(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            gt = [torch.as_tensor(rng.uniform(size=(1, 3, 4, 4))) for _ in range(3)]
            pred = [torch.as_tensor(rng.uniform(size=(1, 3, 4, 4))) for _ in range(3)]
            assert float(obj.symmetric_penalty(pred, gt)) <= 0.0


class TestTotal:
    def test_pml_only(self):
        w = obj.LossWeights((1.0,), lambda_tc=0.0, lambda_p=0.0)
        assert float(obj.total_loss(torch.tensor(0.2), torch.tensor(5.0), torch.tensor(-3.0), w)) \
            == pytest.approx(0.2)

    def test_hand_arithmetic(self):
        w = obj.LossWeights((1.0,), lambda_tc=0.1, lambda_p=0.01)
        val = obj.total_loss(torch.tensor(0.2, dtype=torch.float64),
                             torch.tensor(0.05, dtype=torch.float64),
                             torch.tensor(-0.3, dtype=torch.float64), w)
        assert float(val) == pytest.approx(0.202, abs=1e-9)

    def test_ablation_flags(self):
        w = obj.LossWeights((1.0,), use_tcl=False, use_pt=False)
        assert float(obj.total_loss(torch.tensor(0.2), torch.tensor(1.0), torch.tensor(-1.0), w)) \
            == pytest.approx(0.2)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            obj.LossWeights((1.0, 0.0))
        with pytest.raises(ValueError):
            obj.LossWeights((1.0,), lambda_tc=-1)


@pytest.mark.parametrize("name", list(OPERATORS)[2:])
def test_loss_gradients(name):
    rng = np.random.default_rng(7)
    for _ in range(20):
        fn, inputs, eps = OPERATORS[name](rng)
        assert check_function(fn, inputs, eps) < 1e-3


class TestPSNR:
    def test_identical_capped(self):
        a = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert obj.psnr(a, a) == 100.0

    def test_closed_forms(self):
        a = np.full((8, 8, 3), 0.2)
        assert obj.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-6)
        assert obj.psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            obj.psnr(np.zeros((4, 4)), np.zeros((4, 5)))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25)
    def test_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(size=(2, 6, 6, 3))
        assert obj.psnr(a, b) == obj.psnr(b, a)


def natural_image(size=48, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.stack([
        0.5 + 0.3 * np.sin(6 * xx + c) * np.cos(4 * yy - c) + 0.05 * rng.standard_normal((size, size))
        for c in range(3)
    ], -1)
    return np.clip(img, 0, 1)


def reference_ssim(a, b):
    return structural_similarity(a, b, channel_axis=-1, data_range=1.0, gaussian_weights=True,
                                 sigma=1.5, use_sample_covariance=False)


class TestSSIM:
    def test_identical(self):
        a = natural_image()
        assert obj.ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_matches_reference(self):
        a, b = natural_image(seed=0), natural_image(seed=1)
        assert obj.ssim(a, b) == pytest.approx(reference_ssim(a, b), abs=1e-6)
        noisy = np.clip(a + 0.1 * np.random.default_rng(2).standard_normal(a.shape), 0, 1)
        assert obj.ssim(a, noisy) == pytest.approx(reference_ssim(a, noisy), abs=1e-6)

    def test_negative_image(self):
        a = natural_image()
        a = a - a.mean() + 0.5
        assert obj.ssim(a, 1 - a) < 0.1
        assert reference_ssim(a, 1 - a) < 0.1

    def test_independent_noise(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(size=(2, 64, 64, 3))
        assert abs(obj.ssim(a, b)) < 0.1
        assert abs(reference_ssim(a, b)) < 0.1

    def test_symmetric(self):
        a, b = natural_image(seed=4), natural_image(seed=5)
        assert obj.ssim(a, b) == pytest.approx(obj.ssim(b, a), abs=1e-14)

    def test_too_small(self):
        with pytest.raises(ValueError, match="window"):
            obj.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def seq(seed, n=3, size=16):
    rng = np.random.default_rng(seed)
    return [rng.uniform(size=(size, size, 3)) for _ in range(n)]


class TestOrderInvariant:
    def test_gt(self):
        gt = seq(0)
        rep = obj.order_invariant_eval(gt, gt)
        assert rep.direction == "forward"
        assert rep.psnr == [100.0] * 3
        assert rep.ssim == pytest.approx([1.0] * 3)

    def test_reversed_gt(self):
        gt = seq(1)
        rep = obj.order_invariant_eval(gt[::-1], gt)
        assert rep.direction == "reverse"
        assert rep.psnr == [100.0] * 3

    def test_mean_decides_direction(self):
        gt = seq(2, n=5)
        rev = gt[::-1]
        # frames 0, 1, 3 lean slightly towards the reversed order, frame 4 strongly forward
        alpha = [0.45, 0.45, 1.0, 0.45, 0.99]
        pred = [a * g + (1 - a) * r for a, g, r in zip(alpha, gt, rev)]
        fwd = [obj.psnr(p, g) for p, g in zip(pred, gt)]
        bwd = [obj.psnr(p, g) for p, g in zip(pred, rev)]
        assert sum(b > f for f, b in zip(fwd, bwd)) == 3
        assert np.mean(fwd) > np.mean(bwd)
        rep = obj.order_invariant_eval(pred, gt, with_ssim=False)
        assert rep.direction == "forward"
        assert rep.psnr == fwd

    def test_reversal_symmetry(self):
        gt = seq(3, n=5)
        pred = [g + 0.05 * np.random.default_rng(i).standard_normal(g.shape) for i, g in enumerate(gt)]
        a = obj.order_invariant_eval(pred, gt)
        b = obj.order_invariant_eval(pred[::-1], gt)
        assert a.mean_psnr == pytest.approx(b.mean_psnr)
        assert a.direction != b.direction

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            obj.order_invariant_eval(seq(0, 3), seq(0, 5))
