"""Training losses and the order-invariant evaluation protocol.

Every L1 term is a per-pixel mean, so level weights and loss coefficients do
not depend on image resolution.
"""
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0


@dataclass
class LossWeights:
    level_weights: tuple
    lambda_tc: float = 0.1
    lambda_p: float = 0.01
    use_tcl: bool = True
    use_pt: bool = True

    def __post_init__(self):
        self.level_weights = tuple(float(w) for w in self.level_weights)
        if any(w < 0 for w in self.level_weights) or self.level_weights[-1] <= 0:
            raise ValueError("level weights must be >= 0 with a positive full-scale weight")
        if self.lambda_tc < 0 or self.lambda_p < 0:
            raise ValueError("loss coefficients must be >= 0")

    @classmethod
    def default(cls, k, **kw):
        return cls(level_weights=default_level_weights(k), **kw)


def default_level_weights(k):
    """``1 / 2**(k - l)`` for l = 1..k, coarse to fine."""
    return tuple(1.0 / 2 ** (k - l) for l in range(1, k + 1))


def downsample(img, size):
    if tuple(img.shape[-2:]) == tuple(size):
        return img
    return F.interpolate(img, size=tuple(size), mode="bilinear", align_corners=False)


def multiscale_photometric(pred, gt, weights):
    """Weighted multi-scale L1 between predicted pyramids and ground truth.

    ``pred[j][l]`` is the frame-``j`` prediction at scale ``l`` (coarse to
    fine); ``gt[j]`` is the full-scale ground truth, bilinearly resized to
    every scale.
    """
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted frames vs {len(gt)} ground-truth frames")
    total = 0.0
    for frames, y in zip(pred, gt):
        if len(frames) != len(weights):
            raise ValueError(f"{len(frames)} scales but {len(weights)} level weights")
        for w, y_hat in zip(weights, frames):
            if y_hat.shape[:-2] != y.shape[:-2]:
                raise ValueError(f"shape mismatch {tuple(y_hat.shape)} vs {tuple(y.shape)}")
            if w == 0:
                continue
            total = total + w * (downsample(y, y_hat.shape[-2:]) - y_hat).abs().mean()
    return total if torch.is_tensor(total) else torch.tensor(total)


def _flat(theta):
    if theta.dim() == 3:
        return theta.reshape(theta.shape[0], -1)
    return theta.reshape(1, -1)


def transformation_consistency(thetas):
    """Squared L2 between each frame's parameters at adjacent levels.

    ``thetas[j]`` is the list of parameters for non-middle frame ``j``
    ordered by level. Batched parameters are averaged over the batch.
    """
    total = 0.0
    for levels in thetas:
        if len(levels) < 2:
            raise ValueError("transformation consistency needs at least two levels")
        for prev, cur in zip(levels[:-1], levels[1:]):
            total = total + (_flat(cur) - _flat(prev)).pow(2).sum(dim=1).mean()
    return total if torch.is_tensor(total) else torch.tensor(total)


def symmetric_penalty(pred, gt):
    """Negative mean absolute difference to the time-mirrored ground truth."""
    n = len(pred)
    if n != len(gt) or n % 2 == 0:
        raise ValueError("penalty needs equal, odd-length sequences")
    m = n // 2
    total = 0.0
    for j in range(n):
        if j == m:
            continue
        total = total - (gt[n - 1 - j] - pred[j]).abs().mean()
    return total if torch.is_tensor(total) else torch.tensor(total)


def total_loss(l_mp, l_tc, l_p, weights):
    loss = l_mp
    if weights.use_tcl:
        loss = loss + weights.lambda_tc * l_tc
    if weights.use_pt:
        loss = loss + weights.lambda_p * l_p
    return loss


@dataclass
class LossTerms:
    total: torch.Tensor
    photometric: torch.Tensor
    consistency: torch.Tensor
    penalty: torch.Tensor

    def as_floats(self):
        return {
            "loss": float(self.total.detach()),
            "l_mp": float(self.photometric.detach()),
            "l_tc": float(torch.as_tensor(self.consistency).detach()),
            "l_p": float(torch.as_tensor(self.penalty).detach()),
        }


def sequence_loss(prediction, targets, weights, include_itn=False):
    """All loss terms for a network prediction against ``targets`` (N, n, 3, H, W)."""
    gt = [targets[:, j] for j in range(targets.shape[1])]
    l_mp = multiscale_photometric(prediction.pyramids(), gt, weights.level_weights)
    thetas = prediction.consistency_thetas(include_itn)
    if thetas and len(thetas[0]) >= 2:
        l_tc = transformation_consistency(thetas)
    else:
        l_tc = torch.zeros((), dtype=l_mp.dtype)
    l_p = symmetric_penalty(prediction.refined, gt)
    return LossTerms(total_loss(l_mp, l_tc, l_p, weights), l_mp, l_tc, l_p)


# -- metrics ----------------------------------------------------------------

def psnr(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _blur_valid(x, taps):
    pad = len(taps) // 2
    out = correlate1d(correlate1d(x, taps, axis=0), taps, axis=1)
    return out[pad:-pad, pad:-pad]


def ssim(a, b, data_range=1.0):
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    taps = _gaussian_taps()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _blur_valid(x, taps), _blur_valid(y, taps)
        sxx = _blur_valid(x * x, taps) - mx * mx
        syy = _blur_valid(y * y, taps) - my * my
        sxy = _blur_valid(x * y, taps) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


@dataclass
class MetricReport:
    psnr: list
    ssim: list
    direction: str = "forward"
    extra: dict = field(default_factory=dict)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim))


def order_invariant_eval(pred, gt, with_ssim=True):
    """Score ``pred`` against ``gt`` and against reversed ``gt``; keep the better.

    The direction with the higher mean PSNR is reported, and the same
    direction is used for SSIM.
    """
    if len(pred) != len(gt):
        raise ValueError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    best = None
    for direction, order in (("forward", list(gt)), ("reverse", list(gt)[::-1])):
        p = [psnr(a, b) for a, b in zip(pred, order)]
        if best is None or np.mean(p) > np.mean(best[1]):
            best = (direction, p, order)
    direction, p, order = best
    s = [ssim(a, b) for a, b in zip(pred, order)] if with_ssim else [float("nan")] * len(p)
    return MetricReport(psnr=p, ssim=s, direction=direction)
