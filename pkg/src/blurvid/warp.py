"""Differentiable bilinear warping: affine spatial transformer and per-pixel flow.

Tensors are ``(N, C, H, W)``. Affine parameters are ``(N, 2, 3)`` matrices
acting on normalized coordinates where (-1, -1) and (+1, +1) are the centers
of the top-left and bottom-right pixels (align-corners convention). Flows are
``(N, 2, H, W)`` displacements in pixels, channel 0 = dx, channel 1 = dy.

Samples falling outside the input contribute zero.
"""
import torch

# sample coordinates closer than this to an integer are treated as exact
SNAP_TOL = 1e-6


def _snap(coord):
    # straight-through: the forward value is snapped, the gradient is untouched
    r = torch.round(coord)
    close = (coord - r).abs() < SNAP_TOL
    return coord + torch.where(close, r - coord, torch.zeros_like(coord)).detach()


def bilinear_sample(U, px, py):
    """Sample ``U`` at pixel coordinates ``(px, py)`` of shape ``(N, Ho, Wo)``."""
    n, c, h, w = U.shape
    px = _snap(px)
    py = _snap(py)
    x0 = torch.floor(px).detach()
    y0 = torch.floor(py).detach()
    fx = px - x0
    fy = py - y0
    x0 = x0.long()
    y0 = y0.long()
    flat = U.reshape(n, c, h * w)
    out = None
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(n, 1, -1)
            vals = torch.gather(flat, 2, idx.expand(n, c, idx.shape[-1]))
            vals = vals.reshape(n, c, *px.shape[1:])
            weight = (wx * wy * valid).unsqueeze(1)
            term = vals * weight
            out = term if out is None else out + term
    return out


def _pixel_grid(n, h, w, like):
    ys = torch.arange(h, dtype=like.dtype, device=like.device)
    xs = torch.arange(w, dtype=like.dtype, device=like.device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return gx.expand(n, h, w), gy.expand(n, h, w)


def affine_sample_coords(theta, h, w):
    """Pixel coordinates ``(px, py)`` sampled by each output location.

    Written in pixel offsets so that the identity transform yields the
    output grid exactly.
    """
    n = theta.shape[0]
    gx, gy = _pixel_grid(n, h, w, theta)
    sx = (w - 1) / 2.0
    sy = (h - 1) / 2.0
    xn = (gx - sx) / sx if sx > 0 else torch.zeros_like(gx)
    yn = (gy - sy) / sy if sy > 0 else torch.zeros_like(gy)
    a = theta[:, 0, :, None, None]
    b = theta[:, 1, :, None, None]
    px = gx + (a[:, 0] - 1.0) * (gx - sx) + a[:, 1] * yn * sx + a[:, 2] * sx
    py = gy + b[:, 0] * xn * sy + (b[:, 1] - 1.0) * (gy - sy) + b[:, 2] * sy
    return px, py


def affine_grid_sample(U, theta):
    """Resample ``U`` at the affine image of each output location."""
    if theta.dim() == 2:
        theta = theta.unsqueeze(0).expand(U.shape[0], 2, 3)
    if theta.shape[-2:] != (2, 3) or theta.shape[0] != U.shape[0]:
        raise ValueError(f"theta must be (N, 2, 3), got {tuple(theta.shape)}")
    if not torch.isfinite(theta).all():
        raise ValueError("non-finite affine parameters")
    px, py = affine_sample_coords(theta.to(U.dtype), U.shape[2], U.shape[3])
    return bilinear_sample(U, px, py)


def local_warp(U, flow):
    """Backward-warp ``U``: ``out(x, y) = U(x + dx, y + dy)``."""
    if flow.dim() != 4 or flow.shape[1] != 2 or flow.shape[0] != U.shape[0] \
            or flow.shape[2:] != U.shape[2:]:
        raise ValueError(
            f"flow shape {tuple(flow.shape)} does not match feature {tuple(U.shape)}")
    n, _, h, w = U.shape
    gx, gy = _pixel_grid(n, h, w, U)
    return bilinear_sample(U, gx + flow[:, 0], gy + flow[:, 1])


def translation_theta(dx_pixels, dy_pixels, h, w, dtype=torch.float64):
    """Affine parameters that sample ``dx``/``dy`` pixels away from each output pixel."""
    tx = dx_pixels / ((w - 1) / 2.0)
    ty = dy_pixels / ((h - 1) / 2.0)
    return torch.tensor([[1.0, 0.0, tx], [0.0, 1.0, ty]], dtype=dtype)


def identity_theta(n=1, dtype=torch.float32):
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=dtype).expand(n, 2, 3).clone()
