"""Central finite-difference checks of autograd gradients (float64).

Each operator draws random small instances away from the non-differentiable
points of its kernel (integer sample coordinates for bilinear warps, zero
residuals for L1 terms) and compares every input gradient with central
differences.
"""
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import objectives as obj
from .warp import affine_grid_sample, affine_sample_coords, local_warp

TOLERANCE = 1e-3


def central_difference(fn, inputs, target, eps):
    """Numerical gradient of scalar ``fn(*inputs)`` w.r.t. ``inputs[target]``."""
    x = inputs[target]
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(fn(*inputs))
            flat[i] = orig - eps
            down = float(fn(*inputs))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric):
    """Max abs deviation scaled by the largest numerical gradient entry."""
    scale = max(float(numeric.abs().max()), 1e-8)
    return float((analytic - numeric).abs().max()) / scale


def check_function(fn, inputs, eps):
    """Max relative error over all inputs of ``fn``."""
    inputs = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    worst = 0.0
    for t, (x, g) in enumerate(zip(inputs, grads)):
        g = torch.zeros_like(x) if g is None else g
        num = central_difference(fn, [i.detach().clone() for i in inputs], t, eps)
        worst = max(worst, relative_error(g, num))
    return worst


def _far_from_integers(*coords, margin=1e-3):
    for c in coords:
        c = c.detach()
        if ((c - torch.round(c)).abs() < margin).any():
            return False
    return True


def _affine_instance(rng):
    while True:
        U = torch.as_tensor(rng.standard_normal((1, 2, 5, 5)))
        theta = torch.tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], dtype=torch.float64)[None]
        theta = theta + 0.3 * torch.as_tensor(rng.standard_normal((1, 2, 3)))
        if _far_from_integers(*affine_sample_coords(theta, 5, 5)):
            break
    R = torch.as_tensor(rng.standard_normal((1, 2, 5, 5)))
    return (lambda u, th: (affine_grid_sample(u, th) * R).sum()), [U, theta], 1e-4


def _flow_instance(rng):
    grid_y, grid_x = torch.meshgrid(torch.arange(5.0), torch.arange(5.0), indexing="ij")
    while True:
        U = torch.as_tensor(rng.standard_normal((1, 2, 5, 5)))
        flow = torch.as_tensor(rng.uniform(-1.5, 1.5, (1, 2, 5, 5)))
        if _far_from_integers(grid_x + flow[0, 0], grid_y + flow[0, 1]):
            break
    R = torch.as_tensor(rng.standard_normal((1, 2, 5, 5)))
    return (lambda u, f: (local_warp(u, f) * R).sum()), [U, flow], 1e-4


def _residuals_ok(a, b, margin=1e-4):
    return bool(((a - b).abs() > margin).all())


def _photometric_instance(rng):
    sizes = [(4, 4), (8, 8)]
    weights = (0.5, 1.0)
    while True:
        gt = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 8, 8))) for _ in range(2)]
        pred = [torch.as_tensor(rng.uniform(0, 1, (1, 3) + s)) for _ in range(2) for s in sizes]
        ok = all(_residuals_ok(obj.downsample(gt[j], sizes[l]), pred[2 * j + l])
                 for j in range(2) for l in range(2))
        if ok:
            break

    def fn(*p):
        return obj.multiscale_photometric([list(p[0:2]), list(p[2:4])], gt, weights)
    return fn, pred, 1e-6


def _consistency_instance(rng):
    thetas = [torch.as_tensor(rng.standard_normal((2, 2, 3))) for _ in range(6)]

    def fn(*t):
        return obj.transformation_consistency([list(t[0:3]), list(t[3:6])])
    return fn, thetas, 1e-6


def _penalty_instance(rng):
    while True:
        gt = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 6, 6))) for _ in range(3)]
        pred = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 6, 6))) for _ in range(3)]
        if _residuals_ok(gt[2], pred[0]) and _residuals_ok(gt[0], pred[2]):
            break
    return (lambda *p: obj.symmetric_penalty(list(p), gt)), pred, 1e-6


def _total_instance(rng):
    weights = obj.LossWeights(level_weights=(0.5, 1.0), lambda_tc=0.1, lambda_p=0.01)
    while True:
        gt = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 8, 8))) for _ in range(3)]
        coarse = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 4, 4))) for _ in range(3)]
        fine = [torch.as_tensor(rng.uniform(0, 1, (1, 3, 8, 8))) for _ in range(3)]
        ok = all(_residuals_ok(obj.downsample(gt[j], (4, 4)), coarse[j])
                 and _residuals_ok(gt[j], fine[j]) for j in range(3))
        ok = ok and _residuals_ok(gt[2], fine[0]) and _residuals_ok(gt[0], fine[2])
        if ok:
            break
    thetas = [torch.as_tensor(rng.standard_normal((1, 2, 3))) for _ in range(4)]

    def fn(*a):
        c, f, t = a[0:3], a[3:6], a[6:10]
        l_mp = obj.multiscale_photometric([[c[j], f[j]] for j in range(3)], gt, weights.level_weights)
        l_tc = obj.transformation_consistency([list(t[0:2]), list(t[2:4])])
        l_p = obj.symmetric_penalty(list(f), gt)
        return obj.total_loss(l_mp, l_tc, l_p, weights)
    return fn, coarse + fine + thetas, 1e-6


OPERATORS = {
    "affine_grid_sample": _affine_instance,
    "local_warp": _flow_instance,
    "multiscale_photometric": _photometric_instance,
    "transformation_consistency": _consistency_instance,
    "symmetric_penalty": _penalty_instance,
    "total_loss": _total_instance,
}


@dataclass
class GradReport:
    results: dict = field(default_factory=dict)
    tolerance: float = TOLERANCE
    seconds: float = 0.0

    @property
    def failures(self):
        return [name for name, err in self.results.items() if not err < self.tolerance]

    @property
    def passed(self):
        return not self.failures

    def lines(self):
        out = []
        for name, err in self.results.items():
            status = "PASS" if err < self.tolerance else "FAIL"
            out.append(f"{status}  {name:<28s} max rel err {err:.3e}")
        return out


def run_gradcheck(operators=None, instances=20, seed=0, tolerance=TOLERANCE):
    """Run every operator on ``instances`` random cases; returns a GradReport."""
    operators = operators or OPERATORS
    rng = np.random.default_rng(seed)
    report = GradReport(tolerance=tolerance)
    t0 = time.perf_counter()
    for name, make in operators.items():
        worst = 0.0
        for _ in range(instances):
            fn, inputs, eps = make(rng)
            worst = max(worst, check_function(fn, inputs, eps))
        report.results[name] = worst
    report.seconds = time.perf_counter() - t0
    return report
