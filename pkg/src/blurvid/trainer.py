"""Optimization loop, learning-rate schedule, checkpointing and evaluation."""
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .blur_synth import target_indices
from .network import NetworkConfig, VideoRestorationNet, save_checkpoint
from .objectives import (LossWeights, default_level_weights, order_invariant_eval,
                         psnr, sequence_loss)

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 80
    decay_epochs: tuple = (40, 60)
    decay_factor: float = 0.5
    batch_size: int = 8
    input_size: int = 128
    n_frames: int = 3
    seed: int = 0
    use_tcl: bool = True
    use_pt: bool = True
    lambda_tc: float = 0.1
    lambda_p: float = 0.01
    level_weights: Optional[tuple] = None
    tc_include_itn: bool = False
    grad_clip: Optional[float] = None
    eval_every: int = 0
    checkpoint_every: int = 0
    log_every: int = 50

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValueError(f"decay epochs must be strictly increasing: {self.decay_epochs}")
        if self.decay_epochs and not (1 <= self.decay_epochs[0] and self.decay_epochs[-1] <= self.epochs):
            raise ValueError(f"decay epochs {self.decay_epochs} outside [1, {self.epochs}]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")

    def loss_weights(self, k):
        return LossWeights(
            level_weights=self.level_weights or default_level_weights(k),
            lambda_tc=self.lambda_tc, lambda_p=self.lambda_p,
            use_tcl=self.use_tcl, use_pt=self.use_pt,
        )

    def to_dict(self):
        d = asdict(self)
        d["decay_epochs"] = list(self.decay_epochs)
        return d


def paper_profile(dataset="panorama"):
    """Training settings reported for full-scale runs."""
    if dataset == "panorama":
        return TrainConfig(batch_size=8, input_size=128, n_frames=3)
    if dataset == "gopro":
        return TrainConfig(batch_size=4, input_size=256, n_frames=7)
    raise ValueError(f"unknown dataset profile {dataset!r}")


def desk_profile(**overrides):
    """Overfit-scale settings: 8 samples of 64x64, one batch per epoch."""
    cfg = dict(lr=3e-3, epochs=500, decay_epochs=(350, 450), batch_size=8,
               input_size=64, n_frames=3, grad_clip=1.0, log_every=25)
    cfg.update(overrides)
    return TrainConfig(**cfg)


def desk_network(**overrides):
    cfg = dict(k=5, n=3, width=0.25)
    cfg.update(overrides)
    return NetworkConfig(**cfg)


def lr_at(epoch, cfg):
    if not 1 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    drops = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.lr * cfg.decay_factor ** drops


def run_hash(net_cfg, train_cfg):
    blob = json.dumps({"network": net_cfg.to_dict(), "train": train_cfg.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- data -------------------------------------------------------------------

@dataclass
class FrameDataset:
    """Blurred inputs ``(N, 3, H, W)`` with target sequences ``(N, n, 3, H, W)``."""
    blurred: torch.Tensor
    targets: torch.Tensor
    ids: list
    rotation: Optional[np.ndarray] = None
    label: str = ""

    def __len__(self):
        return self.blurred.shape[0]

    @property
    def n(self):
        return self.targets.shape[1]

    @classmethod
    def from_samples(cls, samples, n, label="", dtype=torch.float32):
        if not samples:
            raise ValueError("dataset is empty")
        blurred, targets, rot = [], [], []
        for s in samples:
            frames = s.frames if s.n == n else s.frames[target_indices(s.n, n)]
            blurred.append(np.transpose(s.blurred, (2, 0, 1)))
            targets.append(np.transpose(frames, (0, 3, 1, 2)))
            rot.append(np.nan if s.rotation is None else s.rotation_magnitude)
        rot = np.asarray(rot)
        return cls(
            blurred=torch.as_tensor(np.stack(blurred), dtype=dtype),
            targets=torch.as_tensor(np.stack(targets), dtype=dtype),
            ids=[s.source or f"sample_{i:06d}" for i, s in enumerate(samples)],
            rotation=None if np.all(np.isnan(rot)) else rot,
            label=label,
        )

    def subset(self, idx):
        idx = list(idx)
        return FrameDataset(
            self.blurred[idx], self.targets[idx], [self.ids[i] for i in idx],
            None if self.rotation is None else self.rotation[idx], self.label)


# -- training ---------------------------------------------------------------

@dataclass
class RunLog:
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    lr_trace: dict = field(default_factory=dict)
    config_hash: str = ""
    flags: dict = field(default_factory=dict)

    def column(self, key):
        return [s[key] for s in self.steps]

    def write_csv(self, path):
        if not self.steps:
            return
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(self.steps[0]))
            w.writeheader()
            w.writerows(self.steps)


def build_model(net_cfg, seed=0):
    torch.manual_seed(seed)
    return VideoRestorationNet(net_cfg)


def train(dataset, model, cfg, run_dir=None, eval_dataset=None, dry_run=False):
    """Train ``model`` in place with Adam and a step-decay schedule.

    With ``dry_run`` only the learning-rate trace is produced.
    """
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    if dataset.n != model.config.n:
        raise ValueError(f"model predicts {model.config.n} frames, dataset has {dataset.n}")
    weights = cfg.loss_weights(model.config.k)
    log = RunLog(config_hash=run_hash(model.config, cfg),
                 flags={"use_lw": model.config.use_lw, "use_itn": model.config.use_itn,
                        "use_refiner": model.config.use_refiner,
                        "use_tcl": cfg.use_tcl, "use_pt": cfg.use_pt})
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)

    dtype = next(model.parameters()).dtype
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    gen = torch.Generator().manual_seed(cfg.seed)
    it = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg)
        log.lr_trace[epoch] = lr
        if dry_run:
            continue
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = torch.randperm(len(dataset), generator=gen)
        for b, start in enumerate(range(0, len(dataset), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x = dataset.blurred[idx].to(dtype)
            y = dataset.targets[idx].to(dtype)
            opt.zero_grad()
            terms = sequence_loss(model(x), y, weights, cfg.tc_include_itn)
            if not torch.isfinite(terms.total):
                if run_dir is not None:
                    torch.save({"x": x, "y": y, "epoch": epoch, "batch": b},
                               run_dir / "nonfinite_batch.pt")
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {b} (samples {idx.tolist()})")
            terms.total.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            it += 1
            log.steps.append({"iter": it, "epoch": epoch, "lr": lr, **terms.as_floats()})
            if cfg.log_every and it % cfg.log_every == 0:
                logger.info("iter %d epoch %d loss %.5f l_mp %.5f", it, epoch,
                            log.steps[-1]["loss"], log.steps[-1]["l_mp"])
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            res = evaluate(eval_dataset or dataset, model, with_ssim=False)
            log.evals.append({"epoch": epoch, **res.aggregate})
        if run_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(run_dir / "checkpoints" / f"epoch_{epoch:04d}.pt", model,
                            {"epoch": epoch, "train": cfg.to_dict()})
    if run_dir is not None and not dry_run:
        save_checkpoint(run_dir / "checkpoints" / "final.pt", model,
                        {"epoch": cfg.epochs, "train": cfg.to_dict()})
        log.write_csv(run_dir / "runlog.csv")
    return model, log


# -- evaluation -------------------------------------------------------------

@dataclass
class EvalResult:
    per_sample: list
    aggregate: dict
    labels: dict = field(default_factory=dict)
    curve: list = field(default_factory=list)


def frame_labels(n):
    labels = [f"frame_{j + 1}" for j in range(n)]
    labels[0], labels[n // 2], labels[-1] = "F_i", "F_m", "F_f"
    return labels


def _predictor(model):
    if isinstance(model, torch.nn.Module):
        dtype = next(model.parameters()).dtype

        def fn(x):
            model.eval()
            with torch.no_grad():
                return model(x.to(dtype)).frames().to(torch.float64)
        return fn
    return model


def rotation_bins(magnitudes, edges):
    """Partition sample indices by rotation magnitude; the last bin is closed."""
    magnitudes = np.asarray(magnitudes, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    pos = np.clip(np.searchsorted(edges, magnitudes, side="right") - 1, 0, len(edges) - 2)
    return [np.flatnonzero(pos == b).tolist() for b in range(len(edges) - 1)]


def evaluate(dataset, model, batch_size=8, with_ssim=True, bin_edges=None):
    """Order-invariant PSNR/SSIM for every sample plus per-position means.

    ``model`` may be a network or any callable mapping a blurred batch
    ``(N, 3, H, W)`` to frames ``(N, n, 3, H, W)``.
    """
    predict = _predictor(model)
    n = dataset.n
    per_sample = []
    for start in range(0, len(dataset), batch_size):
        x = dataset.blurred[start:start + batch_size]
        pred = predict(x)
        if pred.shape[1] != n:
            raise ValueError(f"model produced {pred.shape[1]} frames, dataset has {n}")
        pred = pred.clamp(0.0, 1.0).permute(0, 1, 3, 4, 2).cpu().numpy().astype(np.float64)
        gt = dataset.targets[start:start + batch_size].permute(0, 1, 3, 4, 2).numpy().astype(np.float64)
        blur = x.permute(0, 2, 3, 1).numpy().astype(np.float64)
        for i in range(pred.shape[0]):
            rep = order_invariant_eval(list(pred[i]), list(gt[i]), with_ssim=with_ssim)
            rep.extra["blur_psnr_middle"] = psnr(blur[i], gt[i][n // 2])
            per_sample.append(rep)
    labels = frame_labels(n)
    agg = {}
    for j, name in enumerate(labels):
        agg[f"psnr_{name}"] = float(np.mean([r.psnr[j] for r in per_sample]))
        if with_ssim:
            agg[f"ssim_{name}"] = float(np.mean([r.ssim[j] for r in per_sample]))
    agg["psnr_mean"] = float(np.mean([r.mean_psnr for r in per_sample]))
    agg["blur_psnr_middle"] = float(np.mean([r.extra["blur_psnr_middle"] for r in per_sample]))
    agg["num_samples"] = len(per_sample)
    result = EvalResult(per_sample=per_sample, aggregate=agg)
    if dataset.rotation is not None:
        for r, mag in zip(per_sample, dataset.rotation):
            r.extra["rotation_magnitude"] = float(mag)
        if bin_edges is None:
            bin_edges = np.linspace(0.0, 10.0 * math.sqrt(3.0), 7)
        for b, idx in enumerate(rotation_bins(dataset.rotation, bin_edges)):
            result.curve.append({
                "bin_lo": float(bin_edges[b]), "bin_hi": float(bin_edges[b + 1]),
                "count": len(idx),
                "psnr_mean": float(np.mean([per_sample[i].mean_psnr for i in idx])) if idx else float("nan"),
            })
    return result


def cross_evaluate(model, dataset, train_label, eval_label=None, **kw):
    result = evaluate(dataset, model, **kw)
    result.labels = {"train": train_label, "eval": eval_label or dataset.label}
    return result


def write_eval_reports(result, out_dir, ids=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(result.per_sample[0].psnr)
    labels = frame_labels(n)
    with open(out_dir / "per_sample.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "direction"] + [f"psnr_{l}" for l in labels]
                   + [f"ssim_{l}" for l in labels] + ["blur_psnr_middle", "rotation_magnitude"])
        for i, r in enumerate(result.per_sample):
            w.writerow([ids[i] if ids else i, r.direction] + r.psnr + r.ssim
                       + [r.extra.get("blur_psnr_middle"), r.extra.get("rotation_magnitude", "")])
    with open(out_dir / "aggregate.json", "w") as f:
        json.dump({"labels": result.labels, "aggregate": result.aggregate,
                   "rotation_curve": result.curve}, f, indent=2)
    if result.curve:
        with open(out_dir / "psnr_vs_rotation.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(result.curve[0]))
            w.writeheader()
            w.writerows(result.curve)
    return out_dir
