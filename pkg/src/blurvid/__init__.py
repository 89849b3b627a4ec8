"""Recover a short frame sequence from a single motion-blurred image."""
from .blur_synth import BlurSample, SynthConfig, generate_dynamic_sample, generate_rotational_sample
from .estimator import BlurVideoRestorer
from .network import NetworkConfig, VideoRestorationNet, load_checkpoint, save_checkpoint
from .objectives import LossWeights, order_invariant_eval, psnr, ssim
from .trainer import FrameDataset, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BlurSample", "SynthConfig", "generate_dynamic_sample", "generate_rotational_sample",
    "BlurVideoRestorer", "NetworkConfig", "VideoRestorationNet", "load_checkpoint",
    "save_checkpoint", "LossWeights", "order_invariant_eval", "psnr", "ssim",
    "FrameDataset", "TrainConfig", "evaluate", "train",
]
