"""Single-image to video restoration network.

One encoder feeds a middle-frame decoder and one decoder per non-middle
frame. Non-middle decoders see the encoder features after a feature
transformer (global affine STN concatenated with a local flow warp) and the
middle-frame predictions after an image transformer (STN). Every decoder
output goes through a residual refining block.

Level indexing: encoder level ``l`` (1..k) has spatial size ``H / 2**l``.
Decoder block ``b`` (1..k) works at ``H / 2**(k-b)`` and uses encoder level
``k-b`` as its skip connection (the blurred input itself at full scale).
"""
import hashlib
import json
from dataclasses import dataclass, asdict, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .warp import affine_grid_sample, local_warp

DEFAULT_CHANNELS = (32, 64, 128, 256, 256)


@dataclass
class NetworkConfig:
    k: int = 5
    n: int = 3
    channels: tuple = DEFAULT_CHANNELS
    width: float = 1.0
    use_lw: bool = True
    use_itn: bool = True
    use_refiner: bool = True
    share_decoders: bool = False
    regressor_channels: int = 32
    refiner_channels: int = 32
    dense_layers: int = 5
    negative_slope: float = 0.2
    residual_scales: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"n must be odd and >= 3, got {self.n}")
        if self.width <= 0:
            raise ValueError("width multiplier must be positive")

    def level_channels(self):
        base = list(self.channels) + [self.channels[-1]] * max(0, self.k - len(self.channels))
        return [max(4, int(round(c * self.width))) for c in base[:self.k]]

    def scaled(self, c):
        return max(4, int(round(c * self.width)))

    @property
    def middle(self):
        """0-based index of the middle frame."""
        return self.n // 2

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    def config_hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def check_input_size(h, w, k):
    m = 2 ** k
    if h % m or w % m:
        raise ValueError(f"input size {h}x{w} must be divisible by {m} (2**k with k={k})")


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1)


class Encoder(nn.Module):
    def __init__(self, channels, slope):
        super().__init__()
        blocks = []
        cin = 3
        for c in channels:
            blocks.append(nn.Sequential(
                _conv(cin, c, stride=2), nn.LeakyReLU(slope),
                _conv(c, c), nn.LeakyReLU(slope),
            ))
            cin = c
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


class DenseBlock(nn.Module):
    """Densely connected conv layers followed by a 1x1 fusion."""

    def __init__(self, cin, cout, layers, slope):
        super().__init__()
        growth = max(4, cout // 2)
        self.layers = nn.ModuleList()
        c = cin
        for _ in range(layers):
            self.layers.append(nn.Sequential(_conv(c, growth), nn.LeakyReLU(slope)))
            c += growth
        self.fuse = nn.Sequential(nn.Conv2d(c, cout, 1), nn.LeakyReLU(slope))

    def forward(self, x):
        feats = [x]
        for layer in self.layers:
            feats.append(layer(torch.cat(feats, dim=1)))
        return self.fuse(torch.cat(feats, dim=1))


class Decoder(nn.Module):
    """k upsampling blocks, each emitting an image at its scale.

    ``skip_channels[b]`` is the channel count concatenated at block ``b``.
    """

    def __init__(self, in_channels, block_channels, skip_channels, dense_layers, slope,
                 residual=False):
        super().__init__()
        self.residual = residual
        self.up_feat = nn.ModuleList()
        self.up_img = nn.ModuleList()
        self.dense = nn.ModuleList()
        self.to_img = nn.ModuleList()
        cin = in_channels
        for b, (c, cs) in enumerate(zip(block_channels, skip_channels)):
            self.up_feat.append(nn.Sequential(
                nn.ConvTranspose2d(cin, c, 4, stride=2, padding=1), nn.LeakyReLU(slope)))
            self.up_img.append(nn.ConvTranspose2d(3, 3, 4, stride=2, padding=1) if b else None)
            self.dense.append(DenseBlock(c + (3 if b else 0) + cs, c, dense_layers, slope))
            self.to_img.append(_conv(c, 3))
            cin = c
        self.out_channels = cin

    def forward(self, x, skips):
        images = []
        img = None
        for b, skip in enumerate(skips):
            parts = [self.up_feat[b](x)]
            if b:
                parts.append(self.up_img[b](img))
            parts.append(skip)
            x = self.dense[b](torch.cat(parts, dim=1))
            out = self.to_img[b](x)
            if self.residual and b:
                # each scale refines the upsampled estimate from the scale below
                out = out + F.interpolate(img, scale_factor=2, mode="bilinear", align_corners=False)
            img = out
            images.append(img)
        return images, x


class STNRegressor(nn.Module):
    """Regresses a 2x3 affine matrix; starts at the identity."""

    def __init__(self, cin, hidden, slope):
        super().__init__()
        self.body = nn.Sequential(
            _conv(cin, hidden), nn.LeakyReLU(slope),
            _conv(hidden, hidden), nn.LeakyReLU(slope),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.head = nn.Linear(hidden, 6)
        nn.init.zeros_(self.head.weight)
        with torch.no_grad():
            self.head.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))

    def forward(self, x):
        return self.head(self.body(x)).view(-1, 2, 3)


class FlowRegressor(nn.Module):
    """Per-pixel displacement (in pixels); starts at zero flow."""

    def __init__(self, cin, hidden, slope):
        super().__init__()
        self.body = nn.Sequential(_conv(cin, hidden), nn.LeakyReLU(slope))
        self.head = _conv(hidden, 2)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        return self.head(self.body(x))


class FeatureTransformer(nn.Module):
    def __init__(self, cin, hidden, use_lw, slope):
        super().__init__()
        self.stn = STNRegressor(cin, hidden, slope)
        self.lw = FlowRegressor(cin, hidden, slope) if use_lw else None

    @property
    def out_factor(self):
        return 2 if self.lw is not None else 1

    def forward(self, u):
        theta = self.stn(u)
        parts = [affine_grid_sample(u, theta)]
        flow = None
        if self.lw is not None:
            flow = self.lw(u)
            parts.append(local_warp(u, flow))
        return torch.cat(parts, dim=1), theta, flow


class Refiner(nn.Module):
    def __init__(self, feat_channels, hidden, slope):
        super().__init__()
        self.body = nn.Sequential(
            _conv(3 + feat_channels, hidden), nn.LeakyReLU(slope),
            _conv(hidden, hidden), nn.LeakyReLU(slope),
        )
        self.out = _conv(hidden, 3)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, img, feat):
        return img + self.out(self.body(torch.cat([img, feat], dim=1)))


@dataclass
class SequencePrediction:
    """Network output for a batch.

    ``scales[j]`` holds frame ``j`` at k scales (coarse to fine, before
    refinement); ``refined[j]`` is the refined full-scale frame. Transform
    dictionaries are keyed by non-middle frame index.
    """
    scales: list
    refined: list
    middle: int
    ftn_thetas: dict = field(default_factory=dict)
    itn_thetas: dict = field(default_factory=dict)
    flows: dict = field(default_factory=dict)
    itn_images: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.refined)

    def pyramids(self):
        return [s[:-1] + [r] for s, r in zip(self.scales, self.refined)]

    def frames(self):
        """Refined frames stacked to ``(N, n, 3, H, W)``."""
        return torch.stack(self.refined, dim=1)

    def consistency_thetas(self, include_itn=False):
        out = [self.ftn_thetas[j] for j in sorted(self.ftn_thetas)]
        if include_itn:
            out += [self.itn_thetas[j] for j in sorted(self.itn_thetas)]
        return out


class VideoRestorationNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or NetworkConfig()
        self.config = cfg
        k, slope = cfg.k, cfg.negative_slope
        ch = cfg.level_channels()
        hidden = cfg.scaled(cfg.regressor_channels)
        self.encoder = Encoder(ch, slope)

        # decoder block b uses encoder level k-b (1-based); the last block uses the input image
        block_ch = [ch[k - b - 1] if k - b >= 1 else ch[0] for b in range(1, k + 1)]
        enc_skip = [ch[k - b - 1] if k - b >= 1 else 3 for b in range(1, k + 1)]
        self.middle_decoder = Decoder(ch[-1], block_ch, enc_skip, cfg.dense_layers, slope,
                                      cfg.residual_scales)

        others = [j for j in range(cfg.n) if j != cfg.middle]
        self.others = others
        f = 2 if cfg.use_lw else 1
        itn_ch = 3 if cfg.use_itn else 0
        nm_skip = [(f + 1) * ch[k - b - 1] + itn_ch if k - b >= 1 else 3 + itn_ch
                   for b in range(1, k + 1)]
        n_dec = 1 if cfg.share_decoders else len(others)
        self.decoders = nn.ModuleList([
            Decoder((f + 1) * ch[-1], block_ch, nm_skip, cfg.dense_layers, slope,
                    cfg.residual_scales)
            for _ in range(n_dec)
        ])
        # ftn[i][l-1]: frame others[i], encoder level l
        self.ftn = nn.ModuleList([
            nn.ModuleList([FeatureTransformer(c, hidden, cfg.use_lw, slope) for c in ch])
            for _ in others
        ])
        # itn[i][b-1]: frame others[i], decoder block b, conditioned on the skip feature
        if cfg.use_itn:
            self.itn = nn.ModuleList([
                nn.ModuleList([STNRegressor(c, hidden, slope) for c in enc_skip])
                for _ in others
            ])
        else:
            self.itn = None
        rch = cfg.scaled(cfg.refiner_channels)
        if cfg.use_refiner:
            self.refiners = nn.ModuleList([
                Refiner(block_ch[-1], rch, slope) for _ in range(cfg.n)
            ])
        else:
            self.refiners = None

    def encode(self, x):
        check_input_size(x.shape[-2], x.shape[-1], self.config.k)
        return self.encoder(x)

    def decode_middle(self, feats, x):
        skips = list(reversed(feats[:-1])) + [x]
        return self.middle_decoder(feats[-1], skips)

    def ftn_forward(self, i, feats):
        """Feature transforms for the ``i``-th non-middle frame at every level."""
        out, thetas, flows = [], [], []
        for level, u in enumerate(feats):
            ut, theta, flow = self.ftn[i][level](u)
            out.append(ut)
            thetas.append(theta)
            flows.append(flow)
        return out, thetas, flows

    def itn_forward(self, i, middle_images, conds):
        images, thetas = [], []
        for b, (img, cond) in enumerate(zip(middle_images, conds)):
            theta = self.itn[i][b](cond)
            images.append(affine_grid_sample(img, theta))
            thetas.append(theta)
        return images, thetas

    def decode_nonmiddle(self, i, ut, it, feats, x):
        k = self.config.k
        start = torch.cat([ut[-1], feats[-1]], dim=1)
        skips = []
        for b in range(1, k + 1):
            parts = []
            if k - b >= 1:
                parts += [ut[k - b - 1], feats[k - b - 1]]
            else:
                parts.append(x)
            if it is not None:
                parts.insert(1 if k - b >= 1 else 0, it[b - 1])
            skips.append(torch.cat(parts, dim=1))
        decoder = self.decoders[0 if self.config.share_decoders else i]
        return decoder(start, skips)

    def refine(self, j, img, feat):
        if self.refiners is None:
            return img
        return self.refiners[j](img, feat)

    def forward(self, x):
        cfg = self.config
        feats = self.encode(x)
        mid_images, mid_feat = self.decode_middle(feats, x)
        scales = [None] * cfg.n
        refined = [None] * cfg.n
        scales[cfg.middle] = mid_images
        refined[cfg.middle] = self.refine(cfg.middle, mid_images[-1], mid_feat)
        pred = SequencePrediction(scales, refined, cfg.middle)
        conds = list(reversed(feats[:-1])) + [x]
        for i, j in enumerate(self.others):
            ut, thetas, flows = self.ftn_forward(i, feats)
            pred.ftn_thetas[j] = thetas
            if cfg.use_lw:
                pred.flows[j] = flows
            it = None
            if cfg.use_itn:
                it, itn_thetas = self.itn_forward(i, mid_images, conds)
                pred.itn_thetas[j] = itn_thetas
                pred.itn_images[j] = it
            images, feat = self.decode_nonmiddle(i, ut, it, feats, x)
            scales[j] = images
            refined[j] = self.refine(j, images[-1], feat)
        return pred

    @torch.no_grad()
    def predict_frames(self, x):
        """Refined frames ``(N, n, 3, H, W)`` for a batch of blurred images."""
        return self(x).frames()


def submodule_groups(model):
    """Named parameter groups used by gradient checks and reports."""
    groups = {
        "encoder": list(model.encoder.parameters()),
        "middle_decoder": list(model.middle_decoder.parameters()),
        "decoders": list(model.decoders.parameters()),
        "stn": [p for m in model.ftn for t in m for p in t.stn.parameters()],
    }
    if model.config.use_lw:
        groups["lw"] = [p for m in model.ftn for t in m for p in t.lw.parameters()]
    if model.itn is not None:
        groups["itn"] = list(model.itn.parameters())
    if model.refiners is not None:
        groups["refiner"] = list(model.refiners.parameters())
    return groups


def save_checkpoint(path, model, extra=None):
    torch.save({
        "format": "blurvid-checkpoint",
        "version": 1,
        "network_config": model.config.to_dict(),
        "config_hash": model.config.config_hash(),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }, path)


class CheckpointMismatch(ValueError):
    pass


def load_checkpoint(path, expected=None):
    """Load a model; if ``expected`` (a NetworkConfig) is given it must match."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != "blurvid-checkpoint":
        raise CheckpointMismatch(f"{path} is not a blurvid checkpoint")
    cfg_dict = dict(blob["network_config"])
    cfg = NetworkConfig(**cfg_dict)
    if expected is not None and expected.config_hash() != blob["config_hash"]:
        raise CheckpointMismatch(
            f"checkpoint config {blob['config_hash']} does not match "
            f"requested config {expected.config_hash()}")
    model = VideoRestorationNet(cfg)
    model.load_state_dict(blob["state_dict"])
    return model, blob.get("extra", {})
