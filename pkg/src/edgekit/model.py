"""The two-stage-fusion edge network.

A five-stage VGG-style backbone (strides 1/2/4/8/16, dilated final
stage) feeds two fusion stages. The first is a top-down cascade: every
stage is projected to 21 channels with a 1x1 conv plus group norm, then
coarse fused maps are upsampled and averaged into the next finer stage.
The second produces the final map from the five full-resolution side
logits: a 1x1 conv supplies one weight per scale while a small conv
stack with a per-pixel softmax over the five scales supplies spatial
weights, so each pixel of the output is a doubly-weighted sum of the
five side responses.

Checkpoints use a little-endian binary format with magic ``CTFN`` and a
config block, and round-trip weights bit-exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from edgekit.tensor import (
    Tensor,
    add,
    bilinear_resize,
    concat,
    conv2d,
    group_norm,
    max_pool2,
    mul,
    relu,
    scale,
    sigmoid,
    softmax_axis,
)

__all__ = [
    "BackboneConfig",
    "EdgeNet",
    "ModelConfig",
    "Prediction",
    "load_checkpoint",
    "save_checkpoint",
]

FUSE_CHANNELS = 21
FUSE_NORM_GROUPS = 3  # 21 channels -> 3 groups of 7
NUM_STAGES = 5
STRIDES = (1, 2, 4, 8, 16)


@dataclass(frozen=True)
class BackboneConfig:
    """Five conv stages; four 2x2 pools between them; final stage dilated."""

    widths: tuple[int, ...]
    layers: tuple[int, ...]
    dilation: int = 2

    def __post_init__(self):
        if len(self.widths) != NUM_STAGES or len(self.layers) != NUM_STAGES:
            raise ValueError("backbone needs exactly 5 stage widths and layer counts")
        if self.dilation < 1:
            raise ValueError("stage-5 dilation must be >= 1")


_PRESETS = {
    "vgg16-shape": BackboneConfig(widths=(64, 128, 256, 512, 512), layers=(2, 2, 3, 3, 3)),
    "tiny": BackboneConfig(widths=(8, 16, 32, 64, 64), layers=(1, 1, 2, 2, 2)),
}


@dataclass(frozen=True)
class ModelConfig:
    preset: str
    backbone: BackboneConfig
    c_mid: int = 16  # channel width of the spatial-weighting stack

    @classmethod
    def from_preset(cls, name: str, c_mid: int = 16) -> "ModelConfig":
        if name not in _PRESETS:
            raise ValueError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}")
        return cls(preset=name, backbone=_PRESETS[name], c_mid=c_mid)


class Conv2dLayer:
    def __init__(self, name, cin, cout, k, rng, padding=0, dilation=1, bias=True, dtype=np.float32):
        std = math.sqrt(2.0 / (cin * k * k))
        self.name = name
        self.weight = Tensor((rng.standard_normal((cout, cin, k, k)) * std).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
        self.padding = padding
        self.dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, padding=self.padding, dilation=self.dilation)

    def named_params(self):
        yield f"{self.name}.weight", self.weight
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias


class GroupNormLayer:
    def __init__(self, name, channels, groups, dtype=np.float32, eps=1e-5):
        self.name = name
        self.groups = groups
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta, self.eps)

    def named_params(self):
        yield f"{self.name}.gamma", self.gamma
        yield f"{self.name}.beta", self.beta


@dataclass
class Prediction:
    side_probs: list[Tensor]
    fused_prob: Tensor
    side_logits: list[Tensor] = field(default_factory=list)
    fused_logit: Tensor | None = None


class EdgeNet:
    """Backbone + two fusion stages + per-stage side heads."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        bb = config.backbone

        self.stages: list[list[Conv2dLayer]] = []
        cin = 3
        for s, (width, count) in enumerate(zip(bb.widths, bb.layers), start=1):
            dil = bb.dilation if s == NUM_STAGES else 1
            stage = []
            for l in range(count):
                stage.append(
                    Conv2dLayer(f"backbone.s{s}.c{l}", cin, width, 3, rng, padding=dil, dilation=dil, dtype=dtype)
                )
                cin = width
            self.stages.append(stage)

        self.lateral = [
            Conv2dLayer(f"fuse1.lateral{s}", bb.widths[s - 1], FUSE_CHANNELS, 1, rng, dtype=dtype)
            for s in range(1, NUM_STAGES + 1)
        ]
        self.norms = [
            GroupNormLayer(f"fuse1.norm{s}", FUSE_CHANNELS, FUSE_NORM_GROUPS, dtype=dtype)
            for s in range(1, NUM_STAGES + 1)
        ]
        self.heads = [
            Conv2dLayer(f"head{s}", FUSE_CHANNELS, 1, 1, rng, dtype=dtype) for s in range(1, NUM_STAGES + 1)
        ]
        cm = config.c_mid
        self.attn = [
            Conv2dLayer("fuse2.attn0", NUM_STAGES, cm, 3, rng, padding=1, dtype=dtype),
            Conv2dLayer("fuse2.attn1", cm, cm, 3, rng, padding=1, dtype=dtype),
            Conv2dLayer("fuse2.attn2", cm, NUM_STAGES, 3, rng, padding=1, dtype=dtype),
        ]
        # no bias: the fused map is a pure doubly-weighted sum of the inputs;
        # 1/L init makes the fusion start from the plain side-output average
        self.channel_weight = Conv2dLayer("fuse2.channel", NUM_STAGES, 1, 1, rng, bias=False, dtype=dtype)
        self.channel_weight.weight.data = np.full_like(
            self.channel_weight.weight.data, 1.0 / NUM_STAGES
        )

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        for stage in self.stages:
            for layer in stage:
                yield from layer.named_params()
        for group in (self.lateral, self.norms, self.heads, self.attn):
            for layer in group:
                yield from layer.named_params()
        yield from self.channel_weight.named_params()

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for t in self.parameters():
            t.grad = None

    def count_params(self) -> dict:
        total = 0
        non_backbone = 0
        for name, t in self.named_parameters():
            total += t.size
            if not name.startswith("backbone."):
                non_backbone += t.size
        return {"total": total, "non_backbone": non_backbone}

    # -- forward pieces -----------------------------------------------------

    def extract_features(self, image: Tensor) -> list[Tensor]:
        """Five per-stage features at strides 1/2/4/8/16 (ceil sizes)."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected [N,3,H,W] image, got {image.shape}")
        h, w = image.shape[2], image.shape[3]
        if h < 16 or w < 16:
            raise ValueError(f"image must be at least 16x16, got {h}x{w}")
        feats = []
        x = image
        for s, stage in enumerate(self.stages):
            if s > 0:
                x = max_pool2(x)
            for layer in stage:
                x = relu(layer(x))
            feats.append(x)
        return feats

    def fuse_top_down(self, feats: list[Tensor]) -> list[Tensor]:
        """Project every stage to 21 channels, then cascade coarse into fine.

        Walking from the coarsest stage down, each fused map is upsampled
        to the next finer stage's size and averaged with that stage's
        normalized projection.
        """
        if len(feats) != NUM_STAGES:
            raise ValueError(f"expected {NUM_STAGES} features, got {len(feats)}")
        proj = [self.norms[i](self.lateral[i](feats[i])) for i in range(NUM_STAGES)]
        fused = [None] * NUM_STAGES
        fused[NUM_STAGES - 1] = proj[NUM_STAGES - 1]
        for i in range(NUM_STAGES - 2, -1, -1):
            up = bilinear_resize(fused[i + 1], proj[i].shape[2], proj[i].shape[3])
            fused[i] = scale(add(up, proj[i]), 0.5)
        return fused

    def side_logits(self, fused_feats: list[Tensor], out_h: int, out_w: int) -> list[Tensor]:
        """Per stage: 1x1 conv to one channel, upsampled to output size."""
        return [
            bilinear_resize(self.heads[i](fused_feats[i]), out_h, out_w) for i in range(NUM_STAGES)
        ]

    def spatial_weights(self, stacked: Tensor) -> Tensor:
        """Per-pixel softmax over the five scales from the small conv stack."""
        h = relu(self.attn[0](stacked))
        h = relu(self.attn[1](h))
        return softmax_axis(self.attn[2](h), axis=1)

    def fuse_pixel_weighted(self, stacked: Tensor) -> Tensor:
        """Weighted sum of the five side maps (channel x spatial weights)."""
        if stacked.ndim != 4 or stacked.shape[1] != NUM_STAGES:
            raise ValueError(f"expected [N,{NUM_STAGES},H,W] stacked side maps, got {stacked.shape}")
        ws = self.spatial_weights(stacked)
        return self.channel_weight(mul(stacked, ws))

    def forward(self, image: Tensor) -> Prediction:
        h, w = image.shape[2], image.shape[3]
        feats = self.extract_features(image)
        fused_feats = self.fuse_top_down(feats)
        side = self.side_logits(fused_feats, h, w)
        fused_logit = self.fuse_pixel_weighted(concat(side, axis=1))
        return Prediction(
            side_probs=[sigmoid(s) for s in side],
            fused_prob=sigmoid(fused_logit),
            side_logits=side,
            fused_logit=fused_logit,
        )

    def __call__(self, image: Tensor) -> Prediction:
        return self.forward(image)


# ---------------------------------------------------------------------------
# checkpoint format

CHECKPOINT_MAGIC = b"CTFN"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: EdgeNet, path: str) -> None:
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        name = cfg.preset.encode("utf-8")
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(struct.pack("<5I", *cfg.backbone.widths))
        fh.write(struct.pack("<5I", *cfg.backbone.layers))
        fh.write(struct.pack("<I", cfg.backbone.dilation))
        fh.write(struct.pack("<I", cfg.c_mid))
        params = list(model.named_parameters())
        fh.write(struct.pack("<I", len(params)))
        for name, t in params:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("checkpoint truncated")
    return buf


def load_checkpoint(path: str, config: ModelConfig | None = None) -> EdgeNet:
    """Rebuild a model from a checkpoint, optionally enforcing a config."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path!r} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (nlen,) = struct.unpack("<I", _read_exact(fh, 4))
        preset = _read_exact(fh, nlen).decode("utf-8")
        widths = struct.unpack("<5I", _read_exact(fh, 20))
        layers = struct.unpack("<5I", _read_exact(fh, 20))
        (dilation,) = struct.unpack("<I", _read_exact(fh, 4))
        (c_mid,) = struct.unpack("<I", _read_exact(fh, 4))
        stored = ModelConfig(
            preset=preset,
            backbone=BackboneConfig(widths=widths, layers=layers, dilation=dilation),
            c_mid=c_mid,
        )
        if config is not None and stored != config:
            raise ValueError(
                f"checkpoint config mismatch: stored preset {stored.preset!r} "
                f"(widths {stored.backbone.widths}, c_mid {stored.c_mid}), "
                f"requested {config.preset!r}"
            )
        model = EdgeNet(stored, seed=0)
        table = dict(model.named_parameters())
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(_read_exact(fh, 4 * n), dtype="<f4").reshape(dims)
            if name not in table:
                raise ValueError(f"checkpoint holds unknown parameter {name!r}")
            if table[name].shape != tuple(dims):
                raise ValueError(f"parameter {name!r} shape {dims} does not match model {table[name].shape}")
            table[name].data = data.astype(np.float32).copy()
    return model
