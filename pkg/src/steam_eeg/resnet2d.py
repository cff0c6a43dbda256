"""2D residual network with cross-channel split attention over field images."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import BatchNorm, Conv2d, Dense, Module
from .tensor import Tensor


@dataclass(frozen=True)
class ResNetConfig:
    stages: tuple = ((16, 2), (32, 2), (64, 2))
    attention_after_stage: tuple = (True, True, True)
    classes: int = 2
    stem_stride: int = 2
    attention_dim: int = 16
    fusion_dim: int = 0

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("ResNet needs at least one stage")
        if self.classes < 2:
            raise ConfigError("classes must be >= 2")
        if len(self.attention_after_stage) != len(self.stages):
            raise ConfigError("attention_after_stage needs one flag per stage")
        if self.stem_stride not in (1, 2):
            raise ConfigError("stem_stride must be 1 or 2")
        for ch, blocks in self.stages:
            if ch < 1 or blocks < 1:
                raise ConfigError(f"bad stage {(ch, blocks)}")

    @property
    def downsampling(self) -> int:
        # the first stage keeps resolution, every later stage halves it
        return self.stem_stride * 2 ** (len(self.stages) - 1)


class ResidualBlock(Module):
    """out = relu(BN(conv(relu(BN(conv(x))))) + shortcut(x))."""

    def __init__(self, n_in, n_out, stride=1, seed=0, name="block"):
        self.n_in = n_in
        self.conv1 = Conv2d(n_in, n_out, 3, stride, seed, f"{name}.conv1", bias=False)
        self.bn1 = BatchNorm(n_out, seed=seed, name=f"{name}.bn1")
        self.conv2 = Conv2d(n_out, n_out, 3, 1, seed, f"{name}.conv2", bias=False)
        self.bn2 = BatchNorm(n_out, seed=seed, name=f"{name}.bn2")
        if stride != 1 or n_in != n_out:
            self.shortcut = Conv2d(n_in, n_out, 1, stride, seed, f"{name}.shortcut")
        else:
            self.shortcut = None

    def __call__(self, x):
        if x.ndim != 4 or x.shape[1] != self.n_in:
            raise ShapeError(f"block expects (B, {self.n_in}, H, W), got {x.shape}")
        h = T.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = x if self.shortcut is None else self.shortcut(x)
        return T.relu(h + skip)


class SplitAttention(Module):
    """a = softmax_c(W_a^T tanh(W_x gap(x^c) + b_x)); x_hat^c = a^c x^c.

    The descriptor of a channel is its global average, so the parameter count
    does not depend on image size.
    """

    def __init__(self, hidden=16, seed=0, name="ccsa"):
        self.proj = Dense(1, hidden, seed, f"{name}.proj")
        self.score = Dense(hidden, 1, seed, f"{name}.score")
        self.enabled = True

    def weights(self, x):
        bsz, ch = x.shape[:2]
        if not self.enabled:
            return Tensor(np.full((bsz, ch), 1.0 / ch))
        gap = T.reshape(T.global_avg_pool(x), (bsz, ch, 1))
        scores = T.reshape(self.score(T.tanh(self.proj(gap))), (bsz, ch))
        return T.softmax(scores, axis=1)

    def __call__(self, x):
        if x.ndim != 4:
            raise ShapeError(f"split attention expects (B, C, H, W), got {x.shape}")
        a = self.weights(x)
        if not self.enabled:
            return a, x
        return a, x * T.reshape(a, x.shape[:2] + (1, 1))


class ResNet2d(Module):
    def __init__(self, cfg: ResNetConfig = ResNetConfig(), seed=0, name="resnet", zero_head=False):
        self.cfg = cfg
        first = cfg.stages[0][0]
        self.stem = Conv2d(1, first, 3, cfg.stem_stride, seed, f"{name}.stem", bias=False)
        self.stem_bn = BatchNorm(first, seed=seed, name=f"{name}.stem_bn")
        self.blocks = []
        self.attention = []
        n_in = first
        for s, (ch, count) in enumerate(cfg.stages):
            for b in range(count):
                stride = 2 if (s > 0 and b == 0) else 1
                self.blocks.append(ResidualBlock(n_in, ch, stride, seed, f"{name}.s{s}b{b}"))
                n_in = ch
            if cfg.attention_after_stage[s]:
                self.attention.append(SplitAttention(cfg.attention_dim, seed, f"{name}.ccsa{s}"))
        self.head = Dense(n_in + cfg.fusion_dim, cfg.classes, seed, f"{name}.head", zero=zero_head)

    def set_attention(self, enabled: bool):
        for a in self.attention:
            a.enabled = enabled

    def features(self, images, keep_maps=False):
        """Run stem and stages. Returns (embedding (B, C_last), attention weights, maps)."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim == 3:
            x = T.reshape(x, (x.shape[0], 1) + x.shape[1:])
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"images must be (B, H, W) or (B, 1, H, W), got {x.shape}")
        need = self.cfg.downsampling
        if min(x.shape[2:]) < need:
            raise ShapeError(f"image {x.shape[2:]} smaller than downsampling factor {need}")
        maps = []
        h = T.relu(self.stem_bn(self.stem(x)))
        if keep_maps:
            maps.append(("stem", h.data))
        weights = []
        blk = 0
        attn = iter(self.attention)
        for s, (_, count) in enumerate(self.cfg.stages):
            for _ in range(count):
                h = self.blocks[blk](h)
                blk += 1
            if self.cfg.attention_after_stage[s]:
                a, h = next(attn)(h)
                weights.append(a)
            if keep_maps:
                maps.append((f"stage{s}", h.data))
        return T.global_avg_pool(h), weights, maps

    def __call__(self, images, fused=None):
        """Class logits (B, K); ``fused`` (B, fusion_dim) joins the embedding before the head."""
        emb, _, _ = self.features(images)
        if self.cfg.fusion_dim:
            if fused is None or fused.shape[-1] != self.cfg.fusion_dim:
                raise ShapeError(f"head expects {self.cfg.fusion_dim} fused features")
            emb = T.concat([emb, fused], axis=1)
        return self.head(emb)
