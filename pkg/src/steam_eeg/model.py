"""Full classifier: decomposed components -> 1D branches -> field image -> 2D ResNet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cnn1d import BranchConfig, FeatureExtractor, grid_regions, region_features
from .dataio import Dataset, znormalize
from .errors import ConfigError, ShapeError
from .layers import Dense, Module
from .mtf import MtfConfig, MtfStage
from .resnet2d import ResNet2d, ResNetConfig
from .ssa import SsaConfig, decompose
from .tensor import Tensor

ABLATIONS = ("no_ssa", "no_mtf", "no_ccsa")


@dataclass(frozen=True)
class NetConfig:
    branch: BranchConfig = field(default_factory=BranchConfig)
    stages: tuple = ((16, 2), (32, 2), (64, 2))
    attention_after_stage: tuple = (True, True, True)
    stem_stride: int = 2
    ccsa_dim: int = 16
    fusion: bool = True
    standardize_images: bool = True

    def resnet(self, classes, fusion_dim) -> ResNetConfig:
        return ResNetConfig(tuple(map(tuple, self.stages)), tuple(self.attention_after_stage), classes,
                            self.stem_stride, self.ccsa_dim, fusion_dim if self.fusion else 0)


def check_ablation(ablation) -> frozenset:
    ablation = frozenset(ablation or ())
    unknown = ablation - set(ABLATIONS)
    if unknown:
        raise ConfigError(f"unknown ablation(s) {sorted(unknown)}; choose from {ABLATIONS}")
    return ablation


def branch_parameter_count(cfg: BranchConfig) -> int:
    total, prev = 0, 1
    for width, kernel in cfg.layers:
        total += prev * width * kernel + width
        prev = width
    attended = cfg.layers if cfg.attention_every_layer else cfg.layers[-1:]
    for width, _ in attended:
        total += width * cfg.attention_dim + cfg.attention_dim + cfg.attention_dim + 1
    return total


def matched_single_branch(cfg: BranchConfig, branches=3) -> BranchConfig:
    """Widen one branch so its parameter count is closest to ``branches`` copies of ``cfg``."""
    target = branches * branch_parameter_count(cfg)
    factors = np.arange(1.0, 4.0, 0.01)
    best = min(factors, key=lambda f: abs(branch_parameter_count(cfg.widened(f)) - target))
    return cfg.widened(float(best))


def standardize_images(images, eps=1e-12):
    """Zero mean, unit variance per image; constant images map to zeros."""
    images = np.asarray(images, dtype=float)
    axes = tuple(range(1, images.ndim))
    centred = images - images.mean(axis=axes, keepdims=True)
    return centred / (images.std(axis=axes, keepdims=True) + eps)


def prepare_inputs(dataset: Dataset, ssa: SsaConfig = SsaConfig(), ablation=(), normalize=True) -> np.ndarray:
    """Stack model inputs as (B, K, C, N): K=3 SSA components, or K=1 raw series under no_ssa."""
    ablation = check_ablation(ablation)
    out = []
    for item in dataset.items:
        values = znormalize(item).values if normalize else item.values
        if "no_ssa" in ablation:
            out.append(values[None])
        else:
            out.append(decompose(values, ssa).stacked())
    return np.asarray(out, dtype=float)


class SteamModel(Module):
    def __init__(self, channels, length, classes, net: NetConfig = NetConfig(), mtf: MtfConfig = MtfConfig(),
                 ablation=(), seed=0):
        self.ablation = check_ablation(ablation)
        self.channels, self.length, self.classes = channels, length, classes
        self.net = net
        branch = net.branch
        n_comp = 3
        if "no_ssa" in self.ablation:
            branch, n_comp = matched_single_branch(net.branch), 1
        self.extractor = FeatureExtractor(branch, n_comp, seed)
        dim = self.extractor.feature_dim
        pooled_len = length
        for _ in branch.layers:
            pooled_len = pooled_len // branch.pool if branch.pool > 1 else pooled_len
        self.feature_length = pooled_len
        if "no_mtf" in self.ablation:
            self.mtf = None
            self.resnet = None
            self.head = Dense(dim, classes, seed, "head")
        else:
            self.regions = grid_regions(channels, pooled_len, mtf.segments)
            self.mtf = MtfStage(channels, dim, mtf, seed)
            self.resnet = ResNet2d(net.resnet(classes, dim), seed)
            if "no_ccsa" in self.ablation:
                self.resnet.set_attention(False)
            self.head = None

    @property
    def n_components(self):
        return self.extractor.n_components

    def set_beta(self, beta):
        if self.mtf is not None:
            self.mtf.set_beta(beta)

    def images(self, maps, with_levels=False):
        """Field images (B, H, W) from attended 1D maps; no gradient flows through inference.

        Returns (images, converged) or, with ``with_levels``, also the
        expected node levels (B, M).
        """
        feats = region_features(maps, self.regions)
        bsz = feats.shape[0]
        feats = feats.reshape(bsz, self.channels, self.mtf.config.segments, -1)
        imgs, marginals, converged = self.mtf.images(feats)
        if with_levels:
            return imgs, converged, marginals @ self.mtf.graph.levels
        return imgs, converged

    def forward(self, inputs, keep=False):
        """Logits (B, K) for inputs (B, K_comp, C, N); with ``keep`` also return intermediates."""
        x = np.asarray(inputs, dtype=float)
        if x.ndim != 4 or x.shape[1:] != (self.n_components, self.channels, self.length):
            raise ShapeError(f"expected (B, {self.n_components}, {self.channels}, {self.length}), got {x.shape}")
        maps, pooled, attn = self.extractor(Tensor(x))
        extra = {"attention_1d": attn, "maps_1d": maps}
        if self.mtf is None:
            logits = self.head(pooled)
        else:
            imgs, converged = self.images(maps)
            extra["images"], extra["converged"] = imgs, converged
            logits = self.resnet(self._resnet_input(imgs), pooled if self.resnet.cfg.fusion_dim else None)
        return (logits, extra) if keep else logits

    __call__ = forward

    def _resnet_input(self, imgs):
        # rendered fields are low contrast around mid grey; without this the
        # class signal is a small offset that batch-norm running statistics
        # cannot track between train and eval mode
        return standardize_images(imgs) if self.net.standardize_images else imgs

    def feature_maps(self, inputs):
        """Per-layer 2D feature maps for visualisation: list of (name, (B, C, H, W))."""
        if self.mtf is None:
            raise ConfigError("model has no image stage")
        with T.no_grad():
            maps, _, _ = self.extractor(Tensor(np.asarray(inputs, dtype=float)))
            imgs, _ = self.images(maps)
            _, _, layers = self.resnet.features(self._resnet_input(imgs), keep_maps=True)
        return imgs, layers
