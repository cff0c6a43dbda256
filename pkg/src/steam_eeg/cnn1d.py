"""Parallel 1D convolutional branches with cross-channel attention.

Each decomposed component (trend, seasonal, noise) runs through its own
branch. A branch applies the same convolution stack to every EEG channel, so
its maps have shape (B, C, F, T). Attention scores every channel from its
time-averaged feature vector with shared weights and softmax-normalises the
scores across channels; the maps are then rescaled per channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, RegionError, ShapeError
from .layers import Conv1d, Dense, Module
from .tensor import Tensor

COMPONENT_NAMES = ("trend", "seasonal", "noise")


@dataclass(frozen=True)
class BranchConfig:
    layers: tuple = ((16, 7), (32, 5))
    pool: int = 2
    activation: str = "relu"
    attention_dim: int = 32
    attention_every_layer: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a branch needs at least one layer")
        for width, kernel in self.layers:
            if kernel % 2 == 0:
                raise ConfigError(f"kernel sizes must be odd, got {kernel}")
            if width < 1:
                raise ConfigError("layer widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def widened(self, factor: float) -> "BranchConfig":
        layers = tuple((max(1, int(round(w * factor))), k) for w, k in self.layers)
        return BranchConfig(layers, self.pool, self.activation, self.attention_dim, self.attention_every_layer)

    @property
    def out_channels(self) -> int:
        return self.layers[-1][0]


class CrossChannelAttention(Module):
    """A = softmax_c(W_a^T tanh(W_h mean_t(h^c) + b_h)); attended maps A_c * h^c."""

    def __init__(self, features, hidden=32, seed=0, name="attn"):
        self.proj = Dense(features, hidden, seed, f"{name}.proj")
        self.score = Dense(hidden, 1, seed, f"{name}.score")
        self.enabled = True

    def weights(self, maps):
        bsz, ch = maps.shape[:2]
        if not self.enabled:
            return Tensor(np.full((bsz, ch), 1.0 / ch))
        desc = maps.mean(axis=3)
        hidden = T.tanh(self.proj(desc))
        scores = T.reshape(self.score(hidden), (bsz, ch))
        return T.softmax(scores, axis=1)

    def __call__(self, maps):
        if maps.ndim != 4:
            raise ShapeError(f"attention expects (B, C, F, T) maps, got {maps.shape}")
        bsz, ch = maps.shape[:2]
        attn = self.weights(maps)
        if not self.enabled:
            return attn, maps
        return attn, maps * T.reshape(attn, (bsz, ch, 1, 1))


class Branch(Module):
    def __init__(self, cfg: BranchConfig = BranchConfig(), seed=0, name="branch"):
        self.cfg = cfg
        widths = [1] + [w for w, _ in cfg.layers]
        self.convs = [Conv1d(widths[i], w, k, seed, f"{name}.conv{i}") for i, (w, k) in enumerate(cfg.layers)]
        n_attn = len(cfg.layers) if cfg.attention_every_layer else 1
        first = len(cfg.layers) - n_attn
        self.attention = [CrossChannelAttention(cfg.layers[first + i][0], cfg.attention_dim, seed,
                                                f"{name}.attn{first + i}") for i in range(n_attn)]

    def _act(self, x):
        return T.relu(x) if self.cfg.activation == "relu" else T.tanh(x)

    def layer_maps(self, x, pool=True):
        """Per-layer outputs for input (B, C, N); attention is not applied."""
        x = _as_tensor3(x)
        bsz, ch, n = x.shape
        h = T.reshape(x, (bsz * ch, 1, n))
        outputs = []
        for conv in self.convs:
            h = self._act(conv(h))
            if pool and self.cfg.pool > 1:
                h = T.max_pool1d(h, self.cfg.pool)
            outputs.append(T.reshape(h, (bsz, ch) + h.shape[1:]))
        return outputs

    def __call__(self, x):
        """Return (attended final maps (B, C, F, T), attention weights per attended layer)."""
        x = _as_tensor3(x)
        bsz, ch, n = x.shape
        largest = max(k for _, k in self.cfg.layers)
        if n < largest:
            raise ShapeError(f"component length {n} shorter than kernel {largest}")
        h = T.reshape(x, (bsz * ch, 1, n))
        weights = []
        n_layers = len(self.convs)
        first_attended = n_layers - len(self.attention)
        for i, conv in enumerate(self.convs):
            h = self._act(conv(h))
            if self.cfg.pool > 1:
                h = T.max_pool1d(h, self.cfg.pool)
            if i >= first_attended:
                maps = T.reshape(h, (bsz, ch) + h.shape[1:])
                a, maps = self.attention[i - first_attended](maps)
                weights.append(a)
                h = T.reshape(maps, (bsz * ch,) + maps.shape[2:])
        return T.reshape(h, (bsz, ch) + h.shape[1:]), weights


def _as_tensor3(x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"branch input must be (B, C, N), got {x.shape}")
    return x


class FeatureExtractor(Module):
    """One branch per component; the raw-series ablation uses a single widened branch."""

    def __init__(self, cfg: BranchConfig = BranchConfig(), n_components=3, seed=0, name="extractor"):
        self.n_components = n_components
        self.branches = [Branch(cfg, seed, f"{name}.{_component_name(i, n_components)}")
                         for i in range(n_components)]

    @property
    def feature_dim(self):
        return sum(b.cfg.out_channels for b in self.branches)

    def set_attention(self, enabled: bool):
        for b in self.branches:
            for a in b.attention:
                a.enabled = enabled

    def __call__(self, components):
        """components (B, K, C, N) -> (list of attended maps, pooled (B, sum F), weights)."""
        comps = components if isinstance(components, Tensor) else Tensor(components)
        if comps.ndim != 4 or comps.shape[1] != self.n_components:
            raise ShapeError(f"expected (B, {self.n_components}, C, N) components, got {comps.shape}")
        maps, weights = [], []
        for k, branch in enumerate(self.branches):
            m, w = branch(comps[:, k])
            maps.append(m)
            weights.append(w)
        pooled = T.concat([m.mean(axis=(1, 3)) for m in maps], axis=1)
        return maps, pooled, weights


def _component_name(i, n):
    return COMPONENT_NAMES[i] if n == 3 else f"raw{i}"


def grid_regions(channels, length, segments):
    """Regions for a channels x segments grid as (channel, start, stop) triples, row-major."""
    if length < segments:
        raise RegionError(f"cannot cut {length} time steps into {segments} segments")
    bounds = [(k * length) // segments for k in range(segments + 1)]
    return [((c,), bounds[t], bounds[t + 1]) for c in range(channels) for t in range(segments)]


def region_features(maps, regions) -> np.ndarray:
    """Mean-pool attended maps over each region and concatenate across branches.

    ``maps`` is a list of (B, C, F_k, T) arrays or tensors (one per branch);
    ``regions`` a list of (channels, start, stop). Returns (B, M, sum F_k).
    """
    arrays = [np.asarray(getattr(m, "data", m)) for m in maps]
    out = []
    for channels, start, stop in regions:
        channels = list(channels)
        if not channels or stop <= start:
            raise RegionError(f"empty region {channels}, [{start}, {stop})")
        parts = [a[:, channels, :, start:stop].mean(axis=(1, 3)) for a in arrays]
        out.append(np.concatenate(parts, axis=1))
    return np.stack(out, axis=1)
