"""Seeded synthetic datasets for smoke tests and learnability checks."""

from __future__ import annotations

import numpy as np

from .dataio import Dataset, MultichannelSeries
from .tensor import param_rng


def frequency_dataset(n_train=200, n_test=200, length=128, channels=2, cycles=(4, 8), noise=0.3, seed=0):
    """Two-class sinusoids with ``cycles[k]`` periods per window, random phase, white noise.

    Classes alternate so both splits are balanced. Returns (train, test).
    """
    rng = param_rng(seed, "synthetic.frequency")
    t = np.arange(length) / length

    def make(count, tag):
        items = []
        for i in range(count):
            label = i % len(cycles)
            phase = rng.uniform(0, 2 * np.pi, size=(channels, 1))
            values = np.sin(2 * np.pi * cycles[label] * t + phase) + noise * rng.standard_normal((channels, length))
            items.append(MultichannelSeries(values, label, f"{tag}{i}"))
        return Dataset(items, len(cycles), tag, [str(c) for c in cycles], "synthetic")

    return make(n_train, "train"), make(n_test, "test")
