"""Parameter-holding building blocks on top of :mod:`steam_eeg.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import BatchNormState, Tensor, init_params


class Module:
    """Minimal container: parameters are Tensor attributes, children are Modules.

    Parameter names are dotted attribute paths and iterate in definition
    order, which keeps checkpoints and optimiser state deterministic.
    """

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor, BatchNormState)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor, BatchNormState)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name, value in self._children():
            if isinstance(value, BatchNormState):
                yield f"{prefix}{name}.running_mean", value, "running_mean"
                yield f"{prefix}{name}.running_var", value, "running_var"
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode=True):
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, holder, attr in self.named_buffers():
            state[name] = np.array(getattr(holder, attr), copy=True)
        return state

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        buffers = {name: (holder, attr) for name, holder, attr in self.named_buffers()}
        missing = (set(params) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=p.data.dtype)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.copy()
        for name, (holder, attr) in buffers.items():
            setattr(holder, attr, np.asarray(state[name], dtype=float).copy())


class Dense(Module):
    def __init__(self, n_in, n_out, seed=0, name="dense", zero=False):
        scheme = "zeros" if zero else "glorot-uniform"
        self.weight = init_params((n_in, n_out), scheme, seed, f"{name}.weight")
        self.bias = init_params((n_out,), "zeros", seed, f"{name}.bias")

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class Conv1d(Module):
    def __init__(self, n_in, n_out, kernel, seed=0, name="conv1d"):
        self.weight = init_params((n_out, n_in, kernel), "glorot-uniform", seed, f"{name}.weight")
        self.bias = init_params((n_out,), "zeros", seed, f"{name}.bias")

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, n_in, n_out, kernel=3, stride=1, seed=0, name="conv2d", bias=True):
        self.weight = init_params((n_out, n_in, kernel, kernel), "glorot-uniform", seed, f"{name}.weight")
        self.bias = init_params((n_out,), "zeros", seed, f"{name}.bias") if bias else None
        self.stride = stride

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.9, eps=1e-5, seed=0, name="bn"):
        self.gamma = init_params((channels,), "ones", seed, f"{name}.gamma")
        self.beta = init_params((channels,), "zeros", seed, f"{name}.beta")
        self.state = BatchNormState(channels, momentum, eps)

    def __call__(self, x):
        return T.batch_norm(x, self.gamma, self.beta, self.state, training=self.training)
