"""Parameterized building blocks on top of the kernels in :mod:`ops`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tape, Tensor


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Anything exposing named parameters and batch-norm states."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            if isinstance(val, Tensor):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def named_states(self, prefix: str = "") -> Iterator[tuple[str, ops.BatchNormState]]:
        for key, val in vars(self).items():
            if isinstance(val, ops.BatchNormState):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_states(f"{prefix}{key}.")
            elif isinstance(val, list):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_states(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, dtype=np.float64):
        self.weight = Tensor(kaiming_uniform(rng, (n_in, n_out), n_in, dtype))
        self.bias = Tensor(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x, tape: Tape | None = None) -> Tensor:
        return ops.linear(x, self.weight, self.bias, tape)


class BatchNorm(Module):
    def __init__(self, channels: int, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.state = ops.BatchNormState.create(channels, dtype)

    def __call__(self, x, training: bool, tape: Tape | None = None) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.state, training, tape)


class ConvModule(Module):
    """Pointwise conv -> depthwise conv (kernel k) -> BN -> ReLU -> pointwise conv -> ReLU.

    No biases; the receptive field is ``k``.
    """

    def __init__(self, d_in: int, width: int, k: int, rng: np.random.Generator, dtype=np.float64):
        self.k = k
        self.pointwise_in = Tensor(kaiming_uniform(rng, (d_in, width, 1), d_in, dtype))
        self.depthwise = Tensor(kaiming_uniform(rng, (width, k), k, dtype))
        self.bn = BatchNorm(width, dtype)
        self.pointwise_out = Tensor(kaiming_uniform(rng, (width, width, 1), width, dtype))

    def __call__(self, x, training: bool, tape: Tape | None = None) -> Tensor:
        h = ops.conv1d(x, self.pointwise_in, tape)
        h = ops.depthwise_conv1d(h, self.depthwise, tape)
        h = ops.relu(self.bn(h, training, tape), tape)
        h = ops.conv1d(h, self.pointwise_out, tape)
        return ops.relu(h, tape)

    def conv_parameter_count(self) -> int:
        return self.pointwise_in.value.size + self.depthwise.value.size + self.pointwise_out.value.size


class MLP(Module):
    """One hidden layer: Linear -> [BN] -> ReLU -> Linear."""

    def __init__(
        self,
        n_in: int,
        hidden: int,
        n_out: int,
        rng: np.random.Generator,
        batch_norm: bool = True,
        dtype=np.float64,
    ):
        self.fc1 = Linear(n_in, hidden, rng, dtype=dtype)
        self.bn = BatchNorm(hidden, dtype) if batch_norm else None
        self.fc2 = Linear(hidden, n_out, rng, dtype=dtype)

    def __call__(self, x, training: bool, tape: Tape | None = None) -> Tensor:
        h = self.fc1(x, tape)
        if self.bn is not None:
            h = self.bn(h, training, tape)
        return self.fc2(ops.relu(h, tape), tape)
