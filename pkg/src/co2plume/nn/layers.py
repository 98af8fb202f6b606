"""Layer modules wrapping the functional ops with Parameter state."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Parameter, Tensor, grad_enabled


class Module:
    """Minimal container: child discovery by attribute order, train/eval state."""

    training = True

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self):
        for m in self.modules():
            m.training = True
        return self

    def eval(self):
        for m in self.modules():
            m.training = False
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:  # pragma: no cover - abstract
        raise NotImplementedError


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int,
                    dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        rng = rng if rng is not None else np.random.default_rng()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        self.stride = stride
        # Same-size output for stride 1, halving for stride 2.
        self.padding = kernel_size // 2 if padding is None else padding
        # Scratch reuse is safe for the single-graph training loop only;
        # no-grad inference gets fresh buffers unless a holder of the model
        # lock enables the inference cache (see RUNet.predict).
        self._workspace: dict = {}
        self._infer_workspace: dict | None = None

    def forward(self, x: Tensor) -> Tensor:
        ws = self._workspace if grad_enabled() else self._infer_workspace
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding, workspace=ws)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.initialized = False

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            self.initialized = True
        elif not self.initialized:
            raise RuntimeError("batchnorm eval before any train step or loaded stats")
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, training=self.training,
                               momentum=self.momentum, eps=self.eps,
                               inplace=not self.training)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(x)


class UpsampleNearest2x(Module):
    def forward(self, x: Tensor) -> Tensor:
        return ops.upsample_nearest2x(x)


class ReflectPad2d(Module):
    def __init__(self, padding: int = 1):
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return ops.reflect_pad(x, self.padding)
