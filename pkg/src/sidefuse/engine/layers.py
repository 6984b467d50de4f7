"""Parameter-holding layer helpers shared by the models."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DTYPE, Tensor
from .optim import Parameter, parameter


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                    fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(DTYPE)


class Conv2dLayer:
    def __init__(self, name: str, c_in: int, c_out: int, k: int, stride: int,
                 padding: int, rng: np.random.Generator | None,
                 zero_init: bool = False, bias_init: np.ndarray | None = None,
                 gain: float = 1.0):
        if zero_init:
            w = np.zeros((c_out, c_in, k, k), dtype=DTYPE)
        else:
            w = gain * kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k)
        b = np.zeros(c_out, dtype=DTYPE) if bias_init is None else np.asarray(bias_init, DTYPE)
        self.weight = parameter(f"{name}.weight", w)
        self.bias = parameter(f"{name}.bias", b)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight.tensor, self.bias.tensor,
                         stride=self.stride, padding=self.padding)

    @property
    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


class DenseLayer:
    def __init__(self, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator | None, zero_init: bool = False):
        if zero_init:
            w = np.zeros((d_out, d_in), dtype=DTYPE)
        else:
            w = kaiming_uniform(rng, (d_out, d_in), d_in)
        self.weight = parameter(f"{name}.weight", w)
        self.bias = parameter(f"{name}.bias", np.zeros(d_out, dtype=DTYPE))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dense(x, self.weight.tensor, self.bias.tensor)

    @property
    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


def state_dict(params: list[Parameter]) -> dict[str, np.ndarray]:
    return {p.name: p.tensor.data.copy() for p in params}


def load_state(params: list[Parameter], state: dict[str, np.ndarray],
               rename: dict[str, str] | None = None) -> None:
    """Copy matching tensors from ``state`` into ``params``.

    ``rename`` maps a source-name prefix to the destination prefix (e.g.
    {"side.": "backbone."}). Every parameter must be covered; shapes must
    agree exactly.
    """
    lookup = dict(state)
    if rename:
        for src, dst in rename.items():
            for key in list(lookup):
                if key.startswith(src):
                    lookup[dst + key[len(src):]] = lookup.pop(key)
    for p in params:
        if p.name not in lookup:
            raise KeyError(f"checkpoint is missing parameter '{p.name}'")
        arr = lookup[p.name]
        if tuple(arr.shape) != tuple(p.tensor.data.shape):
            raise ValueError(
                f"shape mismatch for '{p.name}': checkpoint {tuple(arr.shape)} vs "
                f"model {tuple(p.tensor.data.shape)}")
        p.tensor.data[...] = arr.astype(DTYPE)
