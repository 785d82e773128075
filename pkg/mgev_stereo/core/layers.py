"""Named parameters and the convolution layers that own them."""

from collections import OrderedDict
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from .conv import conv2d, conv3d, conv3d_transposed
from .tensor import Tensor, resolve_dtype


class ParameterStore:
    """Ordered registry of trainable tensors, seeded for reproducible init."""

    def __init__(self, seed: int = 0, dtype: str = 'f32'):
        self.rng = np.random.default_rng(seed)
        self.dtype = resolve_dtype(dtype)
        self._params: Dict[str, Tensor] = OrderedDict()

    def __len__(self):
        return len(self._params)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"Duplicate parameter name '{name}'")
        tensor = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def named_parameters(self) -> Dict[str, Tensor]:
        return OrderedDict(self._params)

    def count(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data) for name, p in self._params.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        missing = [name for name in self._params if name not in state]
        if missing and strict:
            raise ValueError(f"Checkpoint is missing parameters: {', '.join(missing[:5])}")
        for name, p in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"Shape mismatch for '{name}': checkpoint {value.shape} vs model {p.shape}")
            p.data = value.astype(self.dtype)


class Conv:
    """2D/3D convolution (optionally transposed) with He-normal or zero init."""

    def __init__(self, store: ParameterStore, name: str, in_channels: int, out_channels: int,
                 kernel: int, stride: Union[int, Sequence[int]] = 1, padding: Optional[int] = None,
                 dims: int = 2, transposed: bool = False, bias: bool = True, init: str = 'he'):
        self.stride = stride
        self.padding = (kernel // 2 if not transposed else 1) if padding is None else padding
        self.dims = dims
        self.transposed = transposed
        shape = ((in_channels, out_channels) if transposed else (out_channels, in_channels)) + (kernel,) * dims
        if init == 'zero':
            weight = np.zeros(shape)
        elif init == 'he':
            fan_in = in_channels * kernel ** dims
            weight = store.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        else:
            raise ValueError(f"Unknown init '{init}'")
        self.weight = store.add(f'{name}.weight', weight)
        self.bias = store.add(f'{name}.bias', np.zeros(out_channels)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if self.dims == 2:
            return conv2d(x, self.weight, self.bias, self.stride, self.padding)
        if self.transposed:
            return conv3d_transposed(x, self.weight, self.bias, self.stride, self.padding)
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)
