"""Edge-replication padding to network-friendly sizes."""

from typing import Tuple

import numpy as np


class InputPadder:
    """Pads H×W (or C×H×W, N×C×H×W) arrays on the right and bottom to a multiple of ``divisor``."""

    def __init__(self, shape: Tuple[int, ...], divisor: int = 32):
        self.height, self.width = shape[-2:]
        self.pad_h = (-self.height) % divisor
        self.pad_w = (-self.width) % divisor

    @property
    def padded_shape(self) -> Tuple[int, int]:
        return self.height + self.pad_h, self.width + self.pad_w

    def pad(self, *arrays: np.ndarray):
        out = []
        for a in arrays:
            widths = [(0, 0)] * (a.ndim - 2) + [(0, self.pad_h), (0, self.pad_w)]
            out.append(np.pad(a, widths, mode='edge'))
        return out if len(out) > 1 else out[0]

    def unpad(self, array: np.ndarray) -> np.ndarray:
        return array[..., :self.height, :self.width]
