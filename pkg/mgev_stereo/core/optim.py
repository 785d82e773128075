"""AdamW with elementwise gradient clipping and a one-cycle learning rate."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when a parameter gradient holds NaN or Inf."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter '{name}'")
        self.name = name


@dataclass
class OneCycleSchedule:
    """Linear warmup to ``peak_lr`` then linear decay to ``final_lr`` at the last step."""

    total_steps: int
    peak_lr: float = 2e-4
    final_lr: float = 2e-6
    warmup_fraction: float = 0.05

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 < self.final_lr < self.peak_lr:
            raise ValueError(f"need 0 < final_lr < peak_lr, got {self.final_lr}, {self.peak_lr}")

    @property
    def warmup_steps(self) -> int:
        return max(1, int(round(self.warmup_fraction * self.total_steps)))

    def __call__(self, step: int) -> float:
        warm = self.warmup_steps
        last = self.total_steps - 1
        if step < warm:
            return self.final_lr + (self.peak_lr - self.final_lr) * step / warm
        if last <= warm:
            return self.final_lr
        frac = min(1.0, (step - warm) / (last - warm))
        return self.peak_lr - (self.peak_lr - self.final_lr) * frac


@dataclass
class OptimizerState:
    schedule: OneCycleSchedule
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    clip: Tuple[float, float] = (-1.0, 1.0)
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'__optim__.step': np.array([self.step], dtype=np.float64)}
        for name in self.m:
            state[f'__optim__.m.{name}'] = self.m[name]
            state[f'__optim__.v.{name}'] = self.v[name]
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        if '__optim__.step' in state:
            self.step = int(state['__optim__.step'][0])
        for key, value in state.items():
            if key.startswith('__optim__.m.'):
                self.m[key[len('__optim__.m.'):]] = np.array(value)
            elif key.startswith('__optim__.v.'):
                self.v[key[len('__optim__.v.'):]] = np.array(value)


def optimizer_step(params: Mapping[str, Tensor], grads: Mapping[str, Optional[np.ndarray]],
                   state: OptimizerState) -> float:
    """Apply one AdamW update in place of ``params[*].data``; returns the learning rate used.

    Every gradient is checked before any parameter moves, so a rejected step
    leaves the model untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    lr = state.schedule(state.step)
    b1, b2 = state.betas
    t = state.step + 1
    low, high = state.clip
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.clip(g, low, high)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype, copy=False)
    state.step = t
    return lr


class AdamW:
    """Thin driver pairing a parameter dict with its :class:`OptimizerState`."""

    def __init__(self, params: Mapping[str, Tensor], state: OptimizerState):
        self.params = dict(params)
        self.state = state

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> float:
        grads = {name: p.grad for name, p in self.params.items()}
        return optimizer_step(self.params, grads, self.state)
