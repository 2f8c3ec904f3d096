"""AdamW with decoupled weight decay, and the warmup + step-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NumericError


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamW:
    def __init__(self, params: dict[str, Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = AdamWState(beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float, weight_decay: float) -> int:
        """One update; returns how many parameters had no gradient (treated
        as zero gradient, not an error)."""
        st = self.state
        st.step += 1
        bc1 = 1.0 - st.beta1**st.step
        bc2 = 1.0 - st.beta2**st.step
        disconnected = 0
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
                disconnected += 1
            elif not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = st.m[name]
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            if weight_decay != 0.0:
                p.data -= lr * weight_decay * p.data
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= lr * m_hat / (np.sqrt(v_hat) + st.eps)
        return disconnected


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-4
    warmup_iters: int = 10_000
    decay_epochs: tuple[int, ...] = (30, 35)
    decay_factor: float = 0.1
    iters_per_epoch: int = 1


def lr_at(schedule: LrSchedule, iteration: int, epoch: int | None = None) -> float:
    """Linear 0 -> base over warmup, times decay_factor per passed decay epoch."""
    if iteration < 0:
        raise NumericError("iteration must be >= 0")
    if epoch is None:
        epoch = iteration // max(schedule.iters_per_epoch, 1)
    warm = min(1.0, iteration / schedule.warmup_iters) if schedule.warmup_iters > 0 else 1.0
    decay = schedule.decay_factor ** sum(1 for e in schedule.decay_epochs if epoch >= e)
    return schedule.base_lr * warm * decay
