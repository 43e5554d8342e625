"""
Adam optimizer over the model's trainable tensors, with global-norm gradient clipping.
"""
import math
import logging
from typing import Dict, List, Tuple

import numpy as np

from config.settings import Settings
from src.numerics.tensor import Tensor
from src.scheduler.lr_schedule import LearningRateSchedule

logger = logging.getLogger('Cascade.Trainer')


def global_grad_norm(params: List[Tuple[str, Tensor]]) -> float:
    total = 0.0
    for _, p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)


def clip_gradients(params: List[Tuple[str, Tensor]], max_norm: float) -> float:
    """
    Scale all gradients so their global L2 norm is at most max_norm.

    Args:
        params: (name, tensor) pairs in a fixed order
        max_norm: Clip threshold; 0 disables clipping

    Returns:
        The norm before clipping
    """
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class AdamOptimizer:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, schedule: LearningRateSchedule, beta1: float = 0.9, beta2: float = 0.98,
                 eps: float = 1e-9, grad_clip: float = 0.0):
        self.schedule = schedule
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def from_settings(cls, s: Settings) -> 'AdamOptimizer':
        return cls(LearningRateSchedule.from_settings(s), s.adam_beta1, s.adam_beta2,
                   s.adam_eps, s.grad_clip)

    def step(self, params: List[Tuple[str, Tensor]]) -> float:
        """
        Apply one update in place to every parameter with a gradient.

        Returns:
            Gradient norm before clipping
        """
        norm = clip_gradients(params, self.grad_clip)
        self.step_count += 1
        lr = self.schedule.rate(self.step_count)
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params:
            if p.grad is None:
                continue
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
            self.m[name] = m
            self.v[name] = v
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state(self) -> Dict[str, np.ndarray]:
        """Moments flattened into named arrays ('m/<name>', 'v/<name>') plus the step counter."""
        out = {f'm/{k}': a for k, a in self.m.items()}
        out.update({f'v/{k}': a for k, a in self.v.items()})
        out['step'] = np.asarray([self.step_count], dtype=np.int64)
        return out

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        self.m = {k[2:]: np.array(a, dtype=np.float64) for k, a in arrays.items() if k.startswith('m/')}
        self.v = {k[2:]: np.array(a, dtype=np.float64) for k, a in arrays.items() if k.startswith('v/')}
        self.step_count = int(arrays['step'][0]) if 'step' in arrays else 0
