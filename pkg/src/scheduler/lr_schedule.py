"""
Learning-rate schedule for the trainer.
Linear warmup, then inverse-square-root decay.
"""
import math
import logging
from typing import Any, Dict

from config.settings import Settings
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Trainer')


class LearningRateSchedule:
    """Maps a 1-based optimizer step to a learning rate."""

    def __init__(self, base_lr: float, warmup_steps: int):
        if base_lr <= 0:
            raise UsageError(f"learning rate must be > 0, got {base_lr}")
        if warmup_steps < 0:
            raise UsageError(f"warmup_steps must be >= 0, got {warmup_steps}")
        self.base_lr = float(base_lr)
        self.warmup_steps = int(warmup_steps)

    @classmethod
    def from_settings(cls, s: Settings) -> 'LearningRateSchedule':
        return cls(s.learning_rate, s.warmup_steps)

    def rate(self, step: int) -> float:
        """
        Learning rate at a step.

        Args:
            step: 1-based step number

        Returns:
            base_lr * step / warmup during warmup, base_lr * sqrt(warmup / step) after it
        """
        if step < 1:
            raise UsageError(f"schedule steps are 1-based, got {step}")
        if self.warmup_steps == 0:
            return self.base_lr / math.sqrt(step)
        if step <= self.warmup_steps:
            return self.base_lr * step / self.warmup_steps
        return self.base_lr * math.sqrt(self.warmup_steps / step)

    def is_warming_up(self, step: int) -> bool:
        return step <= self.warmup_steps

    def get_schedule_summary(self, step: int) -> Dict[str, Any]:
        """
        Summarize the schedule at a step.

        Returns:
            Dictionary with schedule information
        """
        return {
            "step": step,
            "learning_rate": self.rate(max(step, 1)),
            "base_learning_rate": self.base_lr,
            "warmup_steps": self.warmup_steps,
            "warming_up": self.is_warming_up(step),
        }
