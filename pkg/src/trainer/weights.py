"""
Task weights for the experiment grid.

Supervised causal and non-causal ASR take 40% each; the remaining 20% is
split across the unsupervised tasks by the per-experiment fractions below.
The baseline splits everything between the two ASR tasks.
"""
import logging
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Trainer')

TASKS = ('casr', 'ncasr', 'cjoist', 'ncjoist', 'tts', 'bestrq')
UNSUPERVISED_TASKS = TASKS[2:]

BASELINE = 'E-0'
SUPERVISED_SHARE = Fraction(4, 5)

# fractions of the unsupervised share: (cjoist, ncjoist, tts, bestrq)
UNSUPERVISED_FRACTIONS: Dict[str, Tuple[Fraction, ...]] = {
    'E-A': (Fraction(1, 2), Fraction(1, 2), Fraction(0), Fraction(0)),
    'E-B': (Fraction(0), Fraction(0), Fraction(1), Fraction(0)),
    'E-C': (Fraction(0), Fraction(0), Fraction(0), Fraction(1)),
    'E-AB': (Fraction(1, 4), Fraction(1, 4), Fraction(1, 2), Fraction(0)),
    'E-AC': (Fraction(1, 4), Fraction(1, 4), Fraction(0), Fraction(1, 2)),
    'E-ABC': (Fraction(1, 6), Fraction(1, 6), Fraction(1, 3), Fraction(1, 3)),
}

EXPERIMENT_LABELS: Tuple[str, ...] = (BASELINE,) + tuple(UNSUPERVISED_FRACTIONS)


@dataclass(frozen=True)
class TaskWeights:
    w_casr: float = 0.5
    w_ncasr: float = 0.5
    w_cjoist: float = 0.0
    w_ncjoist: float = 0.0
    w_tts: float = 0.0
    w_bestrq: float = 0.0

    def __post_init__(self):
        values = self.as_tuple()
        if any(w < 0 for w in values):
            raise UsageError(f"task weights must be non-negative, got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise UsageError(f"task weights must sum to 1, got {sum(values)!r}")

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(TASKS, self.as_tuple()))

    def weight(self, task: str) -> float:
        return getattr(self, f'w_{task}')

    def active_tasks(self) -> List[str]:
        return [task for task, w in self.as_dict().items() if w > 0]

    @property
    def supervised_share(self) -> float:
        return self.w_casr + self.w_ncasr

    @property
    def unsupervised_share(self) -> float:
        return 1.0 - self.supervised_share


@dataclass(frozen=True)
class ExperimentSpec:
    label: str
    weights: TaskWeights


def resolve_weight_fractions(label: str) -> Tuple[Fraction, ...]:
    """
    Exact per-task weights of an experiment label, in TASKS order.

    Raises:
        UsageError: unknown label
    """
    if label == BASELINE:
        half = Fraction(1, 2)
        return (half, half, Fraction(0), Fraction(0), Fraction(0), Fraction(0))
    if label not in UNSUPERVISED_FRACTIONS:
        raise UsageError(f"unknown experiment label '{label}' (expected one of {', '.join(EXPERIMENT_LABELS)})")
    asr = SUPERVISED_SHARE / 2
    rest = 1 - SUPERVISED_SHARE
    return (asr, asr) + tuple(rest * f for f in UNSUPERVISED_FRACTIONS[label])


def resolve_weights(label: str) -> TaskWeights:
    return TaskWeights(*(float(f) for f in resolve_weight_fractions(label)))


def parse_task_weights(text: str) -> TaskWeights:
    """Explicit weights 'casr,ncasr,cjoist,ncjoist,tts,bestrq', normalized to sum 1."""
    try:
        values = [Fraction(part.strip()) for part in text.split(',')]
    except ValueError:
        raise UsageError(f"cannot parse task weights '{text}'")
    if len(values) != len(TASKS) or any(v < 0 for v in values) or sum(values) <= 0:
        raise UsageError(f"task weights need {len(TASKS)} non-negative numbers with a positive sum")
    total = sum(values)
    return TaskWeights(*(float(v / total) for v in values))


def experiment_spec(label: str, task_weights: Optional[str] = None) -> ExperimentSpec:
    """Experiment spec for a label; an explicit weight string overrides the table."""
    weights = parse_task_weights(task_weights) if task_weights else resolve_weights(label)
    return ExperimentSpec(label, weights)
