"""
Step-indexed loss log for training runs.
Stored as UTF-8 CSV `step,task,loss`, one row per task per step.
"""
import os
import logging
from typing import Any, Dict, List, Optional, Tuple

from src.utils.errors import CorpusError

logger = logging.getLogger('Cascade.Trainer')

HEADER = 'step,task,loss'


class LossLog:
    """Loss history of one training run, appended to a CSV file as it grows."""

    def __init__(self, log_file: Optional[str] = None, append: bool = False):
        self.log_file = log_file
        self.entries: List[Tuple[int, str, float]] = []
        if log_file:
            self._ensure_directory()
            if append and os.path.exists(log_file):
                self.entries = self._load_entries(log_file)
            else:
                with open(log_file, 'w', encoding='utf-8') as f:
                    f.write(HEADER + '\n')

    def _ensure_directory(self):
        """Ensure the log directory exists."""
        os.makedirs(os.path.dirname(self.log_file) or '.', exist_ok=True)

    @staticmethod
    def _load_entries(path: str) -> List[Tuple[int, str, float]]:
        entries = []
        with open(path, 'r', encoding='utf-8') as f:
            header = f.readline().strip()
            if header != HEADER:
                raise CorpusError(f"{path} is not a loss log (header {header!r})")
            for line in f:
                step, task, loss = line.strip().split(',')
                entries.append((int(step), task, float(loss)))
        return entries

    @classmethod
    def load(cls, path: str) -> 'LossLog':
        log = cls()
        log.entries = cls._load_entries(path)
        return log

    def add_step(self, step: int, losses: Dict[str, float]) -> None:
        """
        Record every component loss of one step.

        Args:
            step: Global step number
            losses: task -> loss value
        """
        rows = [(step, task, float(loss)) for task, loss in losses.items()]
        self.entries.extend(rows)
        if self.log_file:
            with open(self.log_file, 'a', encoding='utf-8') as f:
                for s, task, loss in rows:
                    f.write(f"{s},{task},{loss!r}\n")

    def tasks(self) -> List[str]:
        seen: List[str] = []
        for _, task, _ in self.entries:
            if task not in seen:
                seen.append(task)
        return seen

    def get_losses_by_task(self, task: str) -> List[Tuple[int, float]]:
        return [(step, loss) for step, t, loss in self.entries if t == task]

    def summary(self) -> Dict[str, Any]:
        """
        Per-task first, last and minimum loss with step counts.

        Returns:
            Dictionary with loss statistics
        """
        per_task = {}
        for task in self.tasks():
            series = self.get_losses_by_task(task)
            per_task[task] = {
                "steps": len(series),
                "first": series[0][1],
                "last": series[-1][1],
                "min": min(loss for _, loss in series),
            }
        return {
            "total_rows": len(self.entries),
            "last_step": self.entries[-1][0] if self.entries else None,
            "tasks": per_task,
        }

    def format_summary(self) -> str:
        summary = self.summary()
        lines = [f"Loss log: {summary['total_rows']} rows, last step {summary['last_step']}"]
        for task, stats in summary['tasks'].items():
            lines.append(f"  {task:<8} steps={stats['steps']:<5} first={stats['first']:.4f} "
                         f"last={stats['last']:.4f} min={stats['min']:.4f}")
        return '\n'.join(lines)
