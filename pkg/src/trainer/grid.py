"""
Experiment grid: train the E-0 baseline, continue each experiment from it,
evaluate everything and write the comparison tables.
"""
import os
import logging
from typing import Dict, List, Optional, Sequence

from config.settings import Settings
from src.data.partitions import TestPartitions
from src.eval.report import EvalReport, evaluate_suite, render_tables
from src.trainer.batches import TrainingData
from src.trainer.loop import run_training
from src.trainer.weights import BASELINE, experiment_spec

logger = logging.getLogger('Cascade.Trainer')

TABLES_FILE = 'tables.txt'


def run_grid(labels: Sequence[str], settings: Settings, data: TrainingData, partitions: TestPartitions,
             out_dir: str, threads: Optional[int] = None) -> Dict[str, EvalReport]:
    """
    Baseline-then-continue protocol over a set of experiments.

    E-0 trains for `steps` from scratch; E-0 itself and every requested label
    then continue from that checkpoint for `continue_steps`, so all compared
    models have seen the same number of updates.

    Args:
        labels: Experiment labels to compare against E-0
        settings: Configuration
        data: Training data
        partitions: Test partitions
        out_dir: Grid directory (one subdirectory per run)
        threads: Worker threads for batch preparation and decoding

    Returns:
        label -> EvalReport, E-0 first
    """
    workers = threads or settings.threads
    ordered: List[str] = [BASELINE] + [label for label in labels if label != BASELINE]
    specs = {label: experiment_spec(label) for label in ordered}

    base = run_training(specs[BASELINE], settings, data, os.path.join(out_dir, 'baseline'),
                        steps=settings.steps, threads=workers)
    reports: Dict[str, EvalReport] = {}
    for label in ordered:
        run_dir = os.path.join(out_dir, label)
        result = run_training(specs[label], settings, data, run_dir, init=base.checkpoint,
                              steps=settings.continue_steps, threads=workers)
        report = evaluate_suite(result.checkpoint, partitions, settings, data.wordpieces,
                                label=label, threads=workers)
        report.to_csv(os.path.join(run_dir, 'report.csv'))
        reports[label] = report

    tables = render_tables(list(reports.values()), baseline=BASELINE)
    with open(os.path.join(out_dir, TABLES_FILE), 'w', encoding='utf-8') as f:
        f.write(tables + '\n')
    logger.info(f"Grid finished ({', '.join(ordered)}); tables in {os.path.join(out_dir, TABLES_FILE)}")
    return reports
