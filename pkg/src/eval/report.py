"""
Evaluation reports: per-partition WER, lattice density and decoding states,
stored as CSV and rendered as comparison tables with relative deltas.
"""
import os
import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from config.settings import Settings
from src.data.partitions import PARTITION_LABELS, PARTITION_NAMES, TestPartitions
from src.data.wordpiece import WordpieceModel
from src.decode.pipeline import decode_examples, hypothesis_text
from src.eval.metrics import avg_decoding_states, corpus_edit_counts, mean_density
from src.trainer.checkpoint import Checkpoint, params_from_checkpoint
from src.utils.errors import CorpusError, UsageError

logger = logging.getLogger('Cascade.Eval')

CSV_FIELDS = ['experiment', 'partition', 'utterances', 'wer', 'lattice_density',
              'avg_states', 'states_per_frame']

# (title, score attribute, absolute format)
TABLES = [
    ('Word Error Rate (%)', 'wer', lambda v: f"{100.0 * v:.1f}"),
    ('Lattice Density', 'lattice_density', lambda v: f"{v:.2f}"),
    ('Average Decoding States', 'avg_states', lambda v: f"{v:.1f}"),
]


@dataclass
class PartitionScores:
    utterances: int
    wer: float
    lattice_density: float
    avg_states: float
    states_per_frame: float


@dataclass
class EvalReport:
    label: str
    scores: Dict[str, PartitionScores] = field(default_factory=dict)

    def get(self, partition: str) -> Optional[PartitionScores]:
        return self.scores.get(partition)

    def to_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
            writer.writeheader()
            for name in PARTITION_NAMES:
                s = self.scores.get(name)
                if s is None:
                    continue
                writer.writerow({'experiment': self.label, 'partition': name, 'utterances': s.utterances,
                                 'wer': repr(s.wer), 'lattice_density': repr(s.lattice_density),
                                 'avg_states': repr(s.avg_states),
                                 'states_per_frame': repr(s.states_per_frame)})
        return path

    @classmethod
    def from_csv(cls, path: str) -> 'EvalReport':
        if not os.path.exists(path):
            raise CorpusError(f"report {path} does not exist")
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CSV_FIELDS:
                raise UsageError(f"{path} is not an evaluation report (columns {reader.fieldnames})")
            rows = list(reader)
        report = cls(rows[0]['experiment'] if rows else os.path.basename(path))
        for row in rows:
            report.scores[row['partition']] = PartitionScores(
                int(row['utterances']), float(row['wer']), float(row['lattice_density']),
                float(row['avg_states']), float(row['states_per_frame']))
        return report

    def render_table(self, baseline: Optional['EvalReport'] = None) -> str:
        if baseline is None:
            return render_tables([self])
        return render_tables([baseline, self], baseline=baseline.label)


def relative_delta(candidate: float, baseline: float) -> Optional[float]:
    if baseline == 0:
        return None
    return (candidate - baseline) / baseline


def format_delta(candidate: float, baseline: float) -> str:
    """Signed relative change in percent; no change renders as -0.0%, even from zero."""
    if candidate == baseline:
        return '-0.0%'
    delta = relative_delta(candidate, baseline)
    if delta is None:
        return 'n/a'
    sign = '+' if delta > 0 else '-'
    return f"{sign}{abs(delta) * 100.0:.1f}%"


def render_tables(reports: Sequence[EvalReport], baseline: Optional[str] = None) -> str:
    """
    One aligned table per metric; rows are experiments, columns the five test partitions.

    Args:
        reports: Reports to show, in row order
        baseline: Label of the report shown in absolute values; the others
            show relative deltas against it. Without a baseline every row is absolute.

    Returns:
        The three tables separated by blank lines
    """
    base = next((r for r in reports if r.label == baseline), None)
    if baseline is not None and base is None:
        raise UsageError(f"baseline {baseline!r} is not among the reports")
    columns = [PARTITION_LABELS[name] for name in PARTITION_NAMES]
    width = max(8, max((len(r.label) for r in reports), default=0) + 2)
    blocks = []
    for title, attr, fmt in TABLES:
        lines = [title, f"{'Exp':<{width}}" + ''.join(f"{c:>9}" for c in columns)]
        for report in reports:
            cells = []
            for name in PARTITION_NAMES:
                score = report.get(name)
                ref = base.get(name) if base is not None else None
                if score is None:
                    cells.append('-')
                elif base is None or report is base:
                    cells.append(fmt(getattr(score, attr)))
                elif ref is None:
                    cells.append('n/a')
                else:
                    cells.append(format_delta(getattr(score, attr), getattr(ref, attr)))
            lines.append(f"{report.label:<{width}}" + ''.join(f"{c:>9}" for c in cells))
        blocks.append('\n'.join(lines))
    return '\n\n'.join(blocks)


def evaluate_suite(checkpoint: Checkpoint, partitions: TestPartitions, settings: Settings,
                   wordpieces: WordpieceModel, label: str = 'model', causal: bool = False,
                   beam_width: Optional[int] = None, threads: int = 1) -> EvalReport:
    """
    Decode every test partition and compute all three measures.

    Args:
        checkpoint: Trained model
        partitions: Test partitions
        settings: Configuration (decode constants, model shape)
        wordpieces: Vocabulary for reference wordpieces and hypothesis text
        label: Experiment label stored in the report
        causal: Decode E_C -> D_C instead of the cascade
        beam_width: Overrides settings.beam_width
        threads: Utterance-level decoding workers

    Returns:
        EvalReport; empty partitions are left out with a warning
    """
    params = params_from_checkpoint(checkpoint, settings)
    which = 'c' if causal else 'nc'
    report = EvalReport(label)
    for name in PARTITION_NAMES:
        examples = partitions.get(name)
        if not examples:
            logger.warning(f"Partition {PARTITION_LABELS[name]} is empty; leaving it out of the report")
            continue
        results = decode_examples(params, examples, which, beam_width, threads)
        refs = [ex.text for ex in examples]
        hyps = [hypothesis_text(wordpieces, r.nbest[0].labels).split() for r in results]
        counts = corpus_edit_counts(refs, hyps)
        if counts.ref_words == 0:
            raise UsageError(f"partition {name} has no reference words")
        per_utt, per_frame = avg_decoding_states([r.stats for r in results])
        density = mean_density([r.lattice for r in results], [wordpieces.encode(ex.text) for ex in examples])
        report.scores[name] = PartitionScores(len(examples), counts.errors / counts.ref_words,
                                              density, per_utt, per_frame)
        logger.info(f"{label} {PARTITION_LABELS[name]}: WER {100.0 * report.scores[name].wer:.1f}%, "
                    f"density {density:.2f}, states {per_utt:.1f} ({len(examples)} utterances)")
    return report
