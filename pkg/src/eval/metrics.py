"""
Evaluation measures: word error rate, lattice density and average decoding states.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.decode.beam_search import DecodeStats
from src.decode.lattice import Lattice
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Eval')


@dataclass
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: 'EditCounts') -> 'EditCounts':
        return EditCounts(self.substitutions + other.substitutions, self.deletions + other.deletions,
                          self.insertions + other.insertions, self.ref_words + other.ref_words)


def edit_counts(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """
    Levenshtein alignment with unit costs.

    Among equal-cost predecessors the backtrace prefers substitution (or
    match), then insertion, then deletion; this picks the alignment, never
    the total.
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(diag, dist[i, j - 1] + 1, dist[i - 1, j] + 1)

    counts = EditCounts(ref_words=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            counts.substitutions += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            counts.insertions += 1
            j -= 1
        else:
            counts.deletions += 1
            i -= 1
    return counts


def corpus_edit_counts(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> EditCounts:
    if len(refs) != len(hyps):
        raise UsageError(f"{len(refs)} references but {len(hyps)} hypotheses")
    total = EditCounts()
    for ref, hyp in zip(refs, hyps):
        total = total + edit_counts(list(ref), list(hyp))
    return total


def wer(refs: Sequence[Sequence[str]], hyps: Sequence[Sequence[str]]) -> float:
    """
    Corpus word error rate (S + D + I) / total reference words.

    Raises:
        UsageError: list lengths differ or the references hold no words
    """
    total = corpus_edit_counts(refs, hyps)
    if total.ref_words == 0:
        raise UsageError("WER needs at least one reference word")
    return total.errors / total.ref_words


def lattice_density(lattice: Lattice, ref_wordpieces: Sequence[int]) -> float:
    """Lattice arcs per reference wordpiece."""
    if len(ref_wordpieces) == 0:
        raise UsageError("lattice density needs a non-empty reference")
    return lattice.num_arcs / len(ref_wordpieces)


def avg_decoding_states(stats: Sequence[DecodeStats]) -> Tuple[float, float]:
    """
    Mean states expanded per utterance, and mean per-utterance states per frame.

    Returns:
        (per_utterance_mean, per_frame_mean)
    """
    if not stats:
        raise UsageError("avg_decoding_states needs at least one utterance")
    per_utt = [float(s.states_expanded) for s in stats]
    per_frame = [s.states_per_frame for s in stats]
    return float(np.mean(per_utt)), float(np.mean(per_frame))


def mean_density(lattices: Sequence[Lattice], refs: Sequence[Sequence[int]]) -> float:
    densities: List[float] = [lattice_density(lat, ref) for lat, ref in zip(lattices, refs)]
    return float(np.mean(densities)) if densities else 0.0
