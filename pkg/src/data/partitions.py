"""
Test partitions selected by unigram frequency in the supervised and text-only corpora.
"""
import os
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

from config.settings import Settings, derive_seed
from src.data.corpora import SupervisedExample, read_corpus, write_corpus
from src.data.g2p import PROPER_NOUN_MARKER
from src.frontends.audio import FeatureSequence
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Data')

PARTITION_NAMES = ('vs', 'noisy', 'rpn', 'r_lm', 'c_lm')
PARTITION_LABELS = {'vs': 'VS', 'noisy': 'Noisy', 'rpn': 'RPN', 'r_lm': 'R_LM', 'c_lm': 'C_LM'}


@dataclass
class PartitionThresholds:
    rare: int = 5
    common: int = 30
    noisy_sigma: float = 0.5
    noise_seed: int = 0

    @classmethod
    def from_settings(cls, s: Settings) -> 'PartitionThresholds':
        return cls(rare=s.rare_threshold, common=s.common_threshold,
                   noisy_sigma=s.noisy_sigma, noise_seed=derive_seed(s.master_seed, 'noisy'))


@dataclass
class TestPartitions:
    vs: List[SupervisedExample] = field(default_factory=list)
    noisy: List[SupervisedExample] = field(default_factory=list)
    rpn: List[SupervisedExample] = field(default_factory=list)
    r_lm: List[SupervisedExample] = field(default_factory=list)
    c_lm: List[SupervisedExample] = field(default_factory=list)

    def get(self, name: str) -> List[SupervisedExample]:
        key = name.lower()
        if key not in PARTITION_NAMES:
            raise UsageError(f"unknown partition '{name}' (expected one of {', '.join(PARTITION_LABELS.values())})")
        return getattr(self, key)

    def sizes(self) -> dict:
        return {name: len(getattr(self, name)) for name in PARTITION_NAMES}


def is_proper_noun(word: str) -> bool:
    return word.startswith(PROPER_NOUN_MARKER)


def unigram_counts(texts: Iterable[Sequence[str]]) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        counts.update(text)
    return counts


def classify(text: Sequence[str], count_s: Counter, count_t: Counter, t: PartitionThresholds) -> str:
    """Partition of one transcript; precedence RPN, R_LM, C_LM, then VS."""
    if any(is_proper_noun(w) and count_s[w] < t.rare for w in text):
        return 'rpn'
    if any(count_s[w] < t.rare and count_t[w] < t.rare for w in text):
        return 'r_lm'
    if any(count_s[w] < t.rare and count_t[w] >= t.common for w in text):
        return 'c_lm'
    return 'vs'


def add_noise(example: SupervisedExample, sigma: float, seed: int) -> SupervisedExample:
    rng = np.random.default_rng(derive_seed(seed, example.id))
    frames = example.audio.frames + rng.normal(0.0, sigma, size=example.audio.frames.shape)
    frames = frames.astype('<f4').astype(np.float64)
    return SupervisedExample(FeatureSequence(frames, example.audio.frame_step_ms),
                             list(example.text), f"{example.id}-noisy")


def partition_test_sets(supervised: Sequence[SupervisedExample], unsup_text: Sequence,
                        held_out: Sequence[SupervisedExample],
                        thresholds: PartitionThresholds) -> TestPartitions:
    """
    Split the held-out pool into VS, Noisy, RPN, R_LM and C_LM.

    Args:
        supervised: Training corpus 𝒮
        unsup_text: Text-only corpus 𝒰^T
        held_out: Candidate test utterances (disjoint from 𝒮 by id)
        thresholds: Frequency thresholds and noise settings

    Returns:
        TestPartitions; Noisy holds noisy copies of the VS members
    """
    if not held_out:
        raise UsageError("held-out pool is empty")
    train_ids = {ex.id for ex in supervised}
    overlap = [ex.id for ex in held_out if ex.id in train_ids]
    if overlap:
        raise UsageError(f"held-out pool shares ids with the supervised corpus (e.g. {overlap[0]})")

    count_s = unigram_counts(ex.text for ex in supervised)
    count_t = unigram_counts(ex.text for ex in unsup_text)
    parts = TestPartitions()
    for ex in held_out:
        getattr(parts, classify(ex.text, count_s, count_t, thresholds)).append(ex)
    parts.noisy = [add_noise(ex, thresholds.noisy_sigma, thresholds.noise_seed) for ex in parts.vs]
    logger.info("Test partitions: " + ", ".join(
        f"{PARTITION_LABELS[n]}={size}" for n, size in parts.sizes().items()))
    return parts


def write_partitions(directory: str, parts: TestPartitions) -> None:
    os.makedirs(directory, exist_ok=True)
    for name in PARTITION_NAMES:
        write_corpus(directory, f"test_{name}", getattr(parts, name))


def read_partitions(directory: str, frame_step_ms: float = 10.0) -> TestPartitions:
    parts = TestPartitions()
    for name in PARTITION_NAMES:
        setattr(parts, name, read_corpus(directory, f"test_{name}", frame_step_ms))
    return parts
