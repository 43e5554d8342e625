"""
Per-step batch sampling and preparation.

Every draw is seeded by (master seed, step, dataset[, index]), never by
worker, so the prepared batches are the same for any thread count.
"""
import os
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from config.settings import Settings, derive_seed
from src.data.corpora import (
    Corpora, CorpusConfig, SupervisedExample, UnsupervisedAudio, UnsupervisedText,
    read_corpora, training_tts_oracle,
)
from src.data.g2p import G2PTable
from src.data.wordpiece import WordpieceModel
from src.frontends.audio import FeatureSequence, MaskInfo, audio_mask_span, stack_and_subsample
from src.ssl.bestrq import Quantizer, quantize
from src.ssl.joist import JoistExample, prepare_joist
from src.ssl.tts import TtsOracle, tts_synthesize
from src.trainer.weights import TaskWeights
from src.utils.errors import CorpusError, SkipExample

logger = logging.getLogger('Cascade.Trainer')

WORDPIECE_FILE = 'wordpieces.txt'


@dataclass
class TrainingData:
    """Everything a training run reads besides the model: corpora, vocabulary, G2P and TTS."""
    corpora: Corpora
    wordpieces: WordpieceModel
    g2p: G2PTable
    tts: TtsOracle


def corpus_words(corpora: Corpora) -> List[str]:
    words = set()
    for ex in corpora.supervised:
        words.update(ex.text)
    for ex in corpora.unsup_text:
        words.update(ex.text)
    return sorted(words)


def load_training_data(settings: Settings, data_dir: Optional[str] = None) -> TrainingData:
    """
    Read the synthesized corpora and the wordpiece model written next to them.

    Raises:
        CorpusError: the corpus directory or wordpiece model is missing
    """
    data_dir = data_dir or settings.data_dir
    corpora = read_corpora(data_dir, settings.frame_step_ms)
    wp_path = os.path.join(data_dir, WORDPIECE_FILE)
    if not os.path.exists(wp_path):
        raise CorpusError(f"wordpiece model {wp_path} is missing; run synth first")
    wordpieces = WordpieceModel.load(wp_path)
    return build_training_data(settings, corpora, wordpieces)


def build_training_data(settings: Settings, corpora: Corpora,
                        wordpieces: WordpieceModel) -> TrainingData:
    if not corpora.supervised:
        raise CorpusError("supervised corpus is empty")
    words = corpus_words(corpora)
    alphabet = sorted({ch for w in words for ch in w})
    tts = training_tts_oracle(CorpusConfig.from_settings(settings), settings.master_seed, alphabet)
    return TrainingData(corpora, wordpieces, G2PTable.from_words(words), tts)


class BatchSampler:
    """Uniform with-replacement example indices, seeded per (step, dataset)."""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed

    def indices(self, step: int, dataset: str, size: int, batch: int) -> List[int]:
        if size == 0:
            return []
        rng = np.random.default_rng(derive_seed(self.master_seed, 'batch', step, dataset))
        return [int(i) for i in rng.integers(0, size, size=batch)]

    def rng(self, step: int, dataset: str, index: int, purpose: str) -> np.random.Generator:
        return np.random.default_rng(derive_seed(self.master_seed, purpose, step, dataset, index))


@dataclass
class AsrItem:
    """Stacked features with wordpiece targets (supervised or TTS-synthesized)."""
    x: np.ndarray
    targets: List[int]
    id: str


@dataclass
class BestRqItem:
    x: np.ndarray
    targets: np.ndarray
    info: MaskInfo
    id: str


@dataclass
class StepBatches:
    step: int
    supervised: List[AsrItem] = field(default_factory=list)
    joist: List[JoistExample] = field(default_factory=list)
    tts: List[AsrItem] = field(default_factory=list)
    bestrq: List[BestRqItem] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)

    def sizes(self) -> dict:
        return {'supervised': len(self.supervised), 'joist': len(self.joist),
                'tts': len(self.tts), 'bestrq': len(self.bestrq), 'skipped': len(self.skipped)}


def _stack(settings: Settings, audio: FeatureSequence) -> np.ndarray:
    return stack_and_subsample(audio, settings.stack_size, settings.stride).frames


def _prepare_bestrq(ex: UnsupervisedAudio, settings: Settings, quantizer: Quantizer,
                    rng: np.random.Generator):
    sf = stack_and_subsample(ex.audio, settings.stack_size, settings.stride)
    try:
        masked, info = audio_mask_span(sf, settings.mask_ratio_audio, rng, settings.mask_noise_std)
    except SkipExample as e:
        logger.warning(f"Skipping BEST-RQ example {ex.id}: {e}")
        return ex.id
    return BestRqItem(masked.frames, quantize(quantizer, sf), info, ex.id)


def prepare_batches(step: int, weights: TaskWeights, data: TrainingData, settings: Settings,
                    quantizer: Quantizer, sampler: Optional[BatchSampler] = None,
                    threads: Optional[int] = None) -> StepBatches:
    """
    Sample one batch per dataset and prepare the inputs of every active task.

    Datasets feeding only zero-weight tasks are neither sampled nor prepared;
    in particular the quantizer is untouched when the BEST-RQ weight is 0.

    Args:
        step: Global 1-based step
        weights: Task weights of the experiment
        data: Corpora, wordpieces, G2P table and TTS oracle
        settings: Configuration (batch sizes, frontend constants)
        quantizer: Frozen BEST-RQ quantizer
        sampler: Index sampler (default: seeded from settings.master_seed)
        threads: Worker threads (default: settings.threads)

    Returns:
        StepBatches with per-task prepared examples in sampled order
    """
    sampler = sampler or BatchSampler(settings.master_seed)
    corpora = data.corpora
    jobs: List[Callable[[], object]] = []
    kinds: List[str] = []

    if weights.w_casr > 0 or weights.w_ncasr > 0:
        for i in sampler.indices(step, 'S', len(corpora.supervised), settings.batch_supervised):
            ex: SupervisedExample = corpora.supervised[i]
            jobs.append(lambda ex=ex: AsrItem(_stack(settings, ex.audio), data.wordpieces.encode(ex.text), ex.id))
            kinds.append('supervised')

    if weights.w_bestrq > 0:
        picks = sampler.indices(step, 'US', len(corpora.unsup_audio), settings.batch_unsup_audio)
        for slot, i in enumerate(picks):
            ex_a: UnsupervisedAudio = corpora.unsup_audio[i]
            rng = sampler.rng(step, 'US', slot, 'mask')
            jobs.append(lambda ex=ex_a, rng=rng: _prepare_bestrq(ex, settings, quantizer, rng))
            kinds.append('bestrq')

    joist_active = weights.w_cjoist > 0 or weights.w_ncjoist > 0
    if joist_active or weights.w_tts > 0:
        picks = sampler.indices(step, 'UT', len(corpora.unsup_text), settings.batch_unsup_text)
        for slot, i in enumerate(picks):
            ex_t: UnsupervisedText = corpora.unsup_text[i]
            if joist_active:
                rng = sampler.rng(step, 'UT', slot, 'joist')
                jobs.append(lambda ex=ex_t, rng=rng: prepare_joist(
                    ex, data.wordpieces, data.g2p, settings.mask_ratio_text, rng))
                kinds.append('joist')
            if weights.w_tts > 0:
                jobs.append(lambda ex=ex_t: AsrItem(_stack(settings, tts_synthesize(data.tts, ex.text)),
                                                    data.wordpieces.encode(ex.text), ex.id))
                kinds.append('tts')

    workers = max(1, threads or settings.threads)
    if workers == 1 or len(jobs) <= 1:
        results = [job() for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: job(), jobs))

    batches = StepBatches(step)
    for kind, result in zip(kinds, results):
        if isinstance(result, str):
            batches.skipped.append(result)
        else:
            getattr(batches, kind).append(result)
    return batches


def supervised_batch(examples: Sequence[SupervisedExample], settings: Settings,
                     wordpieces: WordpieceModel, step: int = 0) -> StepBatches:
    """A fixed supervised-only batch, for evaluating losses outside the sampler."""
    items = [AsrItem(_stack(settings, ex.audio), wordpieces.encode(ex.text), ex.id) for ex in examples]
    return StepBatches(step, supervised=items)
