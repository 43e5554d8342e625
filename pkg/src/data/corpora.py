"""
Synthetic corpora: lexicon strata, the three training corpora, the held-out
pool, and the manifest + float32 feature file format.
"""
import os
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from config.settings import Settings, derive_seed
from src.data.g2p import PROPER_NOUN_MARKER
from src.frontends.audio import FeatureSequence
from src.ssl.tts import TtsOracle, tts_synthesize
from src.utils.errors import UsageError, CorpusError

logger = logging.getLogger('Cascade.Data')

TokenSequence = List[str]

ONSETS = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z', 'ch', 'sh', 'th']
NUCLEI = ['a', 'e', 'i', 'o', 'u']
CODAS = ['', '', 'n', 'ng', 'r', 's', 'k']

MANIFEST_SUFFIX = '.tsv'
FEATURES_SUFFIX = '.feats'
CORPUS_NAMES = ('supervised', 'unsup_audio', 'unsup_text', 'held_out')


@dataclass
class SupervisedExample:
    audio: FeatureSequence
    text: TokenSequence
    id: str


@dataclass
class UnsupervisedAudio:
    audio: FeatureSequence
    id: str


@dataclass
class UnsupervisedText:
    text: TokenSequence
    id: str


Example = Union[SupervisedExample, UnsupervisedAudio, UnsupervisedText]


class Corpora(NamedTuple):
    supervised: List[SupervisedExample]
    unsup_audio: List[UnsupervisedAudio]
    unsup_text: List[UnsupervisedText]


@dataclass
class CorpusConfig:
    """Sizes and lexicon shape for corpus synthesis."""
    supervised_size: int = 1000
    unsup_audio_size: int = 2000
    unsup_text_size: int = 5000
    held_out_size: int = 200
    max_corpus_size: int = 1_000_000
    common_vocab: int = 120
    proper_noun_count: int = 8
    rare_stratum_count: int = 20
    text_only_vocab: int = 40
    min_words: int = 3
    max_words: int = 7
    zipf_exponent: float = 1.1
    feature_dim: int = 16
    feature_noise: float = 0.1
    tts_jitter: float = 0.05
    rare_threshold: int = 5
    common_threshold: int = 30
    frame_step_ms: float = 10.0

    @classmethod
    def from_settings(cls, s: Settings) -> 'CorpusConfig':
        return cls(**{name: getattr(s, name) for name in cls.__dataclass_fields__})

    def check(self) -> None:
        for name in ('supervised_size', 'unsup_audio_size', 'unsup_text_size', 'held_out_size'):
            size = getattr(self, name)
            if size < 1:
                raise UsageError(f"{name} must be >= 1 (got {size})")
            if size > self.max_corpus_size:
                raise UsageError(f"{name} {size} exceeds the configured maximum {self.max_corpus_size}")
        if self.min_words < 1 or self.min_words > self.max_words:
            raise UsageError(f"bad utterance length range [{self.min_words}, {self.max_words}]")
        if self.rare_stratum_count and self.rare_threshold < 2:
            raise UsageError("a rare stratum needs rare_threshold >= 2")
        if self.common_vocab < 1:
            raise UsageError("common_vocab must be >= 1")


@dataclass
class Lexicon:
    """Word types by stratum; 'kind' of a rare word is one of rpn, rlm, clm."""
    common: List[str]
    common_proper: List[str]
    rare: List[str]
    rare_kind: Dict[str, str]
    text_only: List[str]
    text_only_kind: Dict[str, str]
    zipf_weights: np.ndarray = field(repr=False, default=None)

    @property
    def pool(self) -> List[str]:
        """Frequent words sampled as filler, in Zipf rank order."""
        return self.common + self.common_proper

    def alphabet(self) -> List[str]:
        chars = set()
        for word in self.pool + self.rare + self.text_only:
            chars.update(word)
        return sorted(chars)

    def words_of_kind(self, kind: str) -> List[str]:
        out = [w for w in self.rare if self.rare_kind[w] == kind]
        out += [w for w in self.text_only if self.text_only_kind[w] == kind]
        return out


def _make_stem(rng: np.random.Generator) -> str:
    syllables = int(rng.integers(1, 4))
    return ''.join(ONSETS[rng.integers(len(ONSETS))] + NUCLEI[rng.integers(len(NUCLEI))]
                   + CODAS[rng.integers(len(CODAS))] for _ in range(syllables))


def build_lexicon(config: CorpusConfig, seed: int) -> Lexicon:
    """Draw distinct word stems and assign them to strata."""
    rng = np.random.default_rng(derive_seed(seed, 'lexicon'))
    total = config.common_vocab + config.proper_noun_count + config.rare_stratum_count + config.text_only_vocab
    stems: List[str] = []
    seen = set()
    while len(stems) < total:
        stem = _make_stem(rng)
        if stem not in seen:
            seen.add(stem)
            stems.append(stem)

    i = 0
    common = stems[i:i + config.common_vocab]
    i += config.common_vocab
    common_proper = [PROPER_NOUN_MARKER + s for s in stems[i:i + config.proper_noun_count]]
    i += config.proper_noun_count

    rare: List[str] = []
    rare_kind: Dict[str, str] = {}
    for j, stem in enumerate(stems[i:i + config.rare_stratum_count]):
        kind = ('rpn', 'rlm', 'clm')[j % 3]
        word = PROPER_NOUN_MARKER + stem if kind == 'rpn' else stem
        rare.append(word)
        rare_kind[word] = kind
    i += config.rare_stratum_count

    text_only = stems[i:i + config.text_only_vocab]
    text_only_kind = {w: ('clm', 'rlm')[j % 2] for j, w in enumerate(text_only)}

    ranks = np.arange(1, len(common) + len(common_proper) + 1, dtype=np.float64)
    weights = ranks ** -config.zipf_exponent
    weights /= weights.sum()
    return Lexicon(common, common_proper, rare, rare_kind, text_only, text_only_kind, weights)


def _fill_utterances(n: int, required: List[str], lexicon: Lexicon, config: CorpusConfig,
                     rng: np.random.Generator, name: str) -> List[TokenSequence]:
    lengths = rng.integers(config.min_words, config.max_words + 1, size=n)
    slots = int(lengths.sum())
    if len(required) > slots:
        raise UsageError(f"{name}: {slots} word slots cannot hold {len(required)} stratum occurrences; "
                         f"increase the corpus size or shrink the lexicon")
    filler = rng.choice(len(lexicon.pool), size=slots - len(required), p=lexicon.zipf_weights)
    tokens = np.array(required + [lexicon.pool[k] for k in filler], dtype=object)
    tokens = tokens[rng.permutation(slots)]
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    return [list(tokens[bounds[k]:bounds[k + 1]]) for k in range(n)]


def _speech(oracle: TtsOracle, words: TokenSequence, noise: float, seed: int) -> FeatureSequence:
    feats = tts_synthesize(oracle, words)
    frames = feats.frames
    if noise > 0:
        frames = frames + np.random.default_rng(seed).normal(0.0, noise, size=frames.shape)
    # corpora live in float32 on disk; keep the in-memory copy identical
    return FeatureSequence(frames.astype('<f4').astype(np.float64), feats.frame_step_ms)


def _voice(config: CorpusConfig, lexicon: Lexicon, seed: int, label: str) -> TtsOracle:
    return TtsOracle(derive_seed(seed, label), config.feature_dim, lexicon.alphabet(),
                     jitter=config.tts_jitter, base_seed=derive_seed(seed, 'phonetics'),
                     frame_step_ms=config.frame_step_ms)


def training_tts_oracle(config: CorpusConfig, seed: int,
                        alphabet: Optional[Sequence[str]] = None) -> TtsOracle:
    """The augmentation TTS voice: same phonetics as the corpora, its own voice seed."""
    if alphabet is None:
        alphabet = build_lexicon(config, seed).alphabet()
    return TtsOracle(derive_seed(seed, 'tts'), config.feature_dim, alphabet,
                     jitter=config.tts_jitter, base_seed=derive_seed(seed, 'phonetics'),
                     frame_step_ms=config.frame_step_ms)


def synth_corpora(config: CorpusConfig, seed: int) -> Corpora:
    """
    Generate 𝒮, 𝒰^S and 𝒰^T as a pure function of (config, seed).

    Args:
        config: Corpus sizes and lexicon shape
        seed: Master seed

    Returns:
        Corpora(supervised, unsup_audio, unsup_text)
    """
    config.check()
    lexicon = build_lexicon(config, seed)
    rng = np.random.default_rng(derive_seed(seed, 'corpus'))
    t_rare, t_common = config.rare_threshold, config.common_threshold

    required_s: List[str] = []
    for word in lexicon.pool:
        required_s += [word] * t_rare
    for word in lexicon.rare:
        required_s += [word] * int(rng.integers(1, t_rare))
    texts_s = _fill_utterances(config.supervised_size, required_s, lexicon, config, rng, 'supervised')

    required_t: List[str] = []
    for word in lexicon.rare + lexicon.text_only:
        kind = lexicon.rare_kind.get(word) or lexicon.text_only_kind[word]
        if kind == 'clm':
            count = t_common + int(rng.integers(0, t_common // 2 + 1))
        elif word in lexicon.text_only:
            count = int(rng.integers(min(1, t_rare - 1), t_rare))
        else:
            count = int(rng.integers(0, t_rare))
        required_t += [word] * count
    texts_t = _fill_utterances(config.unsup_text_size, required_t, lexicon, config, rng, 'unsup_text')

    texts_a = _fill_utterances(config.unsup_audio_size, [], lexicon, config, rng, 'unsup_audio')

    voice = _voice(config, lexicon, seed, 'voice-train')
    supervised = [
        SupervisedExample(_speech(voice, text, config.feature_noise, derive_seed(seed, 'noise', 'S', k)),
                          text, f"sup-{k:06d}")
        for k, text in enumerate(texts_s)
    ]
    unsup_audio = [
        UnsupervisedAudio(_speech(voice, text, config.feature_noise, derive_seed(seed, 'noise', 'US', k)),
                          f"ua-{k:06d}")
        for k, text in enumerate(texts_a)
    ]
    unsup_text = [UnsupervisedText(text, f"ut-{k:06d}") for k, text in enumerate(texts_t)]
    logger.info(f"Synthesized corpora: |S|={len(supervised)}, |U^S|={len(unsup_audio)}, "
                f"|U^T|={len(unsup_text)} (seed {seed})")
    return Corpora(supervised, unsup_audio, unsup_text)


def synth_held_out(config: CorpusConfig, seed: int) -> List[SupervisedExample]:
    """
    Held-out evaluation pool, spoken by a distinct test voice.

    Utterances cycle through injecting nothing, a rare proper noun, a word
    rare in both corpora, or a word rare in 𝒮 but common in 𝒰^T.
    """
    config.check()
    lexicon = build_lexicon(config, seed)
    rng = np.random.default_rng(derive_seed(seed, 'held-out'))
    inject = {1: lexicon.words_of_kind('rpn'), 2: lexicon.words_of_kind('rlm'),
              3: lexicon.words_of_kind('clm')}
    texts = _fill_utterances(config.held_out_size, [], lexicon, config, rng, 'held_out')
    for k, text in enumerate(texts):
        candidates = inject.get(k % 4)
        if candidates:
            text[int(rng.integers(len(text)))] = candidates[int(rng.integers(len(candidates)))]
    voice = _voice(config, lexicon, seed, 'voice-test')
    return [
        SupervisedExample(_speech(voice, text, config.feature_noise, derive_seed(seed, 'noise', 'H', k)),
                          text, f"test-{k:06d}")
        for k, text in enumerate(texts)
    ]


# ---------------------------------------------------------------------------
# on-disk format

def write_corpus(directory: str, name: str, examples: Sequence[Example]) -> str:
    """
    Write `<name>.tsv` (id, text, feature_offset, feature_len) and `<name>.feats`.

    Returns:
        Manifest path
    """
    os.makedirs(directory, exist_ok=True)
    manifest = os.path.join(directory, name + MANIFEST_SUFFIX)
    features = os.path.join(directory, name + FEATURES_SUFFIX)
    offset = 0
    with open(manifest, 'w', encoding='utf-8') as m, open(features, 'wb') as f:
        for ex in examples:
            text = ' '.join(getattr(ex, 'text', []) or [])
            audio = getattr(ex, 'audio', None)
            length = audio.num_frames if audio is not None else 0
            m.write(f"{ex.id}\t{text}\t{offset}\t{length}\n")
            if length:
                f.write(np.ascontiguousarray(audio.frames, dtype='<f4').tobytes())
            offset += length
    logger.debug(f"Wrote {len(examples)} records to {manifest}")
    return manifest


def read_corpus(directory: str, name: str, frame_step_ms: float = 10.0) -> List[Example]:
    """
    Read a corpus written by write_corpus.

    Records with text and features load as SupervisedExample, features only
    as UnsupervisedAudio, text only as UnsupervisedText.
    """
    manifest = os.path.join(directory, name + MANIFEST_SUFFIX)
    features = os.path.join(directory, name + FEATURES_SUFFIX)
    if not os.path.exists(manifest):
        raise CorpusError(f"missing corpus manifest {manifest}")
    records = []
    with open(manifest, 'r', encoding='utf-8') as m:
        for line_no, line in enumerate(m, start=1):
            parts = line.rstrip('\n').split('\t')
            if len(parts) != 4:
                raise CorpusError(f"{manifest} line {line_no}: expected 4 tab-separated fields")
            records.append((parts[0], parts[1].split(), int(parts[2]), int(parts[3])))
    total = sum(r[3] for r in records)
    flat = np.fromfile(features, dtype='<f4') if os.path.exists(features) else np.zeros(0, '<f4')
    if total and flat.size % total:
        raise CorpusError(f"{features}: {flat.size} floats do not divide into {total} frames")
    dim = flat.size // total if total else 0
    if total and dim == 0:
        raise CorpusError(f"{features}: no feature data for {total} frames")
    matrix = flat.reshape(total, dim) if total else flat.reshape(0, 0)

    out: List[Example] = []
    for ex_id, text, offset, length in records:
        if length:
            audio = FeatureSequence(matrix[offset:offset + length].astype(np.float64), frame_step_ms)
            out.append(SupervisedExample(audio, text, ex_id) if text else UnsupervisedAudio(audio, ex_id))
        else:
            out.append(UnsupervisedText(text, ex_id))
    return out


def write_corpora(directory: str, corpora: Corpora,
                  held_out: Optional[List[SupervisedExample]] = None) -> None:
    write_corpus(directory, 'supervised', corpora.supervised)
    write_corpus(directory, 'unsup_audio', corpora.unsup_audio)
    write_corpus(directory, 'unsup_text', corpora.unsup_text)
    if held_out is not None:
        write_corpus(directory, 'held_out', held_out)


def read_corpora(directory: str, frame_step_ms: float = 10.0) -> Corpora:
    if not os.path.isdir(directory):
        raise CorpusError(f"corpus directory {directory} does not exist")
    return Corpora(read_corpus(directory, 'supervised', frame_step_ms),
                   read_corpus(directory, 'unsup_audio', frame_step_ms),
                   read_corpus(directory, 'unsup_text', frame_step_ms))
