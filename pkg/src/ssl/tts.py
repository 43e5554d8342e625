"""
Deterministic synthetic TTS oracle.

Each word maps to a feature template built from per-character vectors. The
character vectors come from a shared base seed plus a voice-specific offset,
so several voices (training speech, augmentation TTS, test speech) sound
alike without being identical.
"""
import logging
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from config.settings import derive_seed
from src.frontends.audio import FeatureSequence
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.SSL')

MIN_TEMPLATE_FRAMES = 6
MAX_TEMPLATE_FRAMES = 12


def template_length(word: str) -> int:
    return int(min(MAX_TEMPLATE_FRAMES, max(MIN_TEMPLATE_FRAMES, 2 * len(word))))


class TtsOracle:
    """Per-token feature templates with seeded jitter."""

    def __init__(self, seed: int, feature_dim: int, alphabet: Iterable[str],
                 jitter: float = 0.05, base_seed: Optional[int] = None,
                 voice_scale: float = 0.25, frame_step_ms: float = 10.0):
        if feature_dim < 1:
            raise UsageError("TTS oracle needs feature_dim >= 1")
        self.seed = int(seed)
        self.base_seed = int(seed if base_seed is None else base_seed)
        self.feature_dim = feature_dim
        self.jitter = float(jitter)
        self.voice_scale = float(voice_scale)
        self.frame_step_ms = frame_step_ms
        self.alphabet = sorted(set(alphabet))
        self._chars: Dict[str, np.ndarray] = {}
        for ch in self.alphabet:
            base = np.random.default_rng(derive_seed(self.base_seed, 'char', ch)).normal(size=feature_dim)
            voice = np.random.default_rng(derive_seed(self.seed, 'voice', ch)).normal(size=feature_dim)
            self._chars[ch] = base + self.voice_scale * voice
        self._templates: Dict[str, np.ndarray] = {}

    def knows(self, word: str) -> bool:
        return bool(word) and all(ch in self._chars for ch in word)

    def template(self, word: str) -> np.ndarray:
        """Feature template [L x D] for one word, L in [6, 12]."""
        cached = self._templates.get(word)
        if cached is not None:
            return cached
        if not self.knows(word):
            raise UsageError(f"TTS oracle cannot synthesize token {word!r}")
        n = template_length(word)
        rows = np.empty((n, self.feature_dim))
        for i in range(n):
            rows[i] = self._chars[word[i * len(word) // n]]
        # smooth within-word contour so repeated characters are not flat
        contour = np.random.default_rng(derive_seed(self.base_seed, 'contour', word)).normal(
            scale=0.2, size=self.feature_dim)
        rows += np.linspace(-1.0, 1.0, n)[:, None] * contour[None, :]
        rows.setflags(write=False)
        self._templates[word] = rows
        return rows


def tts_synthesize(oracle: TtsOracle, y: Sequence[str]) -> FeatureSequence:
    """
    Synthesize features for a word sequence.

    Args:
        oracle: TTS oracle
        y: Words, each over the oracle's alphabet

    Returns:
        FeatureSequence with sum of template lengths frames (empty for empty y)
    """
    words = list(y)
    if not words:
        return FeatureSequence(np.zeros((0, oracle.feature_dim)), oracle.frame_step_ms)
    frames = np.concatenate([oracle.template(w) for w in words], axis=0)
    if oracle.jitter > 0:
        rng = np.random.default_rng(derive_seed(oracle.seed, 'jitter', ' '.join(words)))
        frames = frames + rng.normal(0.0, oracle.jitter, size=frames.shape)
    return FeatureSequence(frames, oracle.frame_step_ms)
