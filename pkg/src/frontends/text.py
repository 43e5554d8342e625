"""
Text frontend: phoneme inventory, phoneme masking and the learned projection
into the encoder input space with upsampling by repetition.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Mapping

import numpy as np

from src.numerics.tensor import Tensor, matmul, take
from src.frontends.audio import span_length
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Frontends')

LETTER_PHONEMES = [chr(c) for c in range(ord('A'), ord('Z') + 1)]
DIGRAPH_PHONEMES = ['CH', 'NG', 'SH', 'TH']
PROPER_NOUN_PHONEME = 'PN'
WORD_SEPARATOR_PHONEME = 'SP'

PHONEME_INVENTORY: List[str] = LETTER_PHONEMES + DIGRAPH_PHONEMES + [PROPER_NOUN_PHONEME, WORD_SEPARATOR_PHONEME]
PHONEME_IDS = {p: i for i, p in enumerate(PHONEME_INVENTORY)}
MASK_PHONEME_ID = len(PHONEME_INVENTORY)
NUM_PHONEME_IDS = MASK_PHONEME_ID + 1


@dataclass
class PhonemeSequence:
    """Phoneme ids (inventory ids or the mask id) with the masked positions flagged."""
    ids: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if self.mask is None:
            self.mask = np.zeros(self.ids.shape[0], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def symbols(self) -> List[str]:
        return ['<mask>' if i == MASK_PHONEME_ID else PHONEME_INVENTORY[i] for i in self.ids]


def text_frontend(ph: PhonemeSequence, params: Mapping[str, Tensor], upsample: int,
                  prefix: str = 'text') -> Tensor:
    """
    Embed phonemes, project to the stacked-feature dimension and repeat each row.

    Args:
        ph: Phoneme sequence (may contain the mask id)
        params: Parameter mapping holding '<prefix>.embed' and '<prefix>.proj'
        upsample: Repetitions per phoneme

    Returns:
        Tensor [upsample * |ph| x D_stack]
    """
    if upsample < 1:
        raise UsageError(f"upsample must be >= 1, got {upsample}")
    if len(ph) and (ph.ids.min() < 0 or ph.ids.max() > MASK_PHONEME_ID):
        bad = ph.ids[(ph.ids < 0) | (ph.ids > MASK_PHONEME_ID)][0]
        raise UsageError(f"unknown phoneme id {bad}")
    embedded = take(params[f'{prefix}.embed'], ph.ids, axis=0)
    projected = matmul(embedded, params[f'{prefix}.proj'])
    if upsample == 1:
        return projected
    return take(projected, np.repeat(np.arange(len(ph)), upsample), axis=0)


def phoneme_mask(ph: PhonemeSequence, mask_ratio: float, rng: np.random.Generator,
                 mean_span: float = 3.0) -> PhonemeSequence:
    """
    Mask contiguous phoneme spans until floor(mask_ratio * |ph|) positions are masked.

    Span lengths are geometric with the given mean; a draw longer than the
    remaining budget is redrawn.

    Args:
        ph: Unmasked phoneme sequence
        mask_ratio: Target masked fraction, in [0, 1)
        rng: Seeded generator

    Returns:
        New PhonemeSequence with masked ids replaced by the mask id
    """
    if not 0 <= mask_ratio < 1:
        raise UsageError(f"text mask_ratio must be in [0, 1), got {mask_ratio}")
    n = len(ph)
    target = span_length(mask_ratio, n) if n else 0
    ids = ph.ids.copy()
    flags = ph.mask.copy()
    masked = int(flags.sum())
    while masked < target:
        remaining = target - masked
        length = int(rng.geometric(1.0 / mean_span))
        while length > remaining:
            length = int(rng.geometric(1.0 / mean_span))
        start = int(rng.integers(0, n - length + 1))
        span = slice(start, start + length)
        masked += int((~flags[span]).sum())
        flags[span] = True
        ids[span] = MASK_PHONEME_ID
    return PhonemeSequence(ids=ids, mask=flags)
