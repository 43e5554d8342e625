"""
JOIST text injection: masked phonemes through the text frontend into the
shared cascaded encoder, trained against the unmasked wordpieces.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.core.model import ModelParams, cascade_losses
from src.data.corpora import UnsupervisedText
from src.data.g2p import G2PTable, grapheme_to_phoneme
from src.data.wordpiece import WordpieceModel
from src.frontends.text import PhonemeSequence, phoneme_mask, text_frontend
from src.numerics.tensor import Tensor
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.SSL')


@dataclass
class JoistExample:
    phonemes: PhonemeSequence
    targets: List[int]
    id: str


def prepare_joist(y: UnsupervisedText, wordpieces: WordpieceModel, g2p: G2PTable,
                  mask_ratio: float, rng: np.random.Generator) -> JoistExample:
    """Phonemize and mask one text example; targets are the unmasked wordpieces."""
    if not y.text:
        raise UsageError(f"JOIST needs a non-empty text example ({y.id})")
    masked = phoneme_mask(grapheme_to_phoneme(y.text, g2p), mask_ratio, rng)
    return JoistExample(masked, wordpieces.encode(y.text), y.id)


def joist_losses(example: JoistExample, params: ModelParams, causal: bool = True,
                 noncausal: bool = True) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    """(causal, non-causal) transducer losses of a prepared JOIST example; unrequested ones are None."""
    x = text_frontend(example.phonemes, params, params.settings.upsample)
    return cascade_losses(params, x, example.targets, causal=causal, noncausal=noncausal)


def joist_forward(y: UnsupervisedText, params: ModelParams, wordpieces: WordpieceModel,
                  g2p: G2PTable, rng: np.random.Generator) -> Tuple[Tensor, Tensor]:
    """
    Full JOIST pipeline for one text example.

    Args:
        y: Text example
        params: Model parameters (mask ratio and upsampling come from its settings)
        wordpieces: Target vocabulary
        g2p: Phoneme table
        rng: Seeded generator for the phoneme mask

    Returns:
        (loss_causal, loss_noncausal)
    """
    example = prepare_joist(y, wordpieces, g2p, params.settings.mask_ratio_text, rng)
    return joist_losses(example, params)
