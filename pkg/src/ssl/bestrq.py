"""
BEST-RQ: frozen random-projection quantizer and masked-prediction loss.
"""
import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from src.encoders.conformer import EncoderOutput, ParamSpecs
from src.frontends.audio import MaskInfo, StackedFeatures
from src.numerics.tensor import (
    Tensor, add, as_tensor, log_softmax, matmul, mean, neg, pick, seq_sum, take,
)
from src.utils.errors import UsageError, SkipExample

logger = logging.getLogger('Cascade.SSL')

QUANTIZE_CHUNK = 512


@dataclass
class Quantizer:
    """Projection [D_stack x d_code] and unit-norm codebook [K x d_code], both read-only."""
    projection: np.ndarray
    codebook: np.ndarray
    seed: int
    frozen: bool = True

    @property
    def codebook_size(self) -> int:
        return self.codebook.shape[0]

    def freeze(self) -> 'Quantizer':
        self.projection.setflags(write=False)
        self.codebook.setflags(write=False)
        self.frozen = True
        return self


def _l2_normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.sqrt(seq_sum(rows * rows))
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > 0, rows / safe, 0.0)


def init_quantizer(seed: int, stacked_dim: int, code_dim: int, codebook_size: int) -> Quantizer:
    """
    Draw the frozen projection (entries N(0, 1/d_code)) and L2-normalized codebook.

    Args:
        seed: Quantizer seed
        stacked_dim: D_stack
        code_dim: d_code
        codebook_size: K

    Returns:
        Frozen Quantizer
    """
    if codebook_size < 2 or code_dim < 1:
        raise UsageError(f"quantizer needs K >= 2 and d_code >= 1 (got {codebook_size}, {code_dim})")
    rng = np.random.default_rng(seed)
    projection = rng.normal(0.0, np.sqrt(1.0 / code_dim), size=(stacked_dim, code_dim))
    codebook = _l2_normalize(rng.normal(size=(codebook_size, code_dim)))
    return Quantizer(projection, codebook, int(seed)).freeze()


def project(q: Quantizer, frames: np.ndarray) -> np.ndarray:
    """L2-normalized projections of stacked frames; all-zero projections stay zero."""
    frames = np.asarray(getattr(frames, 'frames', frames), dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != q.projection.shape[0]:
        raise UsageError(f"quantize: frame dim {frames.shape[-1]} does not match projection "
                         f"{q.projection.shape[0]}")
    return _l2_normalize(frames @ q.projection)


def quantize(q: Quantizer, sf: StackedFeatures) -> np.ndarray:
    """
    Nearest codebook index per stacked frame (lowest index on ties).

    Args:
        q: Quantizer
        sf: Unmasked stacked features

    Returns:
        int64 indices, one per frame
    """
    v = project(q, sf)
    out = np.empty(v.shape[0], dtype=np.int64)
    for start in range(0, v.shape[0], QUANTIZE_CHUNK):
        block = v[start:start + QUANTIZE_CHUNK]
        diff = block[:, None, :] - q.codebook[None, :, :]
        dist = seq_sum(diff * diff, axis=-1, keepdims=False)
        out[start:start + block.shape[0]] = np.argmin(dist, axis=1)
    return out


def bestrq_head_specs(model_dim: int, codebook_size: int, causal_head: bool = False) -> ParamSpecs:
    specs: ParamSpecs = {
        'bestrq.nc.w': ((model_dim, codebook_size), 'normal'),
        'bestrq.nc.b': ((codebook_size,), 'zeros'),
    }
    if causal_head:
        specs.update({
            'bestrq.c.w': ((model_dim, codebook_size), 'normal'),
            'bestrq.c.b': ((codebook_size,), 'zeros'),
        })
    return specs


def bestrq_loss(h, targets: np.ndarray, info: MaskInfo, params: Mapping[str, Tensor],
                prefix: str = 'bestrq.nc') -> Tensor:
    """
    Mean cross-entropy of the head's codebook prediction over masked frames.

    Args:
        h: Encoder output from the masked input
        targets: Codebook indices from the unmasked input
        info: Mask span
        params: Parameter mapping holding '<prefix>.w' and '<prefix>.b'

    Raises:
        SkipExample: no frame is masked
    """
    frames = h.frames if isinstance(h, EncoderOutput) else as_tensor(h)
    targets = np.asarray(targets, dtype=np.int64)
    if not frames.shape[0] == targets.shape[0] == info.flags.shape[0]:
        raise UsageError(f"bestrq_loss: lengths differ ({frames.shape[0]}, {targets.shape[0]}, "
                         f"{info.flags.shape[0]})")
    positions = np.flatnonzero(info.flags)
    if positions.size == 0:
        raise SkipExample("no masked frames")
    logits = add(matmul(take(frames, positions, axis=0), params[f'{prefix}.w']), params[f'{prefix}.b'])
    return neg(mean(pick(log_softmax(logits), targets[positions])))
