"""
Cascaded conformer encoder.

E_C runs strictly causal blocks; E_NC continues from E_C's output with a
total right-context budget spread over its layers. Both are built from the
same block: half-step feed-forward, masked relative-position self-attention,
depthwise convolution, half-step feed-forward, final layer norm.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Tuple

import numpy as np

from config.settings import Settings
from src.numerics.tensor import (
    Tensor, as_tensor, add, mul, scale, silu, softmax, layer_norm, matmul,
    reshape, transpose, take, shift_rows,
)
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Encoders')

# name -> (shape, init) where init is 'normal', 'zeros' or 'ones'
ParamSpecs = Dict[str, Tuple[Tuple[int, ...], str]]


@dataclass
class EncoderConfig:
    causal_layers: int = 2
    noncausal_layers: int = 3
    model_dim: int = 64
    heads: int = 4
    right_context_frames: int = 6
    conv_kernel: int = 7
    ff_mult: int = 4
    max_rel_position: int = 16
    input_dim: int = 64

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise UsageError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.right_context_frames < 0:
            raise UsageError("right_context_frames must be >= 0")

    @classmethod
    def from_settings(cls, s: Settings) -> 'EncoderConfig':
        return cls(causal_layers=s.causal_layers, noncausal_layers=s.noncausal_layers,
                   model_dim=s.model_dim, heads=s.heads, right_context_frames=s.right_context_frames,
                   conv_kernel=s.conv_kernel, ff_mult=s.ff_mult, max_rel_position=s.max_rel_position,
                   input_dim=s.stack_size * s.feature_dim)


@dataclass(frozen=True)
class AttentionMask:
    """Future frames visible to one block: attention lookahead and convolution lookahead."""
    attention_lookahead: int = 0
    conv_lookahead: int = 0

    @property
    def is_causal(self) -> bool:
        return self.attention_lookahead == 0 and self.conv_lookahead == 0

    def additive(self, length: int) -> np.ndarray:
        """[T x T] matrix: 0 where key s <= query t + lookahead, -inf elsewhere."""
        t = np.arange(length)
        allowed = t[None, :] <= t[:, None] + self.attention_lookahead
        return np.where(allowed, 0.0, -np.inf)


CAUSAL = AttentionMask(0, 0)


@dataclass
class EncoderOutput:
    frames: Tensor

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def noncausal_masks(cfg: EncoderConfig) -> List[AttentionMask]:
    """
    Split the right-context budget over the non-causal layers.

    Each layer's share goes to convolution lookahead first (up to half the
    kernel), the rest to attention; the shares sum to right_context_frames.
    """
    n = cfg.noncausal_layers
    if n == 0:
        return []
    base, extra = divmod(cfg.right_context_frames, n)
    masks = []
    for i in range(n):
        share = base + (1 if i < extra else 0)
        conv = min(share, (cfg.conv_kernel - 1) // 2)
        masks.append(AttentionMask(attention_lookahead=share - conv, conv_lookahead=conv))
    return masks


def block_param_specs(prefix: str, cfg: EncoderConfig) -> ParamSpecs:
    d, f, k = cfg.model_dim, cfg.model_dim * cfg.ff_mult, cfg.conv_kernel
    specs: ParamSpecs = {}
    for ff in ('ff1', 'ff2'):
        specs.update({
            f'{prefix}.{ff}.ln.g': ((d,), 'ones'), f'{prefix}.{ff}.ln.b': ((d,), 'zeros'),
            f'{prefix}.{ff}.w1': ((d, f), 'normal'), f'{prefix}.{ff}.b1': ((f,), 'zeros'),
            f'{prefix}.{ff}.w2': ((f, d), 'normal'), f'{prefix}.{ff}.b2': ((d,), 'zeros'),
        })
    specs.update({
        f'{prefix}.att.ln.g': ((d,), 'ones'), f'{prefix}.att.ln.b': ((d,), 'zeros'),
        f'{prefix}.att.wq': ((d, d), 'normal'), f'{prefix}.att.wk': ((d, d), 'normal'),
        f'{prefix}.att.wv': ((d, d), 'normal'), f'{prefix}.att.wo': ((d, d), 'normal'),
        f'{prefix}.att.bo': ((d,), 'zeros'),
        f'{prefix}.att.rel': ((cfg.heads, 2 * cfg.max_rel_position + 1), 'zeros'),
        f'{prefix}.conv.ln.g': ((d,), 'ones'), f'{prefix}.conv.ln.b': ((d,), 'zeros'),
        f'{prefix}.conv.pw1': ((d, d), 'normal'), f'{prefix}.conv.pw1b': ((d,), 'zeros'),
        f'{prefix}.conv.dw': ((k, d), 'normal'), f'{prefix}.conv.dwb': ((d,), 'zeros'),
        f'{prefix}.conv.pw2': ((d, d), 'normal'), f'{prefix}.conv.pw2b': ((d,), 'zeros'),
        f'{prefix}.out.ln.g': ((d,), 'ones'), f'{prefix}.out.ln.b': ((d,), 'zeros'),
    })
    return specs


# output projections of each residual branch; zeroing them makes a block the identity before its final norm
RESIDUAL_OUTPUTS = ('ff1.w2', 'ff1.b2', 'att.wo', 'att.bo', 'conv.pw2', 'conv.pw2b', 'ff2.w2', 'ff2.b2')


def encoder_param_specs(cfg: EncoderConfig) -> ParamSpecs:
    specs: ParamSpecs = {
        'enc.input.w': ((cfg.input_dim, cfg.model_dim), 'normal'),
        'enc.input.b': ((cfg.model_dim,), 'zeros'),
    }
    for i in range(cfg.causal_layers):
        specs.update(block_param_specs(f'enc.c.{i}', cfg))
    for i in range(cfg.noncausal_layers):
        specs.update(block_param_specs(f'enc.nc.{i}', cfg))
    return specs


def _feed_forward(x: Tensor, p: Mapping[str, Tensor], prefix: str) -> Tensor:
    h = layer_norm(x, p[f'{prefix}.ln.g'], p[f'{prefix}.ln.b'])
    h = silu(add(matmul(h, p[f'{prefix}.w1']), p[f'{prefix}.b1']))
    return add(matmul(h, p[f'{prefix}.w2']), p[f'{prefix}.b2'])


def relative_offsets(length: int, max_rel: int) -> np.ndarray:
    """Column index into the bias table for key s and query t: clip(s - t) + max_rel."""
    t = np.arange(length)
    return np.clip(t[None, :] - t[:, None], -max_rel, max_rel) + max_rel


def _self_attention(x: Tensor, p: Mapping[str, Tensor], prefix: str, mask: AttentionMask,
                    cfg: EncoderConfig) -> Tensor:
    length, d = x.shape
    heads, dh = cfg.heads, d // cfg.heads
    h = layer_norm(x, p[f'{prefix}.ln.g'], p[f'{prefix}.ln.b'])

    def split(w):
        return transpose(reshape(matmul(h, p[f'{prefix}.{w}']), (length, heads, dh)), (1, 0, 2))

    q, k, v = split('wq'), split('wk'), split('wv')
    scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    scores = add(scores, take(p[f'{prefix}.rel'], relative_offsets(length, cfg.max_rel_position), axis=1))
    scores = add(scores, Tensor(mask.additive(length)))
    context = matmul(softmax(scores), v)
    merged = reshape(transpose(context, (1, 0, 2)), (length, d))
    return add(matmul(merged, p[f'{prefix}.wo']), p[f'{prefix}.bo'])


def _convolution(x: Tensor, p: Mapping[str, Tensor], prefix: str, mask: AttentionMask,
                 cfg: EncoderConfig) -> Tensor:
    h = layer_norm(x, p[f'{prefix}.ln.g'], p[f'{prefix}.ln.b'])
    h = add(matmul(h, p[f'{prefix}.pw1']), p[f'{prefix}.pw1b'])
    # taps cover offsets (lookahead - K + 1) .. lookahead
    kernel = cfg.conv_kernel
    acc = None
    for j in range(kernel):
        offset = mask.conv_lookahead - (kernel - 1) + j
        term = mul(shift_rows(h, -offset), take(p[f'{prefix}.dw'], j, axis=0))
        acc = term if acc is None else add(acc, term)
    h = silu(add(acc, p[f'{prefix}.dwb']))
    return add(matmul(h, p[f'{prefix}.pw2']), p[f'{prefix}.pw2b'])


def conformer_block(x: Tensor, params: Mapping[str, Tensor], prefix: str,
                    attention_mask: AttentionMask, cfg: EncoderConfig) -> Tensor:
    """
    One conformer block.

    Args:
        x: [T x model_dim] input
        params: Parameter mapping
        prefix: Parameter name prefix, e.g. 'enc.c.0'
        attention_mask: Lookahead of this block
        cfg: Encoder configuration

    Returns:
        [T x model_dim] output
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError(f"conformer_block needs a non-empty [T x d] input, got {x.shape}")
    if x.shape[1] != cfg.model_dim:
        raise UsageError(f"conformer_block: input dim {x.shape[1]} != model_dim {cfg.model_dim}")
    x = add(x, scale(_feed_forward(x, params, f'{prefix}.ff1'), 0.5))
    x = add(x, _self_attention(x, params, f'{prefix}.att', attention_mask, cfg))
    x = add(x, _convolution(x, params, f'{prefix}.conv', attention_mask, cfg))
    x = add(x, scale(_feed_forward(x, params, f'{prefix}.ff2'), 0.5))
    return layer_norm(x, params[f'{prefix}.out.ln.g'], params[f'{prefix}.out.ln.b'])


def encode_causal(x, params: Mapping[str, Tensor], cfg: EncoderConfig) -> EncoderOutput:
    """
    Project stacked features (or text-frontend output) and run the causal stack.

    Args:
        x: [T' x input_dim] array or Tensor
        params: Parameter mapping
        cfg: Encoder configuration

    Returns:
        EncoderOutput with T' frames
    """
    x = as_tensor(getattr(x, 'frames', x))
    if x.ndim != 2 or x.shape[0] == 0:
        raise UsageError(f"encode_causal needs a non-empty [T x {cfg.input_dim}] input, got {x.shape}")
    if x.shape[1] != cfg.input_dim:
        raise UsageError(f"encode_causal: input dim {x.shape[1]} != {cfg.input_dim}")
    h = add(matmul(x, params['enc.input.w']), params['enc.input.b'])
    for i in range(cfg.causal_layers):
        h = conformer_block(h, params, f'enc.c.{i}', CAUSAL, cfg)
    return EncoderOutput(h)


def encode_noncausal(h: EncoderOutput, params: Mapping[str, Tensor], cfg: EncoderConfig) -> EncoderOutput:
    """Run the non-causal stack over E_C's output within the right-context budget."""
    frames = h.frames if isinstance(h, EncoderOutput) else as_tensor(h)
    if frames.shape[0] == 0:
        raise UsageError("encode_noncausal needs a non-empty input")
    for i, mask in enumerate(noncausal_masks(cfg)):
        frames = conformer_block(frames, params, f'enc.nc.{i}', mask, cfg)
    return EncoderOutput(frames)


def count_parameters(params: Mapping[str, Tensor]) -> Dict[str, int]:
    """
    Parameter counts per component (first two name parts), plus 'total'.

    Args:
        params: Parameter mapping

    Returns:
        Ordered dict of component -> count
    """
    counts: Dict[str, int] = {}
    for name in sorted(params):
        component = '.'.join(name.split('.')[:2])
        counts[component] = counts.get(component, 0) + int(params[name].data.size)
    counts['total'] = sum(counts.values())
    return counts
