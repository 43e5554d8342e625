"""
Cascade model core.
Holds every named parameter of the cascaded-encoder HAT model, the frozen
BEST-RQ quantizer, and the shared forward passes used by the ASR, JOIST
and TTS tasks.
"""
import logging
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config.settings import Settings, derive_seed
from src.encoders.conformer import (
    EncoderConfig, ParamSpecs, RESIDUAL_OUTPUTS, count_parameters, encode_causal,
    encode_noncausal, encoder_param_specs,
)
from src.frontends.text import NUM_PHONEME_IDS
from src.numerics.tensor import Tensor, parameter
from src.ssl.bestrq import Quantizer, bestrq_head_specs, init_quantizer
from src.transducer.hat import HatDecoder, decoder_param_specs
from src.transducer.loss import transducer_loss
from src.utils.errors import CheckpointError

logger = logging.getLogger('Cascade.Core')

DECODER_PREFIXES = {'c': 'dec.c', 'nc': 'dec.nc'}


def model_param_specs(s: Settings) -> ParamSpecs:
    """Every trainable parameter's shape and init kind for a configuration."""
    cfg = EncoderConfig.from_settings(s)
    specs = encoder_param_specs(cfg)
    for prefix in DECODER_PREFIXES.values():
        specs.update(decoder_param_specs(prefix, s.model_dim, s.decoder_dim, s.joint_dim,
                                         s.label_embed_dim, s.vocab_size))
    specs.update({
        'text.embed': ((NUM_PHONEME_IDS, s.phoneme_embed_dim), 'normal'),
        'text.proj': ((s.phoneme_embed_dim, cfg.input_dim), 'normal'),
    })
    specs.update(bestrq_head_specs(s.model_dim, s.codebook_size, s.bestrq_causal_head))
    return specs


def _initial_value(name: str, shape: Tuple[int, ...], kind: str, seed: int) -> np.ndarray:
    if kind == 'zeros':
        return np.zeros(shape)
    if kind == 'ones':
        return np.ones(shape)
    rng = np.random.default_rng(derive_seed(seed, 'init', name))
    return rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)


class ModelParams(Mapping[str, Tensor]):
    """Named trainable tensors plus the frozen quantizer of one model configuration."""

    def __init__(self, tensors: Dict[str, Tensor], quantizer: Quantizer, settings: Settings):
        self.tensors = dict(tensors)
        self.quantizer = quantizer
        self.settings = settings
        self.encoder_config = EncoderConfig.from_settings(settings)

    @classmethod
    def initialize(cls, settings: Settings, zero_residuals: bool = False) -> 'ModelParams':
        """
        Build every parameter from the master seed, each array seeded by its own name.

        Args:
            settings: Configuration
            zero_residuals: Zero the output projection of every residual branch

        Returns:
            ModelParams
        """
        seed = settings.master_seed
        tensors = {}
        for name, (shape, kind) in sorted(model_param_specs(settings).items()):
            if zero_residuals and name.startswith('enc.') and name.endswith(RESIDUAL_OUTPUTS):
                kind = 'zeros'
            tensors[name] = parameter(_initial_value(name, shape, kind, seed))
        quantizer = init_quantizer(derive_seed(seed, 'quantizer'),
                                   settings.stack_size * settings.feature_dim,
                                   settings.code_dim, settings.codebook_size)
        params = cls(tensors, quantizer, settings)
        logger.info(f"Initialized model: {params.count()['total']:,} parameters "
                    f"(digest {settings.digest()[:12]})")
        return params

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def trainable(self) -> List[Tuple[str, Tensor]]:
        return [(name, self.tensors[name]) for name in sorted(self.tensors)]

    def zero_grad(self) -> None:
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def count(self) -> Dict[str, int]:
        return count_parameters(self.tensors)

    def decoder(self, which: str) -> HatDecoder:
        """Decoding view of D_C ('c') or D_NC ('nc')."""
        return HatDecoder(self.tensors, DECODER_PREFIXES[which])

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], quantizer: Quantizer,
                    settings: Settings) -> 'ModelParams':
        """Rebuild trainable tensors from saved arrays; names must match the configuration."""
        expected = model_param_specs(settings)
        missing = sorted(set(expected) - set(arrays))
        extra = sorted(set(arrays) - set(expected))
        if missing or extra:
            raise CheckpointError(
                f"parameter names differ from the configuration (missing {missing[:3]}, "
                f"unexpected {extra[:3]})", field='params')
        tensors = {}
        for name, (shape, _) in expected.items():
            if tuple(arrays[name].shape) != tuple(shape):
                raise CheckpointError(f"parameter {name} has shape {arrays[name].shape}, "
                                      f"expected {shape}", field='params')
            tensors[name] = parameter(np.array(arrays[name], dtype=np.float64))
        return cls(tensors, quantizer, settings)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.trainable()}


def cascade_losses(params: ModelParams, x, targets: Sequence[int], causal: bool = True,
                   noncausal: bool = True) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    """
    Transducer losses of both decoders for one encoder input.

    E_C feeds D_C; E_C then E_NC feeds D_NC. A decoder whose loss is not
    requested is never evaluated, and E_NC only runs for the non-causal loss.

    Args:
        params: Model parameters
        x: [T' x D_stack] stacked features or text-frontend output
        targets: Wordpiece ids
        causal: Compute the D_C loss
        noncausal: Compute the D_NC loss

    Returns:
        (causal loss or None, non-causal loss or None)
    """
    cfg = params.encoder_config
    h_c = encode_causal(x, params, cfg)
    loss_c = transducer_loss(h_c, targets, params, DECODER_PREFIXES['c']) if causal else None
    loss_nc = None
    if noncausal:
        h_nc = encode_noncausal(h_c, params, cfg)
        loss_nc = transducer_loss(h_nc, targets, params, DECODER_PREFIXES['nc'])
    return loss_c, loss_nc
