"""
Configuration management for Cascade.
Loads a line-oriented `key = value` file (python-dotenv syntax), applies
defaults, validates every field and echoes the effective configuration.
"""
import io
import os
import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from src.utils.errors import ConfigError

# Load environment variables from .env file (CASCADE_CONFIG, CASCADE_THREADS)
load_dotenv()

logger = logging.getLogger('Cascade.Config')

EFFECTIVE_CONFIG_NAME = 'effective_config.env'


@dataclass(frozen=True)
class Field:
    """One configuration key: its section, type, default and range check."""
    section: str
    kind: type
    default: Any
    check: Optional[Callable[[Any], bool]] = None
    rule: str = ''


def _positive(v) -> bool:
    return v > 0


def _non_negative(v) -> bool:
    return v >= 0


def _open_unit(v) -> bool:
    return 0 < v < 1


def _half_open_unit(v) -> bool:
    return 0 <= v < 1


FIELDS: Dict[str, Field] = {
    # Seed
    'master_seed': Field('seed', int, 1234, _non_negative, '>= 0'),

    # Corpus synthesis
    'supervised_size': Field('corpus', int, 1000, _positive, '>= 1'),
    'unsup_audio_size': Field('corpus', int, 2000, _positive, '>= 1'),
    'unsup_text_size': Field('corpus', int, 5000, _positive, '>= 1'),
    'held_out_size': Field('corpus', int, 200, _positive, '>= 1'),
    'max_corpus_size': Field('corpus', int, 1_000_000, _positive, '>= 1'),
    'common_vocab': Field('corpus', int, 120, _positive, '>= 1'),
    'proper_noun_count': Field('corpus', int, 8, _non_negative, '>= 0'),
    'rare_stratum_count': Field('corpus', int, 20, _non_negative, '>= 0'),
    'text_only_vocab': Field('corpus', int, 40, _non_negative, '>= 0'),
    'min_words': Field('corpus', int, 3, _positive, '>= 1'),
    'max_words': Field('corpus', int, 7, _positive, '>= 1'),
    'zipf_exponent': Field('corpus', float, 1.1, _positive, '> 0'),
    'feature_dim': Field('corpus', int, 16, _positive, '>= 1'),
    'feature_noise': Field('corpus', float, 0.1, _non_negative, '>= 0'),
    'tts_jitter': Field('corpus', float, 0.05, _non_negative, '>= 0'),

    # Test partitions
    'rare_threshold': Field('partition', int, 5, _positive, '>= 1'),
    'common_threshold': Field('partition', int, 30, _positive, '>= 1'),
    'noisy_sigma': Field('partition', float, 0.5, _non_negative, '>= 0'),

    # Frontends
    'stack_size': Field('frontend', int, 4, _positive, '>= 1'),
    'stride': Field('frontend', int, 3, _positive, '>= 1'),
    'frame_step_ms': Field('frontend', float, 10.0, _positive, '> 0'),
    'mask_ratio_audio': Field('frontend', float, 0.15, _open_unit, 'in (0, 1)'),
    'mask_noise_std': Field('frontend', float, 0.1, _non_negative, '>= 0'),
    'mask_ratio_text': Field('frontend', float, 0.25, _half_open_unit, 'in [0, 1)'),
    'upsample': Field('frontend', int, 3, _positive, '>= 1'),
    'phoneme_embed_dim': Field('frontend', int, 32, _positive, '>= 1'),

    # Cascaded encoder
    'causal_layers': Field('encoder', int, 2, _non_negative, '>= 0'),
    'noncausal_layers': Field('encoder', int, 3, _non_negative, '>= 0'),
    'model_dim': Field('encoder', int, 64, _positive, '>= 1'),
    'heads': Field('encoder', int, 4, _positive, '>= 1'),
    'right_context_frames': Field('encoder', int, 6, _non_negative, '>= 0'),
    'conv_kernel': Field('encoder', int, 7, _positive, '>= 1'),
    'ff_mult': Field('encoder', int, 4, _positive, '>= 1'),
    'max_rel_position': Field('encoder', int, 16, _non_negative, '>= 0'),

    # HAT decoders
    'decoder_dim': Field('decoder', int, 64, _positive, '>= 1'),
    'joint_dim': Field('decoder', int, 64, _positive, '>= 1'),
    'label_embed_dim': Field('decoder', int, 32, _positive, '>= 1'),
    'vocab_size': Field('decoder', int, 256, lambda v: v >= 4, '>= 4'),
    'max_symbols': Field('decoder', int, 4, _positive, '>= 1'),

    # BEST-RQ quantizer
    'codebook_size': Field('quantizer', int, 256, lambda v: v >= 2, '>= 2'),
    'code_dim': Field('quantizer', int, 16, _positive, '>= 1'),
    'bestrq_causal_head': Field('quantizer', bool, False),

    # Training
    'experiment': Field('training', str, 'E-0'),
    'task_weights': Field('training', str, ''),
    'steps': Field('training', int, 500, _non_negative, '>= 0'),
    'continue_steps': Field('training', int, 200, _non_negative, '>= 0'),
    'batch_supervised': Field('training', int, 8, _positive, '>= 1'),
    'batch_unsup_audio': Field('training', int, 8, _positive, '>= 1'),
    'batch_unsup_text': Field('training', int, 8, _positive, '>= 1'),
    'learning_rate': Field('training', float, 1e-3, _positive, '> 0'),
    'warmup_steps': Field('training', int, 100, _non_negative, '>= 0'),
    'adam_beta1': Field('training', float, 0.9, _half_open_unit, 'in [0, 1)'),
    'adam_beta2': Field('training', float, 0.98, _half_open_unit, 'in [0, 1)'),
    'adam_eps': Field('training', float, 1e-9, _positive, '> 0'),
    'grad_clip': Field('training', float, 5.0, _non_negative, '>= 0'),
    'checkpoint_every': Field('training', int, 100, _positive, '>= 1'),
    'log_every': Field('training', int, 10, _positive, '>= 1'),
    'threads': Field('training', int, 1, _positive, '>= 1'),

    # Decoding
    'beam_width': Field('decode', int, 4, _positive, '>= 1'),
    'lattice_signature': Field('decode', str, 'full', lambda v: v in ('full', 'ngram'), "'full' or 'ngram'"),
    'lattice_ngram': Field('decode', int, 2, _positive, '>= 1'),

    # Paths
    'data_dir': Field('paths', str, 'data/corpora'),
    'runs_dir': Field('paths', str, 'runs'),
}

SECTIONS: List[str] = []
for _field in FIELDS.values():
    if _field.section not in SECTIONS:
        SECTIONS.append(_field.section)

# Fields that shape the model; a checkpoint only loads into a matching digest.
DIGEST_FIELDS: Tuple[str, ...] = tuple(
    name for name, f in FIELDS.items()
    if f.section in ('frontend', 'encoder', 'decoder', 'quantizer') and name not in (
        'mask_ratio_audio', 'mask_noise_std', 'mask_ratio_text', 'max_symbols'
    )
) + ('feature_dim',)


def _coerce(name: str, raw: str, line: Optional[int]):
    kind = FIELDS[name].kind
    text = raw.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ('true', '1', 'yes', 'on'):
                return True
            if lowered in ('false', '0', 'no', 'off'):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text.replace('_', ''))
        if kind is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse '{raw}' as {kind.__name__}", key=name, line=line)


class Settings:
    """Configuration settings for Cascade."""

    def __init__(self, **values):
        for name, f in FIELDS.items():
            setattr(self, name, f.default)
        for name, value in values.items():
            if name not in FIELDS:
                raise ConfigError("unknown configuration key", key=name)
            setattr(self, name, value)

    def validate(self, lines: Optional[Dict[str, int]] = None) -> bool:
        """
        Validate every field against its range and the cross-field constraints.

        Args:
            lines: Optional map of key -> source line, used in error messages

        Returns:
            True when valid

        Raises:
            ConfigError naming the offending key (and line when known)
        """
        lines = lines or {}
        for name, f in FIELDS.items():
            value = getattr(self, name)
            if f.check is not None and not f.check(value):
                raise ConfigError(f"value {value!r} out of range (must be {f.rule})",
                                  key=name, line=lines.get(name))

        if self.model_dim % self.heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}",
                              key='heads', line=lines.get('heads'))
        if self.min_words > self.max_words:
            raise ConfigError("min_words exceeds max_words", key='min_words', line=lines.get('min_words'))
        if self.common_threshold < self.rare_threshold:
            raise ConfigError("common_threshold below rare_threshold",
                              key='common_threshold', line=lines.get('common_threshold'))
        for name in ('supervised_size', 'unsup_audio_size', 'unsup_text_size', 'held_out_size'):
            if getattr(self, name) > self.max_corpus_size:
                raise ConfigError(f"exceeds max_corpus_size {self.max_corpus_size}",
                                  key=name, line=lines.get(name))
        if self.task_weights:
            parts = self.task_weights.split(',')
            try:
                weights = [float(p) for p in parts]
            except ValueError:
                raise ConfigError("task_weights must be six comma-separated numbers",
                                  key='task_weights', line=lines.get('task_weights'))
            if len(weights) != 6 or any(w < 0 for w in weights) or sum(weights) <= 0:
                raise ConfigError("task_weights must be six non-negative numbers with positive sum",
                                  key='task_weights', line=lines.get('task_weights'))
        return True

    def replace(self, **overrides) -> 'Settings':
        """Return a validated copy with some fields replaced."""
        values = self.as_dict()
        values.update(overrides)
        copy = Settings(**values)
        copy.validate()
        return copy

    def as_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in FIELDS}

    def to_text(self) -> str:
        """Render every field, post-default, grouped by section."""
        out = io.StringIO()
        for section in SECTIONS:
            out.write(f"# [{section}]\n")
            for name, f in FIELDS.items():
                if f.section != section:
                    continue
                value = getattr(self, name)
                if f.kind is bool:
                    rendered = 'true' if value else 'false'
                elif f.kind is float:
                    rendered = repr(float(value))
                else:
                    rendered = str(value)
                out.write(f"{name} = {rendered}\n")
            out.write("\n")
        return out.getvalue()

    def digest(self) -> str:
        """SHA-256 over the model-shaping fields."""
        h = hashlib.sha256()
        for name in DIGEST_FIELDS:
            h.update(f"{name}={getattr(self, name)!r};".encode('utf-8'))
        return h.hexdigest()

    def digest_items(self) -> Dict[str, str]:
        return {name: repr(getattr(self, name)) for name in DIGEST_FIELDS}

    def diff(self, other_items: Dict[str, str]) -> List[str]:
        """Names of model-shaping fields whose values differ from another digest listing."""
        mine = self.digest_items()
        return [name for name in DIGEST_FIELDS if mine.get(name) != other_items.get(name)]

    def __eq__(self, other) -> bool:
        return isinstance(other, Settings) and self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"Settings(experiment={self.experiment!r}, master_seed={self.master_seed})"


def parse_config_text(text: str) -> Settings:
    """
    Parse configuration text into a validated Settings object.

    Keys are flat field names or `section.name`; omitted keys take defaults.

    Args:
        text: File contents

    Returns:
        Validated Settings
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for binding in parse_stream(io.StringIO(text)):
        # the parser marks a binding at the first blank line preceding it
        raw = binding.original.string
        line = binding.original.line + raw[:len(raw) - len(raw.lstrip())].count('\n')
        if binding.error:
            raise ConfigError(f"malformed line: {binding.original.string.strip()!r}", line=line)
        if binding.key is None:
            continue
        key = binding.key.strip()
        name = key
        if '.' in key:
            section, name = key.split('.', 1)
            if name in FIELDS and FIELDS[name].section != section:
                raise ConfigError(f"belongs to section '{FIELDS[name].section}', not '{section}'",
                                  key=key, line=line)
        if name not in FIELDS:
            raise ConfigError("unknown configuration key", key=key, line=line)
        if binding.value is None:
            raise ConfigError("missing value", key=name, line=line)
        values[name] = _coerce(name, binding.value, line)
        lines[name] = line

    settings = Settings(**values)
    settings.validate(lines)
    return settings


def load_config(path: Optional[str] = None) -> Settings:
    """
    Load and validate a configuration file.

    Args:
        path: Config file path; None falls back to $CASCADE_CONFIG, then to all defaults

    Returns:
        Validated Settings
    """
    path = path or os.getenv('CASCADE_CONFIG')
    if not path:
        logger.info("No config file given; using desk defaults")
        return Settings()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    settings = parse_config_text(text)
    logger.info(f"Loaded configuration from {path} (digest {settings.digest()[:12]})")
    return settings


def write_effective_config(settings: Settings, out_dir: str) -> str:
    """
    Echo the effective configuration into an output directory.

    Returns:
        Path of the written file
    """
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, EFFECTIVE_CONFIG_NAME)
    if os.path.exists(path):
        logger.warning(f"Overwriting effective config at {path}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write(settings.to_text())
    return path


def derive_seed(master: int, *labels) -> int:
    """
    Derive a module seed from the master seed by labeled hashing.

    Args:
        master: Master seed
        labels: Any printable labels, e.g. ('quantizer',) or ('batch', step, 'S', i)

    Returns:
        A 63-bit non-negative seed
    """
    h = hashlib.blake2b(digest_size=8)
    for label in labels:
        h.update(str(label).encode('utf-8'))
        h.update(b'\x1f')
    return (int(master) ^ int.from_bytes(h.digest(), 'little')) & ((1 << 63) - 1)


# Global settings instance (desk defaults); commands load their own file.
settings = Settings()


# A configuration small enough for self-tests and unit tests to train and
# decode in seconds; corpus strata still fit the thresholds.
TINY_OVERRIDES: Dict[str, Any] = {
    'supervised_size': 24, 'unsup_audio_size': 12, 'unsup_text_size': 40, 'held_out_size': 16,
    'common_vocab': 10, 'proper_noun_count': 2, 'rare_stratum_count': 3, 'text_only_vocab': 4,
    'min_words': 2, 'max_words': 3, 'feature_dim': 4,
    'rare_threshold': 3, 'common_threshold': 5,
    'stack_size': 2, 'stride': 2, 'upsample': 2, 'phoneme_embed_dim': 4,
    'causal_layers': 1, 'noncausal_layers': 1, 'model_dim': 8, 'heads': 2,
    'right_context_frames': 2, 'conv_kernel': 3, 'ff_mult': 2, 'max_rel_position': 4,
    'decoder_dim': 8, 'joint_dim': 8, 'label_embed_dim': 4, 'vocab_size': 40, 'max_symbols': 2,
    'codebook_size': 8, 'code_dim': 4,
    'steps': 3, 'continue_steps': 2, 'batch_supervised': 2, 'batch_unsup_audio': 2,
    'batch_unsup_text': 2, 'warmup_steps': 2, 'checkpoint_every': 2, 'log_every': 1,
    'beam_width': 2,
}


def tiny_settings(**overrides) -> Settings:
    """Validated tiny configuration, with optional field overrides."""
    values = dict(TINY_OVERRIDES)
    values.update(overrides)
    s = Settings(**values)
    s.validate()
    return s
