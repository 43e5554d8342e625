"""
Audio frontend: feature stacking/subsampling and single-span masking for BEST-RQ.
"""
import math
import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from src.utils.errors import UsageError, SkipExample

logger = logging.getLogger('Cascade.Frontends')


@dataclass
class FeatureSequence:
    """Time-major log-mel-like features [T x D_mel] at a fixed frame step."""
    frames: np.ndarray
    frame_step_ms: float = 10.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise UsageError(f"FeatureSequence needs a [T x D] matrix, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.num_frames * self.frame_step_ms


@dataclass
class StackedFeatures:
    """Stacked, subsampled frames [T' x stack*D_mel]; each covers covered_ms of input."""
    frames: np.ndarray
    covered_ms: float

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class MaskInfo:
    """One masked span over stacked frames."""
    span_start: int
    span_len: int
    flags: np.ndarray

    @property
    def masked_positions(self) -> np.ndarray:
        return np.flatnonzero(self.flags)


def span_length(ratio: float, n: int) -> int:
    """floor(ratio * n), reading the ratio as the decimal it was written as."""
    return math.floor(Fraction(repr(float(ratio))) * n)


def stack_window(stack: int) -> range:
    """Input-frame offsets relative to t*stride, e.g. [-2, -1, 0, 1] for stack 4."""
    return range(-(stack - 2), 2)


def stack_and_subsample(feats: FeatureSequence, stack: int, stride: int) -> StackedFeatures:
    """
    Concatenate `stack` neighboring frames and keep every `stride`-th position.

    Output frame t holds input frames t*stride-(stack-2) ... t*stride+1;
    positions outside the sequence are zero-padded.

    Args:
        feats: Input features
        stack: Frames per stacked vector
        stride: Subsampling factor

    Returns:
        StackedFeatures with ceil(T / stride) frames
    """
    if stack < 1 or stride < 1:
        raise UsageError(f"stack and stride must be >= 1 (got {stack}, {stride})")
    t_in, dim = feats.frames.shape
    if t_in == 0:
        raise UsageError("cannot stack an empty feature sequence")
    t_out = -(-t_in // stride)
    offsets = np.asarray(list(stack_window(stack)))
    positions = np.arange(t_out)[:, None] * stride + offsets[None, :]
    valid = (positions >= 0) & (positions < t_in)
    gathered = feats.frames[np.clip(positions, 0, t_in - 1)]
    gathered[~valid] = 0.0
    return StackedFeatures(frames=gathered.reshape(t_out, stack * dim),
                           covered_ms=stride * feats.frame_step_ms)


def audio_mask_span(sf: StackedFeatures, mask_ratio: float, rng: np.random.Generator,
                    noise_std: float = 0.1):
    """
    Replace one contiguous span of stacked frames with Gaussian noise.

    Args:
        sf: Stacked features
        mask_ratio: Fraction of frames in the span, in (0, 1)
        rng: Seeded generator (span start and noise)
        noise_std: Standard deviation of the fill noise

    Returns:
        (masked StackedFeatures, MaskInfo)

    Raises:
        SkipExample: utterance too short to hold a span of at least one frame
    """
    if not 0 < mask_ratio < 1:
        raise UsageError(f"mask_ratio must be in (0, 1), got {mask_ratio}")
    n = sf.num_frames
    span_len = span_length(mask_ratio, n)
    if span_len < 1:
        raise SkipExample(f"{n} stacked frames are too few for mask ratio {mask_ratio}")
    span_start = int(rng.integers(0, n - span_len + 1))
    masked = sf.frames.copy()
    masked[span_start:span_start + span_len] = rng.normal(
        0.0, noise_std, size=(span_len, sf.frames.shape[1]))
    flags = np.zeros(n, dtype=bool)
    flags[span_start:span_start + span_len] = True
    return (StackedFeatures(frames=masked, covered_ms=sf.covered_ms),
            MaskInfo(span_start=span_start, span_len=span_len, flags=flags))
