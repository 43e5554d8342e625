"""
Transducer loss over the HAT joint, and an alignment-enumerating oracle for it.
"""
import math
import logging
from itertools import combinations
from typing import Iterator, Mapping, Sequence, Tuple

import numpy as np

from src.encoders.conformer import EncoderOutput
from src.numerics.tensor import Tensor, as_tensor, rnnt_nll
from src.transducer.hat import hat_log_probs, predict
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Transducer')

MAX_ENUMERATED_PATHS = 10 ** 6

BLANK_MOVE = 'b'
LABEL_MOVE = 'y'


def _frames(enc) -> Tensor:
    return enc.frames if isinstance(enc, EncoderOutput) else as_tensor(enc)


def transducer_loss(enc, y: Sequence[int], params: Mapping[str, Tensor], prefix: str,
                    max_symbols: int = None) -> Tensor:
    """
    Negative log-likelihood of y summed over all alignments.

    Args:
        enc: EncoderOutput or [T' x model_dim] frames
        y: Non-blank wordpiece ids
        params: Parameter mapping
        prefix: Decoder prefix
        max_symbols: Optional cap; U > max_symbols * T' is rejected

    Returns:
        Differentiable scalar
    """
    frames = _frames(enc)
    t_len = frames.shape[0]
    if t_len < 1:
        raise UsageError("transducer_loss needs at least one encoder frame")
    if max_symbols is not None and len(y) > max_symbols * t_len:
        raise UsageError(f"{len(y)} labels exceed max_symbols {max_symbols} x {t_len} frames")
    logp = hat_log_probs(frames, predict(y, params, prefix), params, prefix)
    return rnnt_nll(logp, y)


def count_alignments(t_len: int, u_len: int) -> int:
    """Orderings of T' blank moves and U label moves."""
    return math.comb(t_len + u_len, u_len)


def enumerate_alignments(t_len: int, u_len: int) -> Iterator[Tuple[str, ...]]:
    """Every ordering of T' blank and U label moves, in lexicographic order of label positions."""
    n = t_len + u_len
    for positions in combinations(range(n), u_len):
        moves = [BLANK_MOVE] * n
        for p in positions:
            moves[p] = LABEL_MOVE
        yield tuple(moves)


def alignment_log_prob(logp: np.ndarray, y: Sequence[int], moves: Sequence[str]) -> float:
    """
    Log-probability of one move ordering on the trellis.

    The path must end with the blank that leaves frame T'-1; orderings that
    run off the trellis earlier score -inf.
    """
    t_len = logp.shape[0]
    t = u = 0
    total = 0.0
    for move in moves:
        if t >= t_len:
            return -math.inf
        if move == BLANK_MOVE:
            total += logp[t, u, 0]
            t += 1
        else:
            total += logp[t, u, y[u]]
            u += 1
    return total


def brute_force_loss(enc, y: Sequence[int], params: Mapping[str, Tensor], prefix: str) -> float:
    """
    -log of the path-probability sum over every enumerated alignment, accumulated in log space.

    Raises:
        UsageError: more than 10^6 orderings to enumerate
    """
    frames = _frames(enc)
    t_len, u_len = frames.shape[0], len(y)
    if t_len < 1:
        raise UsageError("brute_force_loss needs at least one encoder frame")
    if count_alignments(t_len, u_len) > MAX_ENUMERATED_PATHS:
        raise UsageError(f"{count_alignments(t_len, u_len)} alignments exceed the enumeration limit")
    logp = hat_log_probs(Tensor(frames.data), predict(y, params, prefix).detach(), params, prefix).data
    total = -np.inf
    for moves in enumerate_alignments(t_len, u_len):
        total = np.logaddexp(total, alignment_log_prob(logp, y, moves))
    return -float(total)
