"""
HAT decoder: recurrent prediction network and joint network with the blank
decision factored out as a sigmoid.
"""
import logging
from typing import Mapping, Sequence, Tuple

import numpy as np

from src.encoders.conformer import EncoderOutput, ParamSpecs
from src.numerics.tensor import (
    Tensor, add, concat, log_sigmoid, log_softmax, matmul, neg, outer_add,
    reshape, take, tanh,
)
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Transducer')

BLANK_ID = 0


def decoder_param_specs(prefix: str, model_dim: int, decoder_dim: int, joint_dim: int,
                        label_embed_dim: int, vocab_size: int) -> ParamSpecs:
    return {
        f'{prefix}.pred.embed': ((vocab_size, label_embed_dim), 'normal'),
        f'{prefix}.pred.wx': ((label_embed_dim, decoder_dim), 'normal'),
        f'{prefix}.pred.wh': ((decoder_dim, decoder_dim), 'normal'),
        f'{prefix}.pred.b': ((decoder_dim,), 'zeros'),
        f'{prefix}.pred.start': ((decoder_dim,), 'normal'),
        f'{prefix}.joint.enc': ((model_dim, joint_dim), 'normal'),
        f'{prefix}.joint.pred': ((decoder_dim, joint_dim), 'normal'),
        f'{prefix}.joint.b': ((joint_dim,), 'zeros'),
        f'{prefix}.joint.blank_w': ((joint_dim, 1), 'normal'),
        f'{prefix}.joint.blank_b': ((1,), 'zeros'),
        f'{prefix}.joint.label_w': ((joint_dim, vocab_size - 1), 'normal'),
        f'{prefix}.joint.label_b': ((vocab_size - 1,), 'zeros'),
    }


def _check_labels(labels: Sequence[int], vocab_size: int) -> np.ndarray:
    labels = np.asarray(list(labels), dtype=np.int64)
    if labels.size and np.any(labels == BLANK_ID):
        raise UsageError("label sequence contains the blank symbol")
    if labels.size and (labels.min() < 0 or labels.max() >= vocab_size):
        raise UsageError(f"label id outside vocabulary of size {vocab_size}")
    return labels


def _pred_step(g: Tensor, x_row: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    dim = g.shape[0]
    recurrent = reshape(matmul(reshape(g, (1, dim)), params[f'{prefix}.pred.wh']), (dim,))
    return tanh(add(add(x_row, recurrent), params[f'{prefix}.pred.b']))


def predict(labels: Sequence[int], params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """
    Prediction-network states for every label prefix.

    Args:
        labels: Non-blank wordpiece ids y_1..y_U
        params: Parameter mapping
        prefix: Decoder prefix ('dec.c' or 'dec.nc')

    Returns:
        [U+1 x decoder_dim] states; row u depends on labels[:u] only, row 0 is the start state
    """
    embed = params[f'{prefix}.pred.embed']
    labels = _check_labels(labels, embed.shape[0])
    start = params[f'{prefix}.pred.start']
    dim = start.shape[0]
    rows = [reshape(start, (1, dim))]
    if labels.size:
        projected = matmul(take(embed, labels, axis=0), params[f'{prefix}.pred.wx'])
        g = start
        for u in range(labels.size):
            g = _pred_step(g, take(projected, u, axis=0), params, prefix)
            rows.append(reshape(g, (1, dim)))
    return concat(rows, axis=0) if len(rows) > 1 else rows[0]


def hat_log_distribution(blank_logit: Tensor, label_logits: Tensor) -> Tensor:
    """
    log p over [blank, labels...]: log sigmoid(b) and log(1 - sigmoid(b)) + log softmax(l).

    Args:
        blank_logit: [..., 1]
        label_logits: [..., V-1]

    Returns:
        [..., V] log-probabilities with blank at index 0
    """
    n_labels = label_logits.shape[-1]
    not_blank = matmul(log_sigmoid(neg(blank_logit)), Tensor(np.ones((1, n_labels))))
    return concat([log_sigmoid(blank_logit), add(log_softmax(label_logits), not_blank)], axis=-1)


def hat_log_probs(enc: Tensor, pred: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """
    Joint network over the whole trellis.

    Args:
        enc: [T x model_dim] encoder frames
        pred: [U+1 x decoder_dim] prediction states

    Returns:
        [T x U+1 x V] log-probabilities
    """
    z = tanh(add(outer_add(matmul(enc, params[f'{prefix}.joint.enc']),
                           matmul(pred, params[f'{prefix}.joint.pred'])),
                 params[f'{prefix}.joint.b']))
    blank_logit = add(matmul(z, params[f'{prefix}.joint.blank_w']), params[f'{prefix}.joint.blank_b'])
    label_logits = add(matmul(z, params[f'{prefix}.joint.label_w']), params[f'{prefix}.joint.label_b'])
    return hat_log_distribution(blank_logit, label_logits)


def _log_sigmoid(x: float) -> float:
    return float(-np.logaddexp(0.0, -x))


def joint_log_probs(h_proj: np.ndarray, g: np.ndarray, arrays: Mapping[str, np.ndarray], prefix: str) -> np.ndarray:
    """Numpy joint for one (frame, state) pair; h_proj is the frame already multiplied by joint.enc."""
    z = np.tanh(h_proj + g @ arrays[f'{prefix}.joint.pred'] + arrays[f'{prefix}.joint.b'])
    b = float(z @ arrays[f'{prefix}.joint.blank_w'][:, 0] + arrays[f'{prefix}.joint.blank_b'][0])
    logits = z @ arrays[f'{prefix}.joint.label_w'] + arrays[f'{prefix}.joint.label_b']
    m = logits.max()
    log_soft = logits - (m + np.log(np.exp(logits - m).sum()))
    out = np.empty(logits.size + 1)
    out[0] = _log_sigmoid(b)
    out[1:] = _log_sigmoid(-b) + log_soft
    return out


def hat_joint(h_t: np.ndarray, g_u: np.ndarray, params: Mapping[str, Tensor],
              prefix: str) -> Tuple[float, np.ndarray]:
    """
    Output distribution at one trellis cell.

    Args:
        h_t: Encoder frame [model_dim]
        g_u: Prediction state [decoder_dim]

    Returns:
        (p_blank, p_labels) where p_labels[k] is the probability of id k+1
    """
    arrays = {name: t.data for name, t in params.items() if name.startswith(prefix + '.')}
    h_t = np.asarray(getattr(h_t, 'data', h_t), dtype=np.float64)
    g_u = np.asarray(getattr(g_u, 'data', g_u), dtype=np.float64)
    if h_t.shape != (arrays[f'{prefix}.joint.enc'].shape[0],):
        raise UsageError(f"hat_joint: encoder frame shape {h_t.shape} does not fit the joint network")
    logp = joint_log_probs(h_t @ arrays[f'{prefix}.joint.enc'], g_u, arrays, prefix)
    p = np.exp(logp)
    return float(p[0]), p[1:]


class HatDecoder:
    """
    Read-only decoding view of one HAT decoder.

    Beam search drives any object with prepare / start_state / advance / joint.
    """

    def __init__(self, params: Mapping[str, Tensor], prefix: str):
        self.prefix = prefix
        self.arrays = {name: t.data for name, t in params.items() if name.startswith(prefix + '.')}
        self.vocab_size = self.arrays[f'{prefix}.pred.embed'].shape[0]
        self._wh = self.arrays[f'{prefix}.pred.wh']
        self._xw = self.arrays[f'{prefix}.pred.embed'] @ self.arrays[f'{prefix}.pred.wx']

    def prepare(self, enc) -> np.ndarray:
        if isinstance(enc, EncoderOutput):
            enc = enc.frames
        frames = enc.data if isinstance(enc, Tensor) else np.asarray(enc, dtype=np.float64)
        return frames @ self.arrays[f'{self.prefix}.joint.enc']

    def start_state(self) -> np.ndarray:
        return self.arrays[f'{self.prefix}.pred.start']

    def advance(self, state: np.ndarray, label: int) -> np.ndarray:
        if label == BLANK_ID or not 0 < label < self.vocab_size:
            raise UsageError(f"cannot advance the prediction network with id {label}")
        return np.tanh(self._xw[label] + state @ self._wh + self.arrays[f'{self.prefix}.pred.b'])

    def joint(self, frame: np.ndarray, state: np.ndarray) -> np.ndarray:
        return joint_log_probs(frame, state, self.arrays, self.prefix)
