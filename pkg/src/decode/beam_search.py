"""
Frame-synchronous transducer beam search.

Drives any decoder exposing prepare / start_state / advance / joint, where
joint(frame, state) returns log-probabilities over the full vocabulary with
blank at id 0.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from src.decode.lattice import Lattice, build_lattice
from src.transducer.hat import BLANK_ID
from src.utils.errors import UsageError

logger = logging.getLogger('Cascade.Decode')

Labels = Tuple[int, ...]


@dataclass
class Hypothesis:
    labels: Labels
    score: float
    # prediction-network state after consuming `labels`
    state: Any = None

    @property
    def rank_key(self) -> Tuple[float, int, Labels]:
        return (-self.score, len(self.labels), self.labels)


class HypothesisList:
    """Hypotheses keyed by label sequence; adding a duplicate merges scores by log-sum-exp."""

    def __init__(self):
        self._data: Dict[Labels, Hypothesis] = {}

    def add(self, hyp: Hypothesis) -> None:
        old = self._data.get(hyp.labels)
        if old is None:
            self._data[hyp.labels] = hyp
        else:
            old.score = float(np.logaddexp(old.score, hyp.score))

    def ranked(self) -> List[Hypothesis]:
        return sorted(self._data.values(), key=lambda h: h.rank_key)

    def topk(self, k: int) -> List[Hypothesis]:
        return self.ranked()[:k]

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self):
        return iter(self._data.values())


@dataclass
class DecodeStats:
    states_expanded: int
    frames: int
    beam_width: int

    @property
    def states_per_frame(self) -> float:
        return self.states_expanded / self.frames if self.frames else 0.0


@dataclass
class BeamTrace:
    """Surviving (labels, score) pairs at the end of every frame, best first."""
    frames: List[List[Tuple[Labels, float]]] = field(default_factory=list)

    def record(self, t: int, beam: Iterable[Hypothesis]) -> None:
        while len(self.frames) <= t:
            self.frames.append([])
        self.frames[t] = [(h.labels, h.score) for h in beam]


class DecodeResult(NamedTuple):
    nbest: List[Hypothesis]
    lattice: Lattice
    stats: DecodeStats


def _top_labels(log_probs: np.ndarray, k: int) -> List[int]:
    """Ids of the k most probable non-blank labels; ties go to the lower id."""
    labels = np.arange(1, log_probs.shape[0])
    order = np.lexsort((labels, -log_probs[1:]))
    return [int(labels[i]) for i in order[:k]]


def beam_search(enc, decoder, beam_width: int = 4, max_symbols_per_frame: int = 4,
                lattice_signature: str = 'full', lattice_ngram: int = 2) -> DecodeResult:
    """
    Decode one utterance.

    Per frame, each active hypothesis is scored once by the joint network
    (one expanded state). Blank carries it to the next frame; its best
    `beam_width` labels extend it within the frame, at most
    `max_symbols_per_frame` times before blank is forced. Hypotheses with
    the same labels are merged by log-sum-exp, both among the within-frame
    extensions and at the frame boundary.

    Args:
        enc: Encoder output (EncoderOutput, Tensor or [T' x D] array)
        decoder: Object with prepare / start_state / advance / joint
        beam_width: Hypotheses kept per frame (1 gives a greedy search)
        max_symbols_per_frame: Label cap per frame
        lattice_signature: 'full' or 'ngram' node merging
        lattice_ngram: Context length for 'ngram' signatures

    Returns:
        DecodeResult(nbest, lattice, stats); nbest is best first, ties broken
        by shorter then lexicographically smaller label sequences

    Raises:
        UsageError: empty encoder output or bad beam/cap
    """
    if beam_width < 1 or max_symbols_per_frame < 1:
        raise UsageError(f"beam_width and max_symbols_per_frame must be >= 1 "
                         f"(got {beam_width}, {max_symbols_per_frame})")
    frames = decoder.prepare(enc)
    if frames.shape[0] == 0:
        raise UsageError("cannot decode an empty encoder output")

    states: Dict[Labels, Any] = {(): decoder.start_state()}

    def state_of(labels: Labels) -> Any:
        cached = states.get(labels)
        if cached is None:
            cached = decoder.advance(state_of(labels[:-1]), labels[-1])
            states[labels] = cached
        return cached

    beam = [Hypothesis((), 0.0, states[()])]
    trace = BeamTrace()
    expanded = 0

    for t in range(frames.shape[0]):
        frame = frames[t]
        next_beam = HypothesisList()
        active = sorted(beam, key=lambda h: h.rank_key)
        for k in range(max_symbols_per_frame + 1):
            if not active:
                break
            extended = HypothesisList()
            for hyp in active:
                log_probs = np.asarray(decoder.joint(frame, hyp.state), dtype=np.float64)
                expanded += 1
                next_beam.add(Hypothesis(hyp.labels, hyp.score + float(log_probs[BLANK_ID]), hyp.state))
                if k == max_symbols_per_frame:
                    continue
                for label in _top_labels(log_probs, beam_width):
                    extended.add(Hypothesis(hyp.labels + (label,), hyp.score + float(log_probs[label])))
            active = extended.topk(beam_width)
            for hyp in active:
                hyp.state = state_of(hyp.labels)
        beam = next_beam.topk(beam_width)
        trace.record(t, beam)

    stats = DecodeStats(expanded, int(frames.shape[0]), beam_width)
    lattice = build_lattice(trace.frames, signature=lattice_signature, ngram=lattice_ngram)
    logger.debug(f"Decoded {stats.frames} frames: {stats.states_expanded} states, "
                 f"{lattice.num_arcs} lattice arcs, best score {beam[0].score:.4f}")
    return DecodeResult(beam, lattice, stats)


def greedy_search(enc, decoder, max_symbols_per_frame: int = 4) -> Hypothesis:
    return beam_search(enc, decoder, 1, max_symbols_per_frame).nbest[0]
