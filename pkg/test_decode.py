#!/usr/bin/env python3
"""
Tests for transducer beam search, lattice construction and the lattice
file format.
"""
import math
import os
import sys
import tempfile

import numpy as np
from numpy.testing import assert_allclose

from config.settings import tiny_settings
from src.core.model import ModelParams
from src.data.corpora import CorpusConfig, synth_corpora
from src.data.wordpiece import build_wordpiece_model
from src.decode.beam_search import Hypothesis, HypothesisList, beam_search, greedy_search
from src.decode.lattice import Lattice, build_lattice, format_lattice, read_lattice, write_lattice
from src.decode.pipeline import decode_examples, encoder_output, write_decode_outputs
from src.utils.errors import LatticeParseError, UsageError
from src.utils.reporting import run_test_functions


class TableDecoder:
    """Decoder whose joint distribution is a seeded function of (frame, label prefix)."""

    def __init__(self, vocab: int, seed: int, blank_bias: float = 0.0):
        self.vocab = vocab
        self.seed = seed
        self.blank_bias = blank_bias

    def prepare(self, enc):
        return np.asarray(enc, dtype=np.float64)

    def start_state(self):
        return ()

    def advance(self, state, label):
        return state + (label,)

    def joint(self, frame, state):
        rng = np.random.default_rng([self.seed, int(frame[0])] + list(state))
        p = rng.dirichlet(np.ones(self.vocab))
        if self.blank_bias:
            p = p * np.where(np.arange(self.vocab) == 0, self.blank_bias, 1.0)
            p = p / p.sum()
        return np.log(p)


def _frames(t_len):
    return np.arange(t_len, dtype=np.float64)[:, None]


def exhaustive_sequence_probs(decoder, t_len, max_symbols):
    """Probability of every label sequence, summed over capped alignments in linear space."""
    probs = {}
    frames = decoder.prepare(_frames(t_len))

    def walk(t, labels, emitted, logp):
        if t == t_len:
            probs[labels] = probs.get(labels, 0.0) + math.exp(logp)
            return
        lp = decoder.joint(frames[t], labels)
        walk(t + 1, labels, 0, logp + lp[0])
        if emitted < max_symbols:
            for label in range(1, decoder.vocab):
                walk(t, labels + (label,), emitted + 1, logp + lp[label])

    walk(0, (), 0, 0.0)
    return probs


def test_beam_matches_exhaustive_search():
    for seed in range(20):
        vocab = 2 if seed < 10 else 3
        decoder = TableDecoder(vocab, seed)
        probs = exhaustive_sequence_probs(decoder, 2, 2)
        best = max(probs, key=lambda y: (probs[y], -len(y)))
        result = beam_search(_frames(2), decoder, beam_width=64, max_symbols_per_frame=2)
        assert result.nbest[0].labels == best
        assert_allclose(result.nbest[0].score, math.log(probs[best]), atol=1e-9)
        for hyp in result.nbest:
            assert_allclose(hyp.score, math.log(probs[hyp.labels]), atol=1e-9)


def test_greedy_decode_and_chain_lattice():
    decoder = TableDecoder(4, 7)
    result = beam_search(_frames(5), decoder, beam_width=1, max_symbols_per_frame=2)
    assert len(result.nbest) == 1
    k = len(result.nbest[0].labels)
    assert result.lattice.num_arcs == k
    assert result.lattice.num_nodes == k + 1
    assert greedy_search(_frames(5), decoder, 2).labels == result.nbest[0].labels


def test_all_blank_lattice():
    decoder = TableDecoder(3, 1, blank_bias=1e9)
    result = beam_search(_frames(4), decoder, beam_width=2, max_symbols_per_frame=2)
    assert result.nbest[0].labels == ()
    empty = build_lattice([[((), -0.1)], [((), -0.2)]])
    assert empty.num_arcs == 0
    assert empty.finals == [empty.start]
    assert_allclose(empty.path_score(()), -0.2)


def test_states_expanded_grows_with_beam():
    for seed in range(50):
        decoder = TableDecoder(4, 100 + seed)
        narrow = beam_search(_frames(4), decoder, beam_width=1, max_symbols_per_frame=2)
        wide = beam_search(_frames(4), decoder, beam_width=4, max_symbols_per_frame=2)
        assert wide.stats.states_expanded >= narrow.stats.states_expanded >= narrow.stats.frames


def test_nbest_paths_are_in_lattice():
    for seed in range(10):
        decoder = TableDecoder(4, 200 + seed)
        result = beam_search(_frames(6), decoder, beam_width=3, max_symbols_per_frame=2)
        for hyp in result.nbest:
            assert_allclose(result.lattice.path_score(hyp.labels), hyp.score, atol=1e-9)
        scores = [h.score for h in result.nbest]
        assert scores == sorted(scores, reverse=True)


def test_shared_prefix_arcs_merge():
    lattice = build_lattice([[((1, 2), -1.0), ((1, 3), -2.0)]])
    assert lattice.num_arcs == 3
    assert lattice.num_nodes == 4
    assert len(lattice.outgoing(lattice.start)) == 1
    assert_allclose(lattice.path_score((1, 2)), -1.0)
    assert_allclose(lattice.path_score((1, 3)), -2.0)
    assert not lattice.contains((2,))
    ngram = build_lattice([[((1, 2), -1.0), ((3, 2), -1.5)]], signature='ngram', ngram=1)
    assert ngram.num_nodes == 4
    try:
        build_lattice([[((1,), -1.0)]], signature='bogus')
        raise AssertionError("unknown signature accepted")
    except UsageError:
        pass


def test_hypothesis_merging_and_ties():
    hyps = HypothesisList()
    hyps.add(Hypothesis((1,), math.log(0.25)))
    hyps.add(Hypothesis((1,), math.log(0.25)))
    hyps.add(Hypothesis((2, 1), math.log(0.5)))
    hyps.add(Hypothesis((2,), math.log(0.5)))
    assert len(hyps) == 3
    ranked = [h.labels for h in hyps.ranked()]
    assert ranked == [(1,), (2,), (2, 1)]
    assert_allclose(hyps.ranked()[0].score, math.log(0.5))


def test_beam_search_contracts():
    decoder = TableDecoder(3, 0)
    for call in (lambda: beam_search(np.zeros((0, 1)), decoder),
                 lambda: beam_search(_frames(2), decoder, beam_width=0),
                 lambda: beam_search(_frames(2), decoder, max_symbols_per_frame=0)):
        try:
            call()
            raise AssertionError("bad decode input accepted")
        except UsageError:
            pass


def test_lattice_file_round_trip():
    result = beam_search(_frames(5), TableDecoder(4, 3), beam_width=3, max_symbols_per_frame=2)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'u.lat')
        write_lattice(result.lattice, path)
        back = read_lattice(path)
        assert back.node_frames == result.lattice.node_frames
        assert back.finals == result.lattice.finals and back.start == result.lattice.start
        assert sorted(back.arcs, key=lambda a: (a.src, a.dst)) == \
            sorted(result.lattice.arcs, key=lambda a: (a.src, a.dst))

        empty_path = os.path.join(tmp, 'empty.lat')
        write_lattice(Lattice([0], [], 0, [0], -0.5), empty_path)
        with open(empty_path, encoding='utf-8') as f:
            assert len(f.read().splitlines()) == 2
        assert read_lattice(empty_path).num_arcs == 0
        assert 'finals [0]' in format_lattice(read_lattice(empty_path))


def test_lattice_parse_errors():
    header = "nodes=2\tstart=0\tstart_weight=0.0\tframes=0,1\nfinals=1\n"
    cases = {
        header + "0\t5\t3\t-0.5\n": (3, '5'),
        header + "0\t1\t3\n": (3, None),
        header + "0\t1\tx\t-0.5\n": (3, None),
        "nodes=2\tstart=0\tstart_weight=0.0\tframes=0\nfinals=1\n": (1, None),
        "nodes=2\tstart=0\tstart_weight=0.0\tframes=0,1\nfinals=7\n": (2, '7'),
    }
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'bad.lat')
        for text, (line, node) in cases.items():
            with open(path, 'w', encoding='utf-8') as f:
                f.write(text)
            try:
                read_lattice(path)
                raise AssertionError(f"malformed lattice accepted: {text!r}")
            except LatticeParseError as e:
                assert e.line == line, (e.line, line)
                if node is not None:
                    assert f"node {node}" in str(e)


def test_decoding_a_tiny_model():
    s = tiny_settings()
    params = ModelParams.initialize(s)
    corpora = synth_corpora(CorpusConfig.from_settings(s), s.master_seed)
    examples = corpora.supervised[:3]
    texts = [ex.text for ex in corpora.supervised]
    wordpieces = build_wordpiece_model(texts, s.vocab_size)

    serial = decode_examples(params, examples, 'nc', threads=1)
    parallel = decode_examples(params, examples, 'nc', threads=3)
    for ex, a, b in zip(examples, serial, parallel):
        assert [h.labels for h in a.nbest] == [h.labels for h in b.nbest]
        assert a.stats == b.stats
        assert a.stats.frames == encoder_output(params, ex, 'nc').num_frames
    causal = decode_examples(params, examples[:1], 'c')
    assert causal[0].stats.frames == serial[0].stats.frames

    with tempfile.TemporaryDirectory() as tmp:
        write_decode_outputs(tmp, examples, serial, wordpieces)
        for ex in examples:
            with open(os.path.join(tmp, 'nbest', f"{ex.id}.tsv"), encoding='utf-8') as f:
                first = f.readline().rstrip('\n').split('\t')
            assert first[0] == '1' and len(first) == 3
            assert read_lattice(os.path.join(tmp, 'lattices', f"{ex.id}.lat")).num_nodes >= 1
    try:
        encoder_output(params, examples[0], 'both')
        raise AssertionError("unknown decoding path accepted")
    except UsageError:
        pass


TESTS = [
    ("Beam matches exhaustive search", test_beam_matches_exhaustive_search),
    ("Greedy decode gives a chain lattice", test_greedy_decode_and_chain_lattice),
    ("All-blank lattice", test_all_blank_lattice),
    ("States expanded grows with beam", test_states_expanded_grows_with_beam),
    ("N-best paths are in the lattice", test_nbest_paths_are_in_lattice),
    ("Shared prefix arcs merge", test_shared_prefix_arcs_merge),
    ("Hypothesis merging and ties", test_hypothesis_merging_and_ties),
    ("Beam search contracts", test_beam_search_contracts),
    ("Lattice file round trip", test_lattice_file_round_trip),
    ("Lattice parse errors", test_lattice_parse_errors),
    ("Decoding a tiny model", test_decoding_a_tiny_model),
]


def run_all_tests():
    return run_test_functions("Decode", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
