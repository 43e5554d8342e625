#!/usr/bin/env python3
"""
Tests for feature stacking, audio span masking, phoneme masking and the
text frontend.
"""
import math
import sys

import numpy as np
from numpy.testing import assert_array_equal

from src.frontends.audio import (
    FeatureSequence, StackedFeatures, audio_mask_span, span_length, stack_and_subsample,
)
from src.frontends.text import (
    MASK_PHONEME_ID, NUM_PHONEME_IDS, PhonemeSequence, phoneme_mask, text_frontend,
)
from src.numerics.tensor import matmul, parameter, take
from src.utils.errors import SkipExample, UsageError
from src.utils.reporting import run_test_functions


def _features(t_len, dim, seed=0):
    return FeatureSequence(np.random.default_rng(seed).normal(size=(t_len, dim)))


def test_stack_dimensions():
    sf = stack_and_subsample(_features(90, 128), 4, 3)
    assert sf.frames.shape == (30, 512)
    assert sf.covered_ms == 30.0
    # 900 ms of right context at a 30 ms encoder frame rate
    assert 900 / sf.covered_ms == 30


def test_stack_window_and_padding():
    feats = _features(1, 2)
    sf = stack_and_subsample(feats, 4, 3)
    assert sf.frames.shape == (1, 8)
    assert_array_equal(sf.frames[0, :6], np.zeros(6))
    assert_array_equal(sf.frames[0, 6:], feats.frames[0])

    feats = _features(7, 1, seed=1)
    sf = stack_and_subsample(feats, 4, 3)
    x = feats.frames[:, 0]
    # frame t holds inputs 3t-2 .. 3t+1
    assert_array_equal(sf.frames[1], x[1:5])
    assert_array_equal(sf.frames[2], [x[4], x[5], x[6], 0.0])


def test_stack_length_property():
    rng = np.random.default_rng(2)
    lengths = list(range(1, 200)) + list(rng.integers(200, 10_001, size=50))
    for t_len in lengths:
        for stride in (1, 3, 4):
            sf = stack_and_subsample(FeatureSequence(np.zeros((int(t_len), 1))), 2, stride)
            assert sf.num_frames == math.ceil(int(t_len) / stride)


def test_stack_errors():
    for call in (lambda: stack_and_subsample(_features(5, 2), 0, 3),
                 lambda: stack_and_subsample(FeatureSequence(np.zeros((0, 2))), 4, 3)):
        try:
            call()
            raise AssertionError("bad stacking accepted")
        except UsageError:
            pass


def test_mask_span_lengths():
    assert span_length(0.15, 100) == 15
    assert span_length(0.15, 7) == 1
    rng = np.random.default_rng(0)
    for n in range(10, 501):
        sf = StackedFeatures(np.zeros((n, 2)), 30.0)
        _, info = audio_mask_span(sf, 0.15, rng)
        assert info.span_len == (n * 15) // 100
        assert int(info.flags.sum()) == info.span_len
        assert 0 <= info.span_start <= n - info.span_len


def test_mask_span_leaves_other_frames():
    sf = stack_and_subsample(_features(120, 3), 4, 3)
    masked, info = audio_mask_span(sf, 0.15, np.random.default_rng(4))
    keep = ~info.flags
    assert_array_equal(masked.frames[keep], sf.frames[keep])
    assert not np.array_equal(masked.frames[info.flags], sf.frames[info.flags])
    assert_array_equal(info.masked_positions, np.arange(info.span_start, info.span_start + info.span_len))


def test_mask_span_determinism_and_skip():
    sf = stack_and_subsample(_features(60, 3), 4, 3)
    a, ia = audio_mask_span(sf, 0.15, np.random.default_rng(9))
    b, ib = audio_mask_span(sf, 0.15, np.random.default_rng(9))
    assert ia.span_start == ib.span_start
    assert_array_equal(a.frames, b.frames)
    try:
        audio_mask_span(StackedFeatures(np.zeros((6, 2)), 30.0), 0.15, np.random.default_rng(0))
        raise AssertionError("six-frame utterance should be skipped")
    except SkipExample:
        pass


def _text_params(dim=6, embed=4, seed=0):
    rng = np.random.default_rng(seed)
    return {'text.embed': parameter(rng.normal(size=(NUM_PHONEME_IDS, embed))),
            'text.proj': parameter(rng.normal(size=(embed, dim)))}


def test_text_frontend_lengths():
    params = _text_params()
    ph = PhonemeSequence(ids=[3, 7, 7, 1, MASK_PHONEME_ID])
    out = text_frontend(ph, params, 3)
    assert out.shape == (15, 6)
    for k in range(5):
        group = out.data[3 * k:3 * k + 3]
        assert_array_equal(group[0], group[1])
        assert_array_equal(group[1], group[2])

    plain = text_frontend(ph, params, 1)
    expected = matmul(take(params['text.embed'], ph.ids, axis=0), params['text.proj'])
    assert_array_equal(plain.data, expected.data)
    try:
        text_frontend(PhonemeSequence(ids=[NUM_PHONEME_IDS]), params, 3)
        raise AssertionError("unknown phoneme id accepted")
    except UsageError:
        pass


def test_phoneme_mask():
    ph = PhonemeSequence(ids=np.arange(20) % 10)
    same = phoneme_mask(ph, 0.0, np.random.default_rng(0))
    assert_array_equal(same.ids, ph.ids)
    assert not same.mask.any()

    for seed in range(20):
        masked = phoneme_mask(ph, 0.25, np.random.default_rng(seed))
        assert int(masked.mask.sum()) == 5
        assert_array_equal(masked.ids == MASK_PHONEME_ID, masked.mask)
        assert_array_equal(masked.ids[~masked.mask], ph.ids[~masked.mask])

    a = phoneme_mask(ph, 0.25, np.random.default_rng(3))
    b = phoneme_mask(ph, 0.25, np.random.default_rng(3))
    assert_array_equal(a.ids, b.ids)
    try:
        phoneme_mask(ph, 1.0, np.random.default_rng(0))
        raise AssertionError("mask ratio 1 accepted")
    except UsageError:
        pass


TESTS = [
    ("Stacked dimensions", test_stack_dimensions),
    ("Stack window and padding", test_stack_window_and_padding),
    ("Stacked length property", test_stack_length_property),
    ("Stacking errors", test_stack_errors),
    ("Mask span lengths", test_mask_span_lengths),
    ("Mask span leaves other frames", test_mask_span_leaves_other_frames),
    ("Mask span determinism and skip", test_mask_span_determinism_and_skip),
    ("Text frontend lengths", test_text_frontend_lengths),
    ("Phoneme masking", test_phoneme_mask),
]


def run_all_tests():
    return run_test_functions("Frontends", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
