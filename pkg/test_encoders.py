#!/usr/bin/env python3
"""
Tests for the cascaded conformer encoder: right-context split, streaming
behavior, identity initialization and parameter counting.
"""
import sys

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from config.settings import tiny_settings
from src.core.model import ModelParams
from src.encoders.conformer import (
    CAUSAL, AttentionMask, EncoderConfig, conformer_block, count_parameters, encode_causal,
    encode_noncausal, encoder_param_specs, noncausal_masks,
)
from src.numerics.tensor import Tensor, layer_norm, parameter
from src.utils.errors import UsageError
from src.utils.reporting import run_test_functions


def _params(**overrides):
    return ModelParams.initialize(tiny_settings(**overrides))


def test_right_context_split():
    for layers in range(1, 5):
        for right in range(0, 12):
            cfg = EncoderConfig(noncausal_layers=layers, right_context_frames=right, conv_kernel=3,
                                model_dim=8, heads=2)
            masks = noncausal_masks(cfg)
            assert len(masks) == layers
            assert sum(m.attention_lookahead + m.conv_lookahead for m in masks) == right
            assert all(m.conv_lookahead <= 1 for m in masks)
    assert noncausal_masks(EncoderConfig(noncausal_layers=0)) == []


def test_attention_mask_matrix():
    m = AttentionMask(attention_lookahead=1).additive(4)
    assert m[0, 1] == 0.0 and m[0, 2] == -np.inf
    assert np.all(m[np.tril_indices(4)] == 0.0)
    assert CAUSAL.is_causal
    assert np.all(CAUSAL.additive(3)[np.triu_indices(3, 1)] == -np.inf)


def test_causal_prefix_invariance():
    params = _params()
    cfg = params.encoder_config
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(2, 20))
        t = int(rng.integers(0, n))
        x = rng.normal(size=(n, cfg.input_dim))
        full = encode_causal(x, params, cfg).frames.data
        prefix = encode_causal(x[:t + 1], params, cfg).frames.data
        assert_array_equal(full[:t + 1], prefix)


def test_noncausal_right_context_isolation():
    params = _params(noncausal_layers=3, right_context_frames=5)
    cfg = params.encoder_config
    right = cfg.right_context_frames
    rng = np.random.default_rng(1)
    for _ in range(8):
        n = int(rng.integers(right + 3, right + 15))
        t = int(rng.integers(0, n - right - 1))
        x = rng.normal(size=(n, cfg.input_dim))
        y = x.copy()
        y[t + right + 1:] += rng.normal(size=y[t + right + 1:].shape)
        a = encode_noncausal(encode_causal(x, params, cfg), params, cfg).frames.data
        b = encode_noncausal(encode_causal(y, params, cfg), params, cfg).frames.data
        assert_array_equal(a[:t + 1], b[:t + 1])

        # the frame exactly at the edge of the budget is visible
        z = x.copy()
        z[t + right] += 1.0
        c = encode_noncausal(encode_causal(z, params, cfg), params, cfg).frames.data
        assert not np.array_equal(a[t], c[t])


def test_zero_residual_block_is_normalization():
    cfg = EncoderConfig(model_dim=8, heads=2, conv_kernel=3, ff_mult=2, max_rel_position=4)
    rng = np.random.default_rng(2)
    params = {}
    for name, (shape, kind) in encoder_param_specs(cfg).items():
        if kind == 'ones':
            params[name] = parameter(np.ones(shape))
        elif kind == 'zeros' or name.split('.', 3)[-1] in ('ff1.w2', 'att.wo', 'conv.pw2', 'ff2.w2'):
            params[name] = parameter(np.zeros(shape))
        else:
            params[name] = parameter(rng.normal(size=shape))
    x = Tensor(rng.normal(size=(5, 8)))
    out = conformer_block(x, params, 'enc.c.0', CAUSAL, cfg)
    expected = layer_norm(x, params['enc.c.0.out.ln.g'], params['enc.c.0.out.ln.b'])
    assert_allclose(out.data, expected.data, atol=1e-12)


def test_encoder_shapes_and_errors():
    params = _params()
    cfg = params.encoder_config
    h = encode_causal(np.zeros((7, cfg.input_dim)), params, cfg)
    assert h.frames.shape == (7, cfg.model_dim)
    assert encode_noncausal(h, params, cfg).num_frames == 7
    for call in (lambda: encode_causal(np.zeros((0, cfg.input_dim)), params, cfg),
                 lambda: encode_causal(np.zeros((3, cfg.input_dim + 1)), params, cfg),
                 lambda: EncoderConfig(model_dim=10, heads=4)):
        try:
            call()
            raise AssertionError("invalid encoder input accepted")
        except UsageError:
            pass


def test_count_parameters():
    params = {'enc.c.0.w': parameter(np.zeros((3, 4))), 'enc.c.0.b': parameter(np.zeros(4)),
              'dec.c.embed': parameter(np.zeros((5, 2)))}
    counts = count_parameters(params)
    assert counts == {'dec.c': 10, 'enc.c': 16, 'total': 26}

    model = _params()
    specs_total = sum(int(np.prod(shape)) for shape, _ in
                      encoder_param_specs(model.encoder_config).values())
    enc_total = sum(v for k, v in model.count().items() if k.startswith('enc.'))
    assert enc_total == specs_total


TESTS = [
    ("Right-context split", test_right_context_split),
    ("Attention mask matrix", test_attention_mask_matrix),
    ("Causal prefix invariance", test_causal_prefix_invariance),
    ("Non-causal right-context isolation", test_noncausal_right_context_isolation),
    ("Zero-residual block is a normalization", test_zero_residual_block_is_normalization),
    ("Encoder shapes and errors", test_encoder_shapes_and_errors),
    ("Parameter counting", test_count_parameters),
]


def run_all_tests():
    return run_test_functions("Encoders", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
