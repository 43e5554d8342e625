#!/usr/bin/env python3
"""
Tests for task weights, batch preparation, the joint training loop,
checkpoints, the optimizer and the learning-rate schedule.
"""
import os
import sys
import tempfile
from fractions import Fraction
from unittest.mock import patch

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from config.settings import tiny_settings
from src.data.corpora import CorpusConfig, synth_corpora
from src.data.wordpiece import build_wordpiece_model
from src.memory.loss_log import HEADER, LossLog
from src.numerics.tensor import parameter, sum as tsum, mul
from src.scheduler.lr_schedule import LearningRateSchedule
from src.trainer.batches import BatchSampler, build_training_data, prepare_batches
from src.trainer.checkpoint import load_checkpoint, params_from_checkpoint, save_checkpoint
from src.trainer.loop import LOSS_LOG_NAME, TrainState, run_training, train_step
from src.trainer.optimizer import AdamOptimizer, clip_gradients
from src.trainer.weights import (
    EXPERIMENT_LABELS, TaskWeights, experiment_spec, parse_task_weights, resolve_weight_fractions,
)
from src.utils.errors import CheckpointError, NumericError, UsageError
from src.utils.reporting import run_test_functions

SEED = 3


def _setup(**overrides):
    s = tiny_settings(master_seed=SEED, **overrides)
    corpora = synth_corpora(CorpusConfig.from_settings(s), s.master_seed)
    texts = [ex.text for ex in corpora.supervised] + [ex.text for ex in corpora.unsup_text]
    return s, build_training_data(s, corpora, build_wordpiece_model(texts, s.vocab_size))


def test_weight_table():
    f = Fraction
    assert resolve_weight_fractions('E-0') == (f(1, 2), f(1, 2), 0, 0, 0, 0)
    assert resolve_weight_fractions('E-AC') == (f(2, 5), f(2, 5), f(1, 20), f(1, 20), 0, f(1, 10))
    assert resolve_weight_fractions('E-B') == (f(2, 5), f(2, 5), 0, 0, f(1, 5), 0)
    for label in EXPERIMENT_LABELS:
        assert sum(resolve_weight_fractions(label)) == 1
        assert experiment_spec(label).weights.supervised_share >= 0.8 - 1e-12
    try:
        experiment_spec('E-Z')
        raise AssertionError("unknown label accepted")
    except UsageError:
        pass


def test_explicit_task_weights():
    w = parse_task_weights('1,1,0,0,0,2')
    assert w.as_dict() == {'casr': 0.25, 'ncasr': 0.25, 'cjoist': 0.0, 'ncjoist': 0.0,
                           'tts': 0.0, 'bestrq': 0.5}
    assert w.active_tasks() == ['casr', 'ncasr', 'bestrq']
    assert experiment_spec('E-0', '0,1,0,0,0,0').weights.w_casr == 0.0
    for bad in ('1,1', '1,1,1,1,1,-1', '0,0,0,0,0,0', 'a,b,c,d,e,f'):
        try:
            parse_task_weights(bad)
            raise AssertionError(f"weights {bad!r} accepted")
        except UsageError:
            pass
    try:
        TaskWeights(0.5, 0.6)
        raise AssertionError("weights summing above 1 accepted")
    except UsageError:
        pass


def test_batches_do_not_depend_on_threads():
    s, data = _setup()
    state = TrainState.fresh(s)
    weights = experiment_spec('E-ABC').weights
    one = prepare_batches(1, weights, data, s, state.params.quantizer, BatchSampler(s.master_seed), 1)
    four = prepare_batches(1, weights, data, s, state.params.quantizer, BatchSampler(s.master_seed), 4)
    assert one.sizes() == four.sizes()
    for a, b in zip(one.supervised + one.tts, four.supervised + four.tts):
        assert a.id == b.id and a.targets == b.targets
        assert_array_equal(a.x, b.x)
    for a, b in zip(one.joist, four.joist):
        assert_array_equal(a.phonemes.ids, b.phonemes.ids)
    for a, b in zip(one.bestrq, four.bestrq):
        assert_array_equal(a.targets, b.targets)
        assert a.info.span_start == b.info.span_start


def test_zero_weight_tasks_are_not_prepared():
    s, data = _setup()
    state = TrainState.fresh(s)
    with patch('src.trainer.batches.quantize') as quantize_mock:
        batches = prepare_batches(1, experiment_spec('E-0').weights, data, s, state.params.quantizer)
    quantize_mock.assert_not_called()
    assert batches.sizes()['supervised'] == s.batch_supervised
    assert not batches.joist and not batches.tts and not batches.bestrq


def test_training_is_deterministic_across_threads():
    s, data = _setup()
    spec = experiment_spec('E-AC')
    with tempfile.TemporaryDirectory() as tmp:
        a = run_training(spec, s, data, os.path.join(tmp, 'a'), steps=2, threads=1)
        b = run_training(spec, s, data, os.path.join(tmp, 'b'), steps=2, threads=3)
    assert a.loss_log.entries == b.loss_log.entries
    for name, array in a.checkpoint.params.items():
        assert_array_equal(array, b.checkpoint.params[name])


def test_loss_log_lists_active_tasks():
    s, data = _setup()
    with tempfile.TemporaryDirectory() as tmp:
        result = run_training(experiment_spec('E-AC'), s, data, tmp, steps=2)
        tasks = result.loss_log.tasks()
        assert {'casr', 'ncasr', 'cjoist', 'ncjoist'} <= set(tasks)
        assert 'tts' not in tasks
        path = os.path.join(tmp, LOSS_LOG_NAME)
        with open(path, encoding='utf-8') as f:
            assert f.readline().strip() == HEADER
        assert LossLog.load(path).entries == result.loss_log.entries
        assert os.path.exists(result.checkpoint_path)
        # checkpoint_every=2 in the tiny configuration
        assert os.path.exists(os.path.join(tmp, 'checkpoints', 'step_000002.ckpt'))
    assert result.checkpoint.step == 2
    summary = result.loss_log.summary()
    assert summary['last_step'] == 2
    assert summary['tasks']['casr']['steps'] == 2


def test_continue_from_checkpoint():
    s, data = _setup()
    with tempfile.TemporaryDirectory() as tmp:
        base = run_training(experiment_spec('E-0'), s, data, os.path.join(tmp, 'base'), steps=2)
        cont = run_training(experiment_spec('E-C'), s, data, os.path.join(tmp, 'cont'),
                            init=base.checkpoint, steps=1)
    assert cont.checkpoint.step == 3
    assert [step for step, _, _ in cont.loss_log.entries] == [3] * len(cont.loss_log.entries)
    assert int(cont.checkpoint.optimizer['step'][0]) == 3


def test_checkpoint_round_trip():
    s, _ = _setup()
    state = TrainState.fresh(s)
    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(state.checkpoint(), os.path.join(tmp, 'x.ckpt'))
        back = load_checkpoint(path, s)
        assert back.step == 0 and back.digest == s.digest()
        for name, array in state.params.arrays().items():
            assert_array_equal(back.params[name], array)
        assert_array_equal(back.quantizer.codebook, state.params.quantizer.codebook)
        assert back.quantizer.frozen
        restored = params_from_checkpoint(back, s)
        assert sorted(restored) == sorted(state.params)

        try:
            load_checkpoint(path, s.replace(model_dim=16))
            raise AssertionError("digest mismatch accepted")
        except CheckpointError as e:
            assert e.field == 'model_dim'
            assert 'model_dim' in str(e)

        raw = bytearray(open(path, 'rb').read())
        raw[len(raw) // 2] ^= 0xFF
        with open(path, 'wb') as f:
            f.write(bytes(raw))
        try:
            load_checkpoint(path)
            raise AssertionError("corrupted checkpoint accepted")
        except CheckpointError as e:
            assert e.field == 'checksum'

        with open(path, 'wb') as f:
            f.write(b'not a checkpoint at all, not even close to one')
        try:
            load_checkpoint(path)
            raise AssertionError("foreign file accepted")
        except CheckpointError as e:
            assert e.field == 'magic'


def test_numeric_failure_names_task():
    s, data = _setup()
    state = TrainState.fresh(s)
    weights = experiment_spec('E-0').weights
    batches = prepare_batches(1, weights, data, s, state.params.quantizer)
    with patch('src.trainer.loop.cascade_losses', side_effect=NumericError("overflow in exp")):
        try:
            train_step(batches, weights, state)
            raise AssertionError("numeric failure swallowed")
        except NumericError as e:
            assert e.task == 'casr'
            assert '[casr]' in str(e)

    nan = parameter(np.array(np.nan))
    with patch('src.trainer.loop.cascade_losses', return_value=(nan, nan)):
        try:
            train_step(batches, weights, state)
            raise AssertionError("non-finite loss accepted")
        except NumericError as e:
            assert e.task in ('casr', 'ncasr')
    assert state.step == 0


def test_adam_and_clipping():
    schedule = LearningRateSchedule(0.1, 0)
    opt = AdamOptimizer(schedule, grad_clip=1.0)
    w = parameter(np.array([3.0, -4.0]))
    for _ in range(50):
        w.zero_grad()
        tsum(mul(w, w)).backward()
        opt.step([('w', w)])
    assert np.all(np.abs(w.data) < np.array([3.0, 4.0]))

    w.zero_grad()
    tsum(mul(w, w)).backward()
    w.grad = np.array([30.0, 40.0])
    norm = clip_gradients([('w', w)], 5.0)
    assert norm == 50.0
    assert_allclose(w.grad, [3.0, 4.0])

    fresh = AdamOptimizer(schedule)
    fresh.load_state(opt.state())
    assert fresh.step_count == opt.step_count == 50
    assert_array_equal(fresh.m['w'], opt.m['w'])


def test_learning_rate_schedule():
    sched = LearningRateSchedule(1e-3, 4)
    assert_allclose([sched.rate(k) for k in (1, 2, 4)], [2.5e-4, 5e-4, 1e-3])
    assert_allclose(sched.rate(16), 5e-4)
    assert sched.is_warming_up(4) and not sched.is_warming_up(5)
    for call in (lambda: sched.rate(0), lambda: LearningRateSchedule(0.0, 1)):
        try:
            call()
            raise AssertionError("bad schedule input accepted")
        except UsageError:
            pass


TESTS = [
    ("Weight table", test_weight_table),
    ("Explicit task weights", test_explicit_task_weights),
    ("Batches do not depend on threads", test_batches_do_not_depend_on_threads),
    ("Zero-weight tasks are not prepared", test_zero_weight_tasks_are_not_prepared),
    ("Training is deterministic across threads", test_training_is_deterministic_across_threads),
    ("Loss log lists active tasks", test_loss_log_lists_active_tasks),
    ("Continue from checkpoint", test_continue_from_checkpoint),
    ("Checkpoint round trip", test_checkpoint_round_trip),
    ("Numeric failure names the task", test_numeric_failure_names_task),
    ("Adam and clipping", test_adam_and_clipping),
    ("Learning-rate schedule", test_learning_rate_schedule),
]


def run_all_tests():
    return run_test_functions("Trainer", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
