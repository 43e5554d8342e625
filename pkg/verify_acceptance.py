#!/usr/bin/env python3
"""
Acceptance Verification Script for Cascade
Runs the slower acceptance experiments: oracle suites at full size,
determinism over longer runs, beam-width trends on a trained toy model and
the directional end-to-end reproduction over several master seeds.
"""
import os
import sys
import argparse
import itertools
import tempfile
from fractions import Fraction
from typing import Dict, List

import numpy as np

from config.settings import load_config, tiny_settings
from src.data.corpora import CorpusConfig, synth_corpora, synth_held_out
from src.data.partitions import PartitionThresholds, partition_test_sets
from src.data.wordpiece import build_wordpiece_model
from src.decode.beam_search import beam_search
from src.decode.pipeline import decode_examples
from src.eval.metrics import lattice_density
from src.eval.report import relative_delta
from src.frontends.audio import span_length
from src.numerics.tensor import parameter
from src.trainer.batches import build_training_data, prepare_batches
from src.trainer.checkpoint import load_checkpoint, params_from_checkpoint, save_checkpoint
from src.trainer.grid import run_grid
from src.trainer.loop import TrainState, compute_task_losses, run_training
from src.trainer.weights import EXPERIMENT_LABELS, SUPERVISED_SHARE, UNSUPERVISED_FRACTIONS, \
    experiment_spec, resolve_weight_fractions
from src.transducer.hat import HatDecoder, decoder_param_specs
from src.utils.health_checks import (
    check_gradients, check_quantizer_oracle, check_streaming, check_transducer_oracle,
)
from src.utils.logging_setup import setup_logging
from src.utils.reporting import print_header, print_task


def _suite(result) -> bool:
    print_task(f"{result.suite}: {result.message} ({result.elapsed or 0:.1f}s)",
               "pass" if result.passed else "fail")
    return result.passed


def _toy(seed: int = 0, **overrides):
    s = tiny_settings(master_seed=seed, **overrides)
    corpora = synth_corpora(CorpusConfig.from_settings(s), s.master_seed)
    texts = [ex.text for ex in corpora.supervised] + [ex.text for ex in corpora.unsup_text]
    wordpieces = build_wordpiece_model(texts, s.vocab_size)
    return s, corpora, wordpieces, build_training_data(s, corpora, wordpieces)


def test_oracle_suites():
    """Transducer, gradient, streaming and quantizer oracles at full size."""
    print_header("Oracle Suites")
    ok = _suite(check_transducer_oracle(200))
    ok &= _suite(check_gradients(20))
    ok &= _suite(check_streaming(100))
    ok &= _suite(check_quantizer_oracle(10_000))
    return ok


def test_bestrq_contracts():
    """Span lengths over [10, 500] and a frozen quantizer across 100 steps."""
    print_header("BEST-RQ Contracts")
    bad = [n for n in range(10, 501) if span_length(0.15, n) != (15 * n) // 100]
    print_task(f"Span length floor(0.15 n) for n in [10, 500] ({len(bad)} mismatches)",
               "pass" if not bad else "fail")

    s, _, _, data = _toy(0)
    before = TrainState.fresh(s).params.quantizer
    with tempfile.TemporaryDirectory() as tmp:
        result = run_training(experiment_spec('E-ABC'), s, data, tmp, steps=100)
    after = result.checkpoint.quantizer
    frozen = (np.array_equal(before.codebook, after.codebook)
              and np.array_equal(before.projection, after.projection))
    print_task("Quantizer bitwise unchanged after 100 E-ABC steps", "pass" if frozen else "fail")
    return not bad and frozen


def test_weight_resolution():
    """Every experiment label resolves to its exact rational weights."""
    print_header("Task-Weight Resolution")
    ok = True
    for label in EXPERIMENT_LABELS:
        fractions = resolve_weight_fractions(label)
        if label == 'E-0':
            expected = (Fraction(1, 2),) * 2 + (0,) * 4
        else:
            rest = 1 - SUPERVISED_SHARE
            expected = (SUPERVISED_SHARE / 2,) * 2 + tuple(rest * f for f in UNSUPERVISED_FRACTIONS[label])
        good = fractions == expected and sum(fractions) == 1
        print_task(f"{label}: {', '.join(str(f) for f in fractions)}", "pass" if good else "fail")
        ok &= good
    return ok


def test_beam_oracle(instances: int = 50):
    """1-best of a wide beam equals the exhaustive argmax on enumerable instances."""
    print_header("Beam-Search Oracle")
    rng = np.random.default_rng(0)
    specs = decoder_param_specs('d', 3, 3, 4, 2, 2)
    failures = 0
    for _ in range(instances):
        params = {name: parameter(rng.normal(0.0, 0.8, size=shape)) for name, (shape, _) in specs.items()}
        decoder = HatDecoder(params, 'd')
        enc = rng.normal(size=(2, 3))
        frames = decoder.prepare(enc)
        probs: Dict[tuple, float] = {}
        # every capped alignment on T'=2 with one label and max_symbols=2
        for counts in itertools.product(range(3), repeat=2):
            state, labels, logp = decoder.start_state(), (), 0.0
            for t, n in enumerate(counts):
                for _ in range(n):
                    logp += decoder.joint(frames[t], state)[1]
                    state, labels = decoder.advance(state, 1), labels + (1,)
                logp += decoder.joint(frames[t], state)[0]
            probs[labels] = probs.get(labels, 0.0) + np.exp(logp)
        best = max(probs, key=lambda y: (probs[y], -len(y)))
        result = beam_search(enc, decoder, beam_width=64, max_symbols_per_frame=2)
        failures += result.nbest[0].labels != best
    print_task(f"{instances - failures}/{instances} instances agree", "pass" if failures == 0 else "fail")
    return failures == 0


def test_beam_width_trends(utterances: int = 100, train_steps: int = 20):
    """States and lattice density do not shrink as the beam widens."""
    print_header("Beam-Width Trends")
    s, _, wordpieces, data = _toy(0, held_out_size=utterances)
    with tempfile.TemporaryDirectory() as tmp:
        params = params_from_checkpoint(run_training(experiment_spec('E-0'), s, data, tmp,
                                                     steps=train_steps).checkpoint, s)
    held_out = synth_held_out(CorpusConfig.from_settings(s), s.master_seed)
    refs = [wordpieces.encode(ex.text) for ex in held_out]
    widths = (1, 2, 4, 8)
    runs = {b: decode_examples(params, held_out, 'nc', beam_width=b) for b in widths}
    comparisons = states_ok = density_ok = 0
    for narrow, wide in zip(widths, widths[1:]):
        for a, b, ref in zip(runs[narrow], runs[wide], refs):
            comparisons += 1
            states_ok += b.stats.states_expanded >= a.stats.states_expanded
            density_ok += lattice_density(b.lattice, ref) >= lattice_density(a.lattice, ref)
    ok = True
    for name, good in (("states_expanded", states_ok), ("lattice density", density_ok)):
        passed = good >= 0.95 * comparisons
        print_task(f"{name} non-decreasing in {good}/{comparisons} comparisons", "pass" if passed else "fail")
        ok &= passed
    return ok


def test_determinism_and_persistence(steps: int = 50):
    """Bit-identical checkpoints across thread counts; bit-exact loss after reload."""
    print_header("Determinism and Persistence")
    s, _, _, data = _toy(5)
    spec = experiment_spec('E-ABC')
    with tempfile.TemporaryDirectory() as tmp:
        one = run_training(spec, s, data, os.path.join(tmp, 't1'), steps=steps, threads=1)
        four = run_training(spec, s, data, os.path.join(tmp, 't4'), steps=steps, threads=4)
        same = all(np.array_equal(a, four.checkpoint.params[name]) for name, a in one.checkpoint.params.items())
        print_task(f"Checkpoints after {steps} steps identical for 1 and 4 threads", "pass" if same else "fail")

        loaded = params_from_checkpoint(load_checkpoint(save_checkpoint(one.checkpoint, os.path.join(tmp, 'x.ckpt')), s), s)
    original = params_from_checkpoint(one.checkpoint, s)
    batches = prepare_batches(steps + 1, spec.weights, data, s, original.quantizer)
    a = {k: v.item() for k, v in compute_task_losses(batches, spec.weights, original).items()}
    b = {k: v.item() for k, v in compute_task_losses(batches, spec.weights, loaded).items()}
    exact = a == b
    print_task("Fixed-batch losses bit-exact after save and load", "pass" if exact else "fail")
    return same and exact


def test_toy_reproduction(config_path: str, seeds: List[int]):
    """Median E-A vs E-0 deltas: negative on RPN and R_LM, flat on VS."""
    print_header("End-to-End Toy Reproduction")
    base = load_config(config_path)
    deltas: Dict[str, List[float]] = {'vs': [], 'rpn': [], 'r_lm': []}
    with tempfile.TemporaryDirectory() as tmp:
        for seed in seeds:
            s = base.replace(master_seed=seed)
            config = CorpusConfig.from_settings(s)
            corpora = synth_corpora(config, seed)
            parts = partition_test_sets(corpora.supervised, corpora.unsup_text, synth_held_out(config, seed),
                                        PartitionThresholds.from_settings(s))
            texts = [ex.text for ex in corpora.supervised] + [ex.text for ex in corpora.unsup_text]
            data = build_training_data(s, corpora, build_wordpiece_model(texts, s.vocab_size))
            reports = run_grid(['E-A'], s, data, parts, os.path.join(tmp, f"seed{seed}"))
            for name in deltas:
                b, c = reports['E-0'].get(name), reports['E-A'].get(name)
                delta = relative_delta(c.wer, b.wer) if b and c else None
                if delta is not None:
                    deltas[name].append(delta)
                print_task(f"seed {seed} {name}: {'n/a' if delta is None else f'{100 * delta:+.1f}%'}")

    medians = {name: float(np.median(v)) if v else None for name, v in deltas.items()}
    checks = [
        ("RPN median delta negative", medians['rpn'] is not None and medians['rpn'] < 0),
        ("R_LM median delta negative", medians['r_lm'] is not None and medians['r_lm'] < 0),
        ("VS median delta within 2%", medians['vs'] is not None and abs(medians['vs']) <= 0.02),
    ]
    for name, good in checks:
        print_task(name, "pass" if good else "fail")
    return all(good for _, good in checks)


def run_all_tests(argv=None):
    """Run all acceptance experiments."""
    parser = argparse.ArgumentParser(description="Cascade acceptance experiments")
    parser.add_argument('--config', help='Configuration for the toy reproduction (default: desk defaults)')
    parser.add_argument('--seeds', default='1,2,3', help='Master seeds for the toy reproduction')
    parser.add_argument('--skip-toy', action='store_true', help='Skip the end-to-end toy reproduction')
    args = parser.parse_args(argv)
    setup_logging(None)

    print("🌀 CASCADE ACCEPTANCE VERIFICATION")

    tests = [
        ("Oracle Suites", test_oracle_suites),
        ("BEST-RQ Contracts", test_bestrq_contracts),
        ("Task-Weight Resolution", test_weight_resolution),
        ("Beam-Search Oracle", test_beam_oracle),
        ("Beam-Width Trends", test_beam_width_trends),
        ("Determinism and Persistence", test_determinism_and_persistence),
    ]
    if not args.skip_toy:
        seeds = [int(s) for s in args.seeds.split(',')]
        tests.append(("End-to-End Toy Reproduction", lambda: test_toy_reproduction(args.config, seeds)))

    results = []
    for test_name, test_func in tests:
        try:
            results.append((test_name, bool(test_func())))
        except Exception as e:
            print_task(f"{test_name} crashed: {type(e).__name__}: {e}", "fail")
            results.append((test_name, False))

    print_header("VERIFICATION SUMMARY")
    passed = sum(1 for _, result in results if result)
    for test_name, result in results:
        print(f"{'✅ PASS' if result else '❌ FAIL'} {test_name}")
    print(f"\nTests Passed: {passed}/{len(results)}")
    if passed == len(results):
        print("\n🎉 All acceptance experiments passed.")
    else:
        print(f"\n❌ {len(results) - passed} acceptance experiments failed.")
    return passed == len(results)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
