#!/usr/bin/env python3
"""
Tests for configuration loading and the command-line surface: exit codes,
config errors, thread resolution and an end-to-end tiny run.
"""
import io
import os
import sys
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from types import SimpleNamespace
from unittest.mock import patch

from config.settings import (
    EFFECTIVE_CONFIG_NAME, Settings, derive_seed, load_config, parse_config_text, tiny_settings,
)
from main import PARTITIONS_DIR, REPORT_FILE, main, resolve_threads
from src.data.partitions import PARTITION_LABELS, read_partitions
from src.eval.report import EvalReport
from src.utils.errors import (
    EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, CheckpointError, ConfigError, NumericError, UsageError, exit_code_for,
)
from src.utils.logging_setup import setup_logging
from src.utils.reporting import run_test_functions


def _run(argv):
    """Run the CLI with captured output; returns (code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    setup_logging(None)
    return code, out.getvalue(), err.getvalue()


def _expect_config_error(text, key=None, line=None):
    try:
        parse_config_text(text)
        raise AssertionError(f"config accepted: {text!r}")
    except ConfigError as e:
        if key is not None:
            assert e.key == key, (e.key, key)
        if line is not None:
            assert e.line == line, (e.line, line)
        return e


def test_empty_config_gives_defaults():
    assert parse_config_text('') == Settings()
    assert parse_config_text('# only a comment\n\n') == Settings()
    with patch.dict(os.environ, {'CASCADE_CONFIG': ''}):
        assert load_config(None) == Settings()


def test_config_keys_and_sections():
    s = parse_config_text("beam_width = 8\ndecode.lattice_signature = ngram\nbestrq_causal_head = yes\n")
    assert s.beam_width == 8 and s.lattice_signature == 'ngram' and s.bestrq_causal_head is True
    assert parse_config_text("steps = 1_000\n").steps == 1000
    s = tiny_settings()
    assert parse_config_text(s.to_text()) == s


def test_config_errors_name_key_and_line():
    e = _expect_config_error("# header\n\nbeam_width = 0\n", key='beam_width', line=3)
    assert "beam_width" in str(e) and "line 3" in str(e)
    _expect_config_error("beem_width = 4\n", key='beem_width', line=1)
    _expect_config_error("encoder.beam_width = 4\n", key='encoder.beam_width')
    _expect_config_error("model_dim = sixty\n", key='model_dim')
    _expect_config_error("model_dim = 10\nheads = 4\n", key='heads', line=2)
    _expect_config_error("mask_ratio_audio = 1.0\n", key='mask_ratio_audio')
    _expect_config_error("lattice_signature = trigram\n", key='lattice_signature')
    _expect_config_error("task_weights = 1,1\n", key='task_weights')


def test_bad_config_file_exits_with_usage():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'bad.env')
        with open(path, 'w', encoding='utf-8') as f:
            f.write("beam_width = 0\n")
        code, _, err = _run(['--config', path, 'selftest', '--quick'])
        assert code == EXIT_USAGE
        assert 'beam_width' in err
        code, _, _ = _run(['--config', os.path.join(tmp, 'missing.env'), 'selftest'])
        assert code == EXIT_USAGE


def test_argument_errors_exit_with_usage():
    assert _run([])[0] == EXIT_USAGE
    assert _run(['selftest', '--bogus'])[0] == EXIT_USAGE
    assert _run(['frobnicate'])[0] == EXIT_USAGE
    assert _run(['--threads', '0', 'selftest'])[0] == EXIT_USAGE
    assert _run(['--help'])[0] == EXIT_OK


def test_exit_code_mapping():
    assert exit_code_for(UsageError("x")) == EXIT_USAGE
    assert exit_code_for(ConfigError("x", key='k')) == EXIT_USAGE
    assert exit_code_for(NumericError("x", task='casr')) == EXIT_RUNTIME
    assert exit_code_for(CheckpointError("x", field='magic')) == EXIT_RUNTIME
    assert exit_code_for(KeyError('x')) == EXIT_RUNTIME


def test_thread_resolution():
    s = Settings(threads=2)
    assert resolve_threads(SimpleNamespace(threads=5), s) == 5
    with patch.dict(os.environ, {'CASCADE_THREADS': ''}):
        assert resolve_threads(SimpleNamespace(threads=None), s) == 2
    with patch.dict(os.environ, {'CASCADE_THREADS': '3'}):
        assert resolve_threads(SimpleNamespace(threads=None), s) == 3
        assert resolve_threads(SimpleNamespace(threads=4), s) == 4
    with patch.dict(os.environ, {'CASCADE_THREADS': 'many'}):
        try:
            resolve_threads(SimpleNamespace(threads=None), s)
            raise AssertionError("non-integer CASCADE_THREADS accepted")
        except UsageError:
            pass


def test_derive_seed():
    assert derive_seed(7, 'quantizer') == derive_seed(7, 'quantizer')
    assert derive_seed(7, 'quantizer') != derive_seed(8, 'quantizer')
    assert derive_seed(7, 'batch', 1, 'S', 0) != derive_seed(7, 'batch', 1, 'S', 1)
    assert derive_seed(7, 'ab', 'c') != derive_seed(7, 'a', 'bc')
    assert 0 <= derive_seed(2 ** 70, 'x') < 2 ** 63


def test_selftest_quick_passes():
    code, out, _ = _run(['selftest', '--quick'])
    assert code == EXIT_OK, out
    assert 'SELF-TEST REPORT' in out


def test_end_to_end_tiny_run():
    with tempfile.TemporaryDirectory() as tmp:
        config = os.path.join(tmp, 'tiny.env')
        with open(config, 'w', encoding='utf-8') as f:
            f.write(tiny_settings().to_text())
        data, run = os.path.join(tmp, 'data'), os.path.join(tmp, 'run')

        code, out, _ = _run(['--config', config, '--out', data, 'synth'])
        assert code == EXIT_OK, out
        assert os.path.exists(os.path.join(data, EFFECTIVE_CONFIG_NAME))
        assert os.path.exists(os.path.join(data, 'cascade.log'))

        code, out, _ = _run(['--config', config, '--out', run, 'train', '--data', data, '--steps', '1'])
        assert code == EXIT_OK, out
        checkpoint = os.path.join(run, 'final.ckpt')
        assert os.path.exists(checkpoint)

        sizes = read_partitions(os.path.join(data, PARTITIONS_DIR), tiny_settings().frame_step_ms).sizes()
        name = max(sizes, key=lambda n: sizes[n])
        dec = os.path.join(tmp, 'dec')
        code, out, _ = _run(['--config', config, '--out', dec, 'decode', '--checkpoint', checkpoint,
                             '--partition', PARTITION_LABELS[name], '--data', data])
        assert code == EXIT_OK, out
        lattices = os.listdir(os.path.join(dec, 'lattices'))
        assert len(lattices) == sizes[name]

        code, out, _ = _run(['--config', config, 'inspect-lattice', os.path.join(dec, 'lattices', lattices[0])])
        assert code == EXIT_OK and 'finals' in out

        ev = os.path.join(tmp, 'eval')
        code, out, _ = _run(['--config', config, '--out', ev, 'eval', '--checkpoint', checkpoint,
                             '--data', data, '--label', 'E-0'])
        assert code == EXIT_OK, out
        report = EvalReport.from_csv(os.path.join(ev, REPORT_FILE))
        assert report.label == 'E-0'
        assert set(report.scores) == {n for n, k in sizes.items() if k}

        # a checkpoint only loads into the configuration that shaped it
        other = os.path.join(tmp, 'other.env')
        with open(other, 'w', encoding='utf-8') as f:
            f.write(tiny_settings(model_dim=16).to_text())
        code, _, err = _run(['--config', other, '--out', ev, 'eval', '--checkpoint', checkpoint, '--data', data])
        assert code == EXIT_RUNTIME and 'model_dim' in err

        code, _, _ = _run(['--config', config, 'train', '--data', os.path.join(tmp, 'nowhere'),
                           '--out', os.path.join(tmp, 'r2')])
        assert code == EXIT_USAGE


TESTS = [
    ("Empty config gives defaults", test_empty_config_gives_defaults),
    ("Config keys and sections", test_config_keys_and_sections),
    ("Config errors name key and line", test_config_errors_name_key_and_line),
    ("Bad config file exits with usage", test_bad_config_file_exits_with_usage),
    ("Argument errors exit with usage", test_argument_errors_exit_with_usage),
    ("Exit code mapping", test_exit_code_mapping),
    ("Thread resolution", test_thread_resolution),
    ("Seed derivation", test_derive_seed),
    ("Quick self-test passes", test_selftest_quick_passes),
    ("End-to-end tiny run", test_end_to_end_tiny_run),
]


def run_all_tests():
    return run_test_functions("CLI", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
