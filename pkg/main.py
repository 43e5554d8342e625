#!/usr/bin/env python3
"""
Cascade - streaming semi-supervised ASR at desk scale
Command-line entry point: corpus synthesis, training, decoding, evaluation,
lattice inspection, self-tests and the experiment grid.
"""
import os
import sys
import logging
import argparse
from typing import Callable, List, Optional

from config.settings import Settings, load_config, write_effective_config
from src.data.corpora import CorpusConfig, synth_corpora, synth_held_out, write_corpora
from src.data.partitions import (
    PARTITION_LABELS, PartitionThresholds, partition_test_sets, read_partitions, write_partitions,
)
from src.data.wordpiece import WordpieceModel, build_wordpiece_model
from src.decode.lattice import format_lattice, read_lattice
from src.decode.pipeline import decode_examples, write_decode_outputs
from src.eval.report import EvalReport, evaluate_suite, render_tables
from src.trainer.batches import WORDPIECE_FILE, load_training_data
from src.trainer.checkpoint import load_checkpoint, params_from_checkpoint
from src.trainer.grid import run_grid
from src.trainer.loop import run_training
from src.trainer.weights import experiment_spec
from src.utils.errors import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, UsageError, exit_code_for
from src.utils.logging_setup import setup_logging

logger = logging.getLogger('Cascade.CLI')

PARTITIONS_DIR = 'partitions'
REPORT_FILE = 'report.csv'


class CliArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the usage code (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(prog='cascade', description=__doc__.strip().split('\n')[0])
    parser.add_argument('--config', help='Configuration file (default: $CASCADE_CONFIG, then built-in defaults)')
    parser.add_argument('--out', help='Output directory for the command')
    parser.add_argument('--threads', type=int, help='Worker threads (default: $CASCADE_THREADS, then config)')
    parser.add_argument('--verbose', action='store_true', help='Debug-level logging')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=CliArgumentParser)
    sub.required = True

    p = sub.add_parser('synth', help='Synthesize corpora, test partitions and the wordpiece model')
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser('train', help='Train one experiment')
    p.add_argument('--experiment', help='Experiment label (E-0, E-A, ..., E-ABC)')
    p.add_argument('--task-weights', help='Explicit weights casr,ncasr,cjoist,ncjoist,tts,bestrq')
    p.add_argument('--init', help='Checkpoint to continue from')
    p.add_argument('--steps', type=int, help='Number of steps to run')
    p.add_argument('--data', help='Corpus directory (default: data_dir)')
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('decode', help='Write n-best lists and lattices for one test partition')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--partition', required=True, help='VS, Noisy, RPN, R_LM or C_LM')
    p.add_argument('--causal', action='store_true', help='Decode E_C -> D_C instead of the cascade')
    p.add_argument('--beam', type=int, help='Beam width (default: beam_width)')
    p.add_argument('--data', help='Corpus directory (default: data_dir)')
    p.set_defaults(handler=cmd_decode)

    p = sub.add_parser('eval', help='Evaluate a checkpoint on every test partition')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--baseline', help='Baseline report.csv to compute relative deltas against')
    p.add_argument('--causal', action='store_true', help='Decode E_C -> D_C instead of the cascade')
    p.add_argument('--label', default='model', help='Experiment label stored in the report')
    p.add_argument('--data', help='Corpus directory (default: data_dir)')
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('inspect-lattice', help='Pretty-print a lattice file')
    p.add_argument('path')
    p.add_argument('--wordpieces', help='Wordpiece model for readable arc labels')
    p.set_defaults(handler=cmd_inspect_lattice)

    p = sub.add_parser('selftest', help='Run the numerical oracle suites')
    p.add_argument('--quick', action='store_true', help='Fewer random instances per suite')
    p.set_defaults(handler=cmd_selftest)

    p = sub.add_parser('grid', help='Train E-0, continue each experiment from it, evaluate and compare')
    p.add_argument('--experiments', required=True, help='Comma-separated labels, e.g. E-A,E-C')
    p.add_argument('--data', help='Corpus directory (default: data_dir)')
    p.set_defaults(handler=cmd_grid)
    return parser


def resolve_threads(args, settings: Settings) -> int:
    threads = args.threads
    if threads is None and os.getenv('CASCADE_THREADS'):
        try:
            threads = int(os.environ['CASCADE_THREADS'])
        except ValueError:
            raise UsageError(f"CASCADE_THREADS must be an integer, got {os.environ['CASCADE_THREADS']!r}")
    if threads is None:
        threads = settings.threads
    if threads < 1:
        raise UsageError(f"--threads must be >= 1 (got {threads})")
    return threads


def _start_run(args, out_dir: str, settings: Settings) -> str:
    """Attach the run log and echo the effective configuration into out_dir."""
    setup_logging(out_dir, args.log_level)
    write_effective_config(settings, out_dir)
    return out_dir


def cmd_synth(args, settings: Settings, threads: int) -> int:
    out_dir = _start_run(args, args.out or settings.data_dir, settings)
    config = CorpusConfig.from_settings(settings)
    corpora = synth_corpora(config, settings.master_seed)
    held_out = synth_held_out(config, settings.master_seed)
    write_corpora(out_dir, corpora, held_out)

    parts = partition_test_sets(corpora.supervised, corpora.unsup_text, held_out,
                                PartitionThresholds.from_settings(settings))
    write_partitions(os.path.join(out_dir, PARTITIONS_DIR), parts)

    texts = [ex.text for ex in corpora.supervised] + [ex.text for ex in corpora.unsup_text]
    wordpieces = build_wordpiece_model(texts, settings.vocab_size)
    wordpieces.save(os.path.join(out_dir, WORDPIECE_FILE))

    print(f"✅ Corpora written to {out_dir}")
    print(f"   supervised={len(corpora.supervised)}, unsup_audio={len(corpora.unsup_audio)}, "
          f"unsup_text={len(corpora.unsup_text)}, held_out={len(held_out)}, wordpieces={len(wordpieces)}")
    print("   partitions: " + ', '.join(f"{PARTITION_LABELS[n]}={k}" for n, k in parts.sizes().items()))
    return EXIT_OK


def cmd_train(args, settings: Settings, threads: int) -> int:
    label = args.experiment or settings.experiment
    spec = experiment_spec(label, args.task_weights or settings.task_weights or None)
    out_dir = args.out or os.path.join(settings.runs_dir, label)
    setup_logging(out_dir, args.log_level)
    if args.steps is not None and args.steps < 0:
        raise UsageError(f"--steps must be >= 0 (got {args.steps})")
    data = load_training_data(settings, args.data)
    init = load_checkpoint(args.init, settings) if args.init else None
    result = run_training(spec, settings, data, out_dir, init=init, steps=args.steps, threads=threads)
    print(f"✅ {label} trained to step {result.checkpoint.step}; checkpoint {result.checkpoint_path}")
    if result.loss_log.entries:
        print(result.loss_log.format_summary())
    return EXIT_OK


def _load_partitions(args, settings: Settings):
    data_dir = args.data or settings.data_dir
    wordpieces = WordpieceModel.load(os.path.join(data_dir, WORDPIECE_FILE))
    return read_partitions(os.path.join(data_dir, PARTITIONS_DIR), settings.frame_step_ms), wordpieces


def cmd_decode(args, settings: Settings, threads: int) -> int:
    partitions, wordpieces = _load_partitions(args, settings)
    examples = partitions.get(args.partition)
    out_dir = _start_run(args, args.out or os.path.join(settings.runs_dir, 'decode', args.partition.lower()),
                         settings)
    if args.beam is not None and args.beam < 1:
        raise UsageError(f"--beam must be >= 1 (got {args.beam})")
    if not examples:
        raise UsageError(f"partition {args.partition} is empty")
    params = params_from_checkpoint(load_checkpoint(args.checkpoint, settings), settings)
    results = decode_examples(params, examples, 'c' if args.causal else 'nc', args.beam, threads)
    write_decode_outputs(out_dir, examples, results, wordpieces)
    print(f"✅ Decoded {len(results)} utterances of {args.partition} into {out_dir}")
    return EXIT_OK


def cmd_eval(args, settings: Settings, threads: int) -> int:
    partitions, wordpieces = _load_partitions(args, settings)
    out_dir = _start_run(args, args.out or os.path.join(settings.runs_dir, 'eval', args.label), settings)
    baseline = EvalReport.from_csv(args.baseline) if args.baseline else None
    checkpoint = load_checkpoint(args.checkpoint, settings)
    report = evaluate_suite(checkpoint, partitions, settings, wordpieces, label=args.label,
                            causal=args.causal, threads=threads)
    path = report.to_csv(os.path.join(out_dir, REPORT_FILE))
    print(report.render_table(baseline))
    print(f"\n✅ Report written to {path}")
    return EXIT_OK


def cmd_inspect_lattice(args, settings: Settings, threads: int) -> int:
    lattice = read_lattice(args.path)
    units = WordpieceModel.load(args.wordpieces).vocabulary if args.wordpieces else None
    print(format_lattice(lattice, units))
    return EXIT_OK


def cmd_selftest(args, settings: Settings, threads: int) -> int:
    from src.utils.health_checks import (
        HealthStatus, get_overall_health_status, print_health_report, run_all_health_checks,
    )
    print("\n🧪 Running self-test suites...")
    results = run_all_health_checks(settings, quick=args.quick)
    print_health_report(results)
    return EXIT_OK if get_overall_health_status(results) == HealthStatus.PASS else EXIT_RUNTIME


def cmd_grid(args, settings: Settings, threads: int) -> int:
    labels = [label.strip() for label in args.experiments.split(',') if label.strip()]
    if not labels:
        raise UsageError("--experiments needs at least one label")
    for label in labels:
        experiment_spec(label)
    out_dir = args.out or os.path.join(settings.runs_dir, 'grid')
    setup_logging(out_dir, args.log_level)
    data = load_training_data(settings, args.data)
    partitions = read_partitions(os.path.join(args.data or settings.data_dir, PARTITIONS_DIR),
                                 settings.frame_step_ms)
    reports = run_grid(labels, settings, data, partitions, out_dir, threads=threads)
    print(render_tables(list(reports.values()), baseline='E-0'))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])

    Returns:
        0 on success, 1 for usage errors, 2 for runtime or numeric failures
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    args.log_level = logging.DEBUG if args.verbose else logging.INFO
    setup_logging(None, args.log_level)
    try:
        settings = load_config(args.config)
        threads = resolve_threads(args, settings)
        handler: Callable[..., int] = args.handler
        return handler(args, settings, threads)
    except Exception as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        if args.verbose:
            logger.exception("Traceback:")
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return code


def sync_main():
    """Console entry point."""
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n👋 Interrupted.", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    sync_main()
