"""
Joint multi-task training: one batch per dataset per step, losses summed by
task weight, one Adam update, periodic checkpoints and a step-indexed loss log.
"""
import os
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from config.settings import Settings, write_effective_config
from src.core.model import ModelParams, cascade_losses
from src.encoders.conformer import encode_causal, encode_noncausal
from src.memory.loss_log import LossLog
from src.numerics.tensor import Tensor, add, scale
from src.ssl.bestrq import bestrq_loss
from src.ssl.joist import joist_losses
from src.trainer.batches import BatchSampler, StepBatches, TrainingData, prepare_batches
from src.trainer.checkpoint import Checkpoint, params_from_checkpoint, save_checkpoint
from src.trainer.optimizer import AdamOptimizer, global_grad_norm
from src.trainer.weights import TASKS, ExperimentSpec, TaskWeights
from src.utils.errors import NumericError, SkipExample

logger = logging.getLogger('Cascade.Trainer')

LOSS_LOG_NAME = 'losses.csv'
FINAL_CHECKPOINT = 'final.ckpt'


@dataclass
class TrainState:
    """Model parameters, optimizer moments and the last completed global step."""
    params: ModelParams
    optimizer: AdamOptimizer
    step: int = 0

    @classmethod
    def fresh(cls, settings: Settings) -> 'TrainState':
        return cls(ModelParams.initialize(settings), AdamOptimizer.from_settings(settings), 0)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, settings: Settings) -> 'TrainState':
        params = params_from_checkpoint(ckpt, settings)
        optimizer = AdamOptimizer.from_settings(settings)
        optimizer.load_state(ckpt.optimizer)
        return cls(params, optimizer, ckpt.step)

    def checkpoint(self) -> Checkpoint:
        s = self.params.settings
        return Checkpoint(
            step=self.step,
            params=self.params.arrays(),
            quantizer=self.params.quantizer,
            optimizer=self.optimizer.state(),
            rng_state={'master_seed': s.master_seed, 'next_step': self.step + 1},
            digest=s.digest(),
            digest_items=s.digest_items(),
        )


@dataclass
class TrainingResult:
    checkpoint: Checkpoint
    loss_log: LossLog
    checkpoint_path: str


def _batch_mean(losses: List[Tensor]) -> Optional[Tensor]:
    if not losses:
        return None
    total = losses[0]
    for loss in losses[1:]:
        total = add(total, loss)
    return scale(total, 1.0 / len(losses))


def _for_task(task: str, fn: Callable):
    """Run a forward pass, attaching the task name to numeric failures."""
    try:
        return fn()
    except NumericError as e:
        if e.task:
            raise
        raise NumericError(str(e), task=task) from e


def _asr_terms(items, weights_c: float, weights_nc: float, params: ModelParams,
               forward: Callable, names) -> Dict[str, Tensor]:
    causal, noncausal = weights_c > 0, weights_nc > 0
    if not items or not (causal or noncausal):
        return {}
    c_losses: List[Tensor] = []
    nc_losses: List[Tensor] = []
    for item in items:
        lc, lnc = _for_task(names[0] if causal else names[1],
                            lambda: forward(item, params, causal, noncausal))
        if lc is not None:
            c_losses.append(lc)
        if lnc is not None:
            nc_losses.append(lnc)
    terms = {}
    if causal:
        terms[names[0]] = _batch_mean(c_losses)
    if noncausal:
        terms[names[1]] = _batch_mean(nc_losses)
    return terms


def _bestrq_term(batches: StepBatches, params: ModelParams) -> Optional[Tensor]:
    cfg = params.encoder_config
    causal_head = params.settings.bestrq_causal_head
    losses: List[Tensor] = []
    for item in batches.bestrq:
        h_c = encode_causal(item.x, params, cfg)
        h_nc = encode_noncausal(h_c, params, cfg)
        try:
            loss = bestrq_loss(h_nc, item.targets, item.info, params, 'bestrq.nc')
            if causal_head:
                loss = scale(add(loss, bestrq_loss(h_c, item.targets, item.info, params, 'bestrq.c')), 0.5)
        except SkipExample as e:
            logger.warning(f"Skipping BEST-RQ example {item.id}: {e}")
            continue
        losses.append(loss)
    return _batch_mean(losses)


def compute_task_losses(batches: StepBatches, weights: TaskWeights,
                        params: ModelParams) -> Dict[str, Tensor]:
    """
    Forward every task with nonzero weight on its prepared batch.

    Returns:
        task -> batch-mean loss tensor, in TASKS order; tasks whose batch came
        up empty are absent
    """
    terms: Dict[str, Tensor] = {}
    terms.update(_asr_terms(
        batches.supervised, weights.w_casr, weights.w_ncasr, params,
        lambda item, p, c, nc: cascade_losses(p, item.x, item.targets, causal=c, noncausal=nc),
        ('casr', 'ncasr')))
    terms.update(_asr_terms(
        batches.joist, weights.w_cjoist, weights.w_ncjoist, params,
        lambda ex, p, c, nc: joist_losses(ex, p, causal=c, noncausal=nc),
        ('cjoist', 'ncjoist')))

    if weights.w_tts > 0 and batches.tts:
        def tts_forward():
            pairs = []
            for item in batches.tts:
                lc, lnc = cascade_losses(params, item.x, item.targets)
                pairs.append(scale(add(lc, lnc), 0.5))
            return _batch_mean(pairs)
        terms['tts'] = _for_task('tts', tts_forward)

    if weights.w_bestrq > 0:
        loss = _for_task('bestrq', lambda: _bestrq_term(batches, params))
        if loss is not None:
            terms['bestrq'] = loss
        else:
            logger.warning(f"Step {batches.step}: every BEST-RQ example was skipped")

    return {task: terms[task] for task in TASKS if terms.get(task) is not None}


def train_step(batches: StepBatches, weights: TaskWeights, state: TrainState) -> Dict[str, float]:
    """
    One joint update: total = sum of w_task * loss_task, then Adam on all trainable tensors.

    Args:
        batches: Prepared batches of this step
        weights: Task weights
        state: Training state, updated in place

    Returns:
        task -> loss value for every task that contributed

    Raises:
        NumericError: a task loss or the gradient is non-finite (names the task)
    """
    params = state.params
    params.zero_grad()
    terms = compute_task_losses(batches, weights, params)
    values = {task: loss.item() for task, loss in terms.items()}
    for task, value in values.items():
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {batches.step}", task=task)
    if not terms:
        logger.warning(f"Step {batches.step}: no task produced a loss; skipping the update")
        state.step = batches.step
        return values

    total = None
    for task, loss in terms.items():
        weighted = scale(loss, weights.weight(task))
        total = weighted if total is None else add(total, weighted)
    total.backward()

    trainable = params.trainable()
    norm = global_grad_norm(trainable)
    if not np.isfinite(norm):
        raise NumericError(f"non-finite gradient norm at step {batches.step}", task='+'.join(terms))
    state.optimizer.step(trainable)
    state.step = batches.step
    return values


def run_training(spec: ExperimentSpec, settings: Settings, data: TrainingData, out_dir: str,
                 init: Optional[Checkpoint] = None, steps: Optional[int] = None,
                 threads: Optional[int] = None) -> TrainingResult:
    """
    Train one experiment, from scratch or continuing from a checkpoint.

    Args:
        spec: Experiment label and task weights
        settings: Configuration
        data: Corpora, wordpieces, G2P table and TTS oracle
        out_dir: Run directory (effective config, loss log, checkpoints)
        init: Checkpoint to continue from
        steps: Step budget (default: continue_steps with init, steps without)
        threads: Batch-preparation workers (default: settings.threads)

    Returns:
        TrainingResult with the final checkpoint and the loss log

    Raises:
        NumericError: a loss went non-finite; earlier periodic checkpoints stay on disk
    """
    if steps is None:
        steps = settings.continue_steps if init is not None else settings.steps
    os.makedirs(out_dir, exist_ok=True)
    write_effective_config(settings, out_dir)

    state = TrainState.from_checkpoint(init, settings) if init is not None else TrainState.fresh(settings)
    counts = state.params.count()
    logger.info(f"Training {spec.label} for {steps} steps from step {state.step} "
                f"({counts['total']:,} parameters, active tasks: {', '.join(spec.weights.active_tasks())})")

    loss_log = LossLog(os.path.join(out_dir, LOSS_LOG_NAME))
    sampler = BatchSampler(settings.master_seed)
    ckpt_dir = os.path.join(out_dir, 'checkpoints')
    last_good: Optional[str] = None
    first = state.step + 1

    for step in range(first, first + steps):
        batches = prepare_batches(step, spec.weights, data, settings, state.params.quantizer,
                                  sampler, threads)
        try:
            losses = train_step(batches, spec.weights, state)
        except NumericError as e:
            logger.error(f"Aborting {spec.label} at step {step}: {e} "
                         f"(last good checkpoint: {last_good or 'none'})")
            raise
        loss_log.add_step(step, losses)
        if step == first or step % settings.log_every == 0:
            shown = ', '.join(f"{task}={value:.4f}" for task, value in losses.items())
            logger.info(f"Step {step}: {shown}")
        if step % settings.checkpoint_every == 0:
            last_good = save_checkpoint(state.checkpoint(), os.path.join(ckpt_dir, f"step_{step:06d}.ckpt"))

    final = state.checkpoint()
    path = save_checkpoint(final, os.path.join(out_dir, FINAL_CHECKPOINT))
    if loss_log.entries:
        logger.info(loss_log.format_summary())
    return TrainingResult(final, loss_log, path)
