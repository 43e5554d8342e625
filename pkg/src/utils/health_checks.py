"""
Self-test suites: numerical oracles run by `main.py selftest`.

Each check returns a HealthCheckResult; the report prints one pass/fail
line per suite.
"""
import time
import logging
from datetime import datetime
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from config.settings import Settings, tiny_settings
from src.core.model import ModelParams, model_param_specs
from src.data.corpora import UnsupervisedText
from src.data.g2p import G2PTable
from src.data.wordpiece import build_wordpiece_model
from src.encoders.conformer import encode_causal, encode_noncausal
from src.frontends.audio import MaskInfo
from src.numerics.gradcheck import grad_check_params
from src.numerics.tensor import Tensor, add, parameter
from src.ssl.bestrq import bestrq_loss, init_quantizer, project, quantize
from src.ssl.joist import joist_losses, prepare_joist
from src.transducer.hat import decoder_param_specs
from src.transducer.loss import brute_force_loss, transducer_loss

logger = logging.getLogger('Cascade.SelfTest')

ORACLE_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-4


class HealthStatus:
    """Suite outcome constants."""
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"


STATUS_EMOJI = {HealthStatus.PASS: "✅", HealthStatus.FAIL: "❌", HealthStatus.ERROR: "💥"}


class HealthCheckResult:
    """Result of one self-test suite."""

    def __init__(self, suite: str, status: str, elapsed: float = None,
                 message: str = None, details: Dict = None):
        self.suite = suite
        self.status = status
        self.elapsed = elapsed
        self.message = message
        self.details = details or {}
        self.timestamp = datetime.now()

    @property
    def passed(self) -> bool:
        return self.status == HealthStatus.PASS

    def to_dict(self) -> Dict:
        return {
            'suite': self.suite,
            'status': self.status,
            'elapsed': self.elapsed,
            'message': self.message,
            'details': self.details,
            'timestamp': self.timestamp.isoformat(),
        }


def _random_params(specs, rng: np.random.Generator) -> Dict[str, Tensor]:
    return {name: parameter(rng.normal(0.0, 0.5, size=shape)) for name, (shape, _) in specs.items()}


def check_transducer_oracle(instances: int = 200, seed: int = 0) -> HealthCheckResult:
    """
    Forward-DP transducer loss against brute-force alignment enumeration.

    Instances have T' <= 4, U <= 3, V <= 5.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        vocab = int(rng.integers(2, 6))
        t_len = int(rng.integers(1, 5))
        u_len = int(rng.integers(0, 4))
        params = _random_params(decoder_param_specs('d', 3, 3, 4, 2, vocab), rng)
        enc = rng.normal(size=(t_len, 3))
        y = [int(v) for v in rng.integers(1, vocab, size=u_len)]
        dp = transducer_loss(enc, y, params, 'd').item()
        brute = brute_force_loss(enc, y, params, 'd')
        worst = max(worst, abs(dp - brute))
    status = HealthStatus.PASS if worst <= ORACLE_TOLERANCE else HealthStatus.FAIL
    return HealthCheckResult("Transducer DP", status, message=f"max |DP - brute force| = {worst:.2e} "
                             f"over {instances} instances", details={'max_abs_error': worst})


def check_quantizer_oracle(frames: int = 10_000, seed: int = 0) -> HealthCheckResult:
    """Chunked quantizer indices against an exhaustive nearest-codeword search."""
    rng = np.random.default_rng(seed)
    q = init_quantizer(seed, 8, 4, 16)
    x = rng.normal(size=(frames, 8))
    got = quantize(q, x)
    v = project(q, x)
    dist = np.zeros((frames, q.codebook_size))
    for d in range(v.shape[1]):
        dist = dist + (v[:, None, d] - q.codebook[None, :, d]) ** 2
    expected = np.argmin(dist, axis=1)
    mismatches = int(np.sum(got != expected))
    status = HealthStatus.PASS if mismatches == 0 else HealthStatus.FAIL
    return HealthCheckResult("Quantizer NN", status,
                             message=f"{mismatches} mismatches over {frames} frames",
                             details={'mismatches': mismatches})


def _gradient_cases(s: Settings, rng: np.random.Generator) -> Dict[str, Tuple[Callable[[ModelParams], Tensor], Tuple[str, ...]]]:
    """Loss closures on one random instance, with the parameter prefixes each one reaches."""
    texts = [['ba', 'dab'], ['bad']]
    wordpieces = build_wordpiece_model(texts, 10)
    g2p = G2PTable.from_words(['ba', 'dab', 'bad'])
    x = rng.normal(size=(6, s.stack_size * s.feature_dim))
    targets = wordpieces.encode(texts[0])
    flags = np.zeros(6, dtype=bool)
    flags[2:4] = True
    info = MaskInfo(2, 2, flags)
    codes = rng.integers(0, s.codebook_size, size=6)
    joist = prepare_joist(UnsupervisedText(texts[0], 'grad'), wordpieces, g2p, 0.25, rng)

    def hat(params):
        return transducer_loss(encode_causal(x, params, params.encoder_config), targets, params, 'dec.c')

    def bestrq(params):
        h = encode_noncausal(encode_causal(x, params, params.encoder_config), params, params.encoder_config)
        return bestrq_loss(h, codes, info, params)

    def text(params):
        lc, lnc = joist_losses(joist, params)
        return add(lc, lnc)

    return {
        'HAT loss': (hat, ('enc.input', 'enc.c', 'dec.c')),
        'BEST-RQ loss': (bestrq, ('enc.', 'bestrq.nc')),
        'JOIST loss': (text, ('text.', 'enc.', 'dec.')),
    }


def check_gradients(instances: int = 20, seed: int = 0, tensors_per_case: int = 6) -> HealthCheckResult:
    """
    Finite-difference checks (eps 1e-5) of the HAT, BEST-RQ and JOIST losses on tiny models.

    Each instance checks one coordinate in each of a few sampled parameter
    tensors the loss depends on.
    """
    worst: Dict[str, float] = {}
    for k in range(instances):
        s = tiny_settings(master_seed=seed + k)
        params = ModelParams.initialize(s)
        rng = np.random.default_rng(seed + k)
        for name, (loss_fn, prefixes) in _gradient_cases(s, rng).items():
            reachable = [n for n, _ in params.trainable() if n.startswith(prefixes)]
            chosen = rng.choice(len(reachable), size=min(tensors_per_case, len(reachable)), replace=False)
            subset = {reachable[i]: params[reachable[i]] for i in sorted(chosen)}
            err = grad_check_params(lambda: loss_fn(params), subset, eps=1e-5, max_coords=1, rng=rng)
            worst[name] = max(worst.get(name, 0.0), err)
    overall = max(worst.values())
    status = HealthStatus.PASS if overall <= GRADIENT_TOLERANCE else HealthStatus.FAIL
    shown = ', '.join(f"{name} {err:.1e}" for name, err in worst.items())
    return HealthCheckResult("Gradient checks", status, message=f"max relative error over {instances} "
                             f"instances: {shown}", details=worst)


def check_streaming(utterances: int = 20, seed: int = 0) -> HealthCheckResult:
    """E_C prefix invariance and E_NC right-context isolation, compared bit-exactly."""
    s = tiny_settings()
    params = ModelParams.initialize(s)
    cfg = params.encoder_config
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(utterances):
        n = int(rng.integers(6, 16))
        t = int(rng.integers(0, n - 1))
        x = rng.normal(size=(n, cfg.input_dim))
        full = encode_causal(x, params, cfg).frames.data
        prefix = encode_causal(x[:t + 1], params, cfg).frames.data
        if not np.array_equal(full[:t + 1], prefix):
            failures += 1
            continue
        cut = t + s.right_context_frames + 1
        if cut < n:
            perturbed = x.copy()
            perturbed[cut:] += rng.normal(size=perturbed[cut:].shape)
            a = encode_noncausal(encode_causal(x, params, cfg), params, cfg).frames.data
            b = encode_noncausal(encode_causal(perturbed, params, cfg), params, cfg).frames.data
            if not np.array_equal(a[:t + 1], b[:t + 1]):
                failures += 1
    status = HealthStatus.PASS if failures == 0 else HealthStatus.FAIL
    return HealthCheckResult("Streaming invariants", status,
                             message=f"{failures} violations over {utterances} utterances",
                             details={'violations': failures})


def check_parameter_count(settings: Optional[Settings] = None) -> HealthCheckResult:
    """Parameter count of the configured model, per component."""
    s = settings or Settings()
    counts: Dict[str, int] = {}
    for name, (shape, _) in sorted(model_param_specs(s).items()):
        component = '.'.join(name.split('.')[:2])
        counts[component] = counts.get(component, 0) + int(np.prod(shape))
    total = sum(counts.values())
    shown = ', '.join(f"{k}={v:,}" for k, v in counts.items())
    return HealthCheckResult("Parameter count", HealthStatus.PASS,
                             message=f"{total:,} parameters ({shown})", details={'total': total, **counts})


def run_all_health_checks(settings: Optional[Settings] = None, quick: bool = False) -> Dict[str, HealthCheckResult]:
    """
    Run every self-test suite.

    Args:
        settings: Configuration for the parameter-count report
        quick: Fewer random instances per suite

    Returns:
        Dictionary mapping suite keys to results
    """
    logger.info("Starting self-test suites...")
    scale = 5 if quick else 1
    checks = {
        'transducer': lambda: check_transducer_oracle(200 // scale),
        'quantizer': lambda: check_quantizer_oracle(10_000 // scale),
        'gradients': lambda: check_gradients(20 // scale),
        'streaming': lambda: check_streaming(20 // scale),
        'parameters': lambda: check_parameter_count(settings),
    }

    results = {}
    for check_name, check_func in checks.items():
        start_time = time.time()
        try:
            logger.info(f"Running self-test: {check_name}")
            result = check_func()
        except Exception as e:
            logger.error(f"Self-test {check_name} failed with error: {e}")
            result = HealthCheckResult(check_name, HealthStatus.ERROR, message=f"Check failed: {e}")
        result.elapsed = time.time() - start_time
        results[check_name] = result
        logger.info(f"{STATUS_EMOJI.get(result.status, '❓')} {result.suite}: {result.status} "
                    f"({result.elapsed:.2f}s) - {result.message}")
    return results


def get_overall_health_status(results: Dict[str, HealthCheckResult]) -> str:
    if not results:
        return HealthStatus.ERROR
    if any(r.status == HealthStatus.ERROR for r in results.values()):
        return HealthStatus.ERROR
    if all(r.passed for r in results.values()):
        return HealthStatus.PASS
    return HealthStatus.FAIL


def print_health_report(results: Dict[str, HealthCheckResult]) -> None:
    """
    Print a formatted self-test report.

    Args:
        results: Dictionary of suite results
    """
    overall_status = get_overall_health_status(results)

    print("\n" + "=" * 60)
    print("🧪 CASCADE SELF-TEST REPORT")
    print("=" * 60)
    print(f"Overall Status: {STATUS_EMOJI.get(overall_status, '❓')} {overall_status.upper()}")
    print(f"Check Time: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("\nSuite Details:")
    print("-" * 60)

    for result in results.values():
        elapsed = f"({result.elapsed:.2f}s)" if result.elapsed is not None else ""
        print(f"{STATUS_EMOJI.get(result.status, '❓')} {result.suite:<22} {result.status:<6} {elapsed}")
        if result.message:
            print(f"   └─ {result.message}")

    print("=" * 60)
