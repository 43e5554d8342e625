"""
Finite-difference gradient checking for the autodiff core.
"""
import logging
from typing import Callable, Dict, Optional

import numpy as np

from src.numerics.tensor import Tensor
from src.utils.errors import NumericError, UsageError

logger = logging.getLogger('Cascade.Numerics')


def _scalar(out: Tensor) -> float:
    if out.data.size != 1:
        raise UsageError(f"grad_check needs a scalar function, got shape {out.shape}")
    value = float(out.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise NumericError(f"function value is not finite ({value})")
    return value


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """
    Compare autodiff against central differences at x.

    Args:
        f: Scalar function of one tensor
        x: Point of evaluation (its values are not modified)
        eps: Finite-difference step

    Returns:
        max over coordinates of |autodiff - numeric| / max(1, |numeric|)
    """
    if eps <= 0:
        raise UsageError("grad_check needs eps > 0")
    leaf = Tensor(np.array(x.data, copy=True), requires_grad=True)
    out = f(leaf)
    _scalar(out)
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

    base = np.array(x.data, copy=True)
    worst = 0.0
    for i in range(base.size):
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += eps
        minus[i] -= eps
        f_plus = _scalar(f(Tensor(plus.reshape(base.shape))))
        f_minus = _scalar(f(Tensor(minus.reshape(base.shape))))
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


def grad_check_params(f: Callable[[], Tensor], params: Dict[str, Tensor], eps: float = 1e-5,
                      max_coords: Optional[int] = None,
                      rng: Optional[np.random.Generator] = None) -> float:
    """
    Gradient check of a scalar function with respect to named parameter leaves.

    The parameters are perturbed in place and restored afterwards.

    Args:
        f: Closure recomputing the scalar from the current parameter values
        params: Trainable leaves to check
        eps: Finite-difference step
        max_coords: Optional cap on checked coordinates per parameter (sampled with rng)
        rng: Generator used for sampling coordinates

    Returns:
        Maximum relative error over all checked coordinates
    """
    for p in params.values():
        p.zero_grad()
    out = f()
    _scalar(out)
    out.backward()
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = _scalar(f())
            flat[i] = saved - eps
            f_minus = _scalar(f())
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
                logger.debug(f"grad_check {name}[{i}]: analytic {analytic.reshape(-1)[i]:.3e} numeric {numeric:.3e}")
    for p in params.values():
        p.zero_grad()
    return worst
