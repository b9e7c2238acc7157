"""Float64 kernels: stable soft reductions, matrix helpers, and the
central-difference gradient oracle used to verify every analytic gradient."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import (
    DegenerateInput,
    InvalidParameter,
    NumericalFailure,
    ShapeError,
)


def log_sum_exp(xs, scale: float) -> float:
    """tau * log(sum(exp(x_i / tau))), max-shifted so nothing overflows.

    Result is sandwiched in [max(xs), max(xs) + tau*log(n)].
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise DegenerateInput("log_sum_exp of an empty vector")
    if scale <= 0:
        raise InvalidParameter(f"scale must be positive, got {scale}")
    m = float(np.max(xs))
    return m + scale * float(np.log(np.sum(np.exp((xs - m) / scale))))


def soft_min(xs, tau: float) -> float:
    """Differentiable lower envelope: -tau*log(sum(exp(-x_i/tau))).

    Sandwiched in [min(xs) - tau*log(n), min(xs)].
    """
    xs = np.asarray(xs, dtype=np.float64)
    return -log_sum_exp(-xs, tau)


def softmin_weights(xs, tau: float) -> np.ndarray:
    """Gradient of soft_min w.r.t. its inputs: softmax(-x/tau). Sums to 1."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise DegenerateInput("softmin_weights of an empty vector")
    if tau <= 0:
        raise InvalidParameter(f"tau must be positive, got {tau}")
    t = -xs / tau
    t -= t.max()
    w = np.exp(t)
    return w / w.sum()


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, entry by entry.

    This is the test oracle for every analytic gradient in the package;
    it must stay independent of the code paths it checks.
    """
    if h <= 0:
        raise InvalidParameter(f"step h must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = f(x)
        flat[k] = orig - h
        fm = f(x)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalFailure(f"non-finite f value at perturbed entry {k}")
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(g: np.ndarray, g_hat: np.ndarray, floor: float = 1e-8) -> float:
    """Entrywise |g - g_hat| / max(floor, |g| + |g_hat|), reduced by max.

    The floor turns the measure into an absolute tolerance for entries whose
    magnitude falls below it: at threshold t, entries under the floor pass
    whenever |g - g_hat| <= t * floor. Gradient checks raise the floor because
    central differences of an O(1) function carry ~1e-9 rounding noise, so
    near-zero entries cannot be resolved relatively.
    """
    g = np.asarray(g, dtype=np.float64)
    g_hat = np.asarray(g_hat, dtype=np.float64)
    denom = np.maximum(floor, np.abs(g) + np.abs(g_hat))
    return float(np.max(np.abs(g - g_hat) / denom))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got ndim={a.ndim}")
    return np.ascontiguousarray(a.T)


def check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericalFailure(f"non-finite values in {what}")
