"""Independent reference implementations used to cross-check the fast paths.

Everything in this module is deliberately written the slow, obvious way
and never calls into the code it is used to verify: finite differences
instead of the reverse pass, a scalar triple loop instead of the matmul
kernel, a transcription of the optimizer update rule instead of the
vectorized step.  The verification suite and the test suite both lean on
these.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


def matmul_triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Scalar triple-loop product, accumulating at the operand float width."""
    m, inner = a.shape
    _, n = b.shape
    scalar = a.dtype.type
    out = np.zeros((m, n), dtype=a.dtype)
    for i in range(m):
        for j in range(n):
            acc = scalar(0.0)
            for k in range(inner):
                acc = scalar(acc + scalar(a[i, k] * b[k, j]))
            out[i, j] = acc
    return out


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one element at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = f(x)
        flat[i] = original - step
        lower = f(x)
        flat[i] = original
        gflat[i] = (upper - lower) / (2.0 * step)
    return grad


def finite_difference_jacobian(
    f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference Jacobian of a vector function, column by column."""
    x = np.array(x, dtype=np.float64)
    base = np.asarray(f(x), dtype=np.float64).reshape(-1)
    jac = np.zeros((base.size, x.size), dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = np.asarray(f(x), dtype=np.float64).reshape(-1)
        flat[i] = original - step
        lower = np.asarray(f(x), dtype=np.float64).reshape(-1)
        flat[i] = original
        jac[:, i] = (upper - lower) / (2.0 * step)
    return jac


def log_abs_det(jacobian: np.ndarray) -> float:
    """log |det J| via numpy's LU decomposition."""
    sign, value = np.linalg.slogdet(jacobian)
    if sign == 0:
        raise ValueError("singular Jacobian")
    return float(value)


def relative_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise |a - r| / max(|a|, |r|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float((np.abs(analytic - reference) / denom).max())


def adamw_scalar_reference(
    p: float, grads, lr: float, beta1: float, beta2: float, eps: float, weight_decay: float
) -> float:
    """Decoupled-weight-decay Adam on one scalar, one gradient per step."""
    m = 0.0
    v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p = p - lr * (m_hat / (math.sqrt(v_hat) + eps) + weight_decay * p)
    return p


def uniform_identity_bpd() -> float:
    """Expected bits/dim of an identity flow on dequantized uniform pixels.

    Dequantized uniform data is U(-0.5, 0.5) per dimension, so the unit
    Gaussian cross-entropy is E[x^2]/2 + ln(2*pi)/2 nats with E[x^2] = 1/12;
    adding the log2(256) rescale correction gives the bits/dim figure.
    """
    nats = 1.0 / 24.0 + 0.5 * math.log(2.0 * math.pi)
    return nats / math.log(2.0) + 8.0


def gaussian_identity_bpd() -> float:
    """Bits/dim of an identity flow on exact unit-Gaussian inputs (no rescale).

    This is the differential entropy of the standard normal: log2(2*pi*e)/2.
    """
    return 0.5 * math.log2(2.0 * math.pi * math.e)


def empirical_identity_bpd(x: np.ndarray) -> float:
    """Bits/dim an identity flow assigns to the given (already rescaled) values."""
    x = np.asarray(x, dtype=np.float64)
    nats = 0.5 * float((x * x).mean()) + 0.5 * math.log(2.0 * math.pi)
    return nats / math.log(2.0) + 8.0
