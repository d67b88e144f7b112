"""Shared numerics: activations, SmoothL1, dB conversion, PRNG, finite differences.

Dense matrices are plain 2-D ``float64`` numpy arrays (row-major).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SOFTPLUS_CUT = 20.0
DB_FLOOR_LINEAR = 1e-30


class ContractError(ValueError):
    """A precondition on shapes, sizes or call order was violated."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


# --------------------------------------------------------------------------
# Activations
# --------------------------------------------------------------------------


def softplus(x):
    """Overflow-safe ``ln(1 + e^x)`` for scalars or arrays."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.log1p(np.exp(np.clip(arr, -_SOFTPLUS_CUT, _SOFTPLUS_CUT)))
    out = np.where(arr > _SOFTPLUS_CUT, arr, out)
    out = np.where(arr < -_SOFTPLUS_CUT, np.exp(np.minimum(arr, 0.0)), out)
    return out if out.ndim else float(out)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def mish(x):
    """``x * tanh(softplus(x))``; accepts a scalar or an array."""
    arr = np.asarray(x, dtype=np.float64)
    out = arr * np.tanh(softplus(arr))
    return out if np.ndim(out) else float(out)


def mish_grad(x):
    """Closed-form derivative of :func:`mish`."""
    arr = np.asarray(x, dtype=np.float64)
    sp = np.asarray(softplus(arr))
    t = np.tanh(sp)
    out = t + arr * (1.0 - t * t) * _sigmoid(arr)
    return out if np.ndim(out) else float(out)


def mish_and_grad(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``mish(x)`` and ``mish'(x)`` from a single exponential.

    With ``e = exp(x)`` and ``n = e (e + 2)``: ``tanh(softplus(x)) = n / (n + 2)``,
    ``sech^2(softplus(x)) = 4 (n + 1) / (n + 2)^2`` and ``sigmoid(x) = e / (1 + e)``.
    Inputs are clipped at the softplus cut, where ``n / (n + 2)`` is already 1.
    """
    e = np.exp(np.minimum(x, _SOFTPLUS_CUT))
    n = e * (e + 2.0)
    inv = 1.0 / (n + 2.0)
    t = n * inv
    grad = t + x * (4.0 * (n + 1.0) * inv * inv) * (e / (1.0 + e))
    return x * t, grad


# --------------------------------------------------------------------------
# Losses
# --------------------------------------------------------------------------


def smooth_l1(pred, target, beta: float = 1.0) -> float:
    """Mean SmoothL1 (Huber with slope 1) between two equally-shaped arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ContractError("smooth_l1 needs at least one element")
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    ad = np.abs(pred - target)
    elem = np.where(ad < beta, 0.5 * ad * ad / beta, ad - 0.5 * beta)
    return float(elem.mean())


def smooth_l1_grad(pred: np.ndarray, target: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Gradient of :func:`smooth_l1` with respect to ``pred``."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return np.clip(d / beta, -1.0, 1.0) / d.size


def loss_db(loss: float) -> float:
    """Express a positive linear loss in decibels, ``10*log10(loss)``."""
    if not loss > 0:
        raise DomainError(f"loss_db needs a positive loss, got {loss}")
    return 10.0 * math.log10(loss)


def loss_db_floored(loss: float) -> float:
    """Like :func:`loss_db` but maps zero loss to -300 dB instead of failing."""
    return loss_db(max(loss, DB_FLOOR_LINEAR))


# --------------------------------------------------------------------------
# Linear algebra
# --------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError("matmul expects 2-D matrices")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def finite_diff_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if not h > 0:
        raise DomainError("step h must be positive")
    x = np.array(x, dtype=np.float64, copy=True).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


# --------------------------------------------------------------------------
# PRNG
# --------------------------------------------------------------------------


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold several integers into one 64-bit seed (order sensitive)."""
    h = 0x6A09E667F3BCC909
    for p in parts:
        h = _mix64(((h ^ (int(p) & MASK64)) + _GOLDEN) & MASK64)
    return h


class Rng:
    """splitmix64 generator.

    Output ``i`` (1-based) is ``mix(seed + i * GOLDEN)``; uniforms take the top
    53 bits, ``u = (z >> 11) * 2**-53``, so ``u`` lies in ``[0, 1)``.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        return _mix64(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randbelow(self, n: int) -> int:
        """Integer in ``[0, n)`` via ``floor(u * n)``."""
        if n <= 0:
            raise DomainError("randbelow needs n >= 1")
        return min(int(self.random() * n), n - 1)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` raw outputs, vectorized; advances the state by ``n``."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & MASK64
        return z

    def uniform_array(self, n: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return a + (b - a) * u

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``; swaps index i with j in [0, i]."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            order[i], order[j] = order[j], order[i]
        return np.asarray(order, dtype=np.int64)
