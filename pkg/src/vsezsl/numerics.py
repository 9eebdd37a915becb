"""Dense-array helpers used by every training module.

Everything here computes in float64. Files store float32 (see ``datamodel``).
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

# Work is split in fixed-size chunks so results do not depend on the thread count.
CHUNK = 64


def _require_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def gaussian_log_density(f, mean, variance):
    """Log density of an isotropic Gaussian N(f; mean, variance * I)."""
    f = np.asarray(f, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    _require_finite(f, mean, np.asarray(variance, dtype=np.float64))
    if f.shape != mean.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {mean.shape}")
    if not variance > 0:
        raise ValueError("variance must be positive")
    c = f.size
    diff = f - mean
    return float(-0.5 * c * (LOG_2PI + np.log(variance)) - diff @ diff / (2.0 * variance))


def log_sum_exp(v, axis=None):
    """Max-shifted ``log(sum(exp(v)))``.

    With ``axis=None`` the input must be a non-empty vector and a float is
    returned; otherwise the reduction runs along ``axis``. Slices that are
    entirely ``-inf`` reduce to ``-inf``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty input")
    if axis is None:
        v = v.ravel()
        m = v.max()
        if m == -np.inf:
            return -np.inf
        return float(m + np.log(np.sum(np.exp(v - m))))
    m = np.max(v, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    out = safe + np.log(np.sum(np.exp(v - safe), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    return z - np.expand_dims(log_sum_exp(z, axis=axis), axis)


def softmax(z, axis=-1):
    return np.exp(log_softmax(z, axis=axis))


@dataclass
class OptimizerState:
    """Adam moments for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param, **hyper):
        param = np.asarray(param)
        return cls(np.zeros(param.shape), np.zeros(param.shape), **hyper)


def adam_step(params, grads, state: OptimizerState):
    """One bias-corrected Adam update (minimisation).

    Returns ``(new_params, state)``; ``params`` is not modified, ``state`` is
    advanced in place.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    if not state.lr > 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), state


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, params: dict, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.states = {
            k: OptimizerState.like(v, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
            for k, v in params.items()
        }

    def step(self, grads: dict, sign=1.0):
        # sign=-1 turns the update into gradient ascent
        for k in self.params:
            if k not in grads:
                continue
            new, _ = adam_step(self.params[k], sign * grads[k], self.states[k])
            self.params[k][...] = new


def check_gradient(loss_fn, params, analytic_grad, h=1e-5):
    """Largest elementwise relative error between ``analytic_grad`` and a
    central-difference estimate of the gradient of ``loss_fn`` at ``params``.

    The denominator is ``max(|a|, |b|, 1e-8)``.
    """
    x = np.array(params, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError("analytic gradient shape does not match params")
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss_fn(x))
        flat[i] = orig - h
        down = float(loss_fn(x))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError(f"non-finite loss while perturbing index {i}")
        num_flat[i] = (up - down) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Counter-based generator for one named stream derived from ``seed``.

    Streams with different names are independent; the mapping is stable
    across processes and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Parallel:
    """Deterministic chunked map over the leading axis."""

    threads: int = 1
    chunk: int = CHUNK

    def chunks(self, n):
        return [slice(i, min(i + self.chunk, n)) for i in range(0, n, self.chunk)]

    def map(self, fn, n):
        """Call ``fn(slice)`` for each chunk of ``range(n)``; results in order."""
        slices = self.chunks(n)
        if self.threads <= 1 or len(slices) <= 1:
            return [fn(s) for s in slices]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, slices))
