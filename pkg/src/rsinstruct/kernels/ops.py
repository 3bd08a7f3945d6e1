"""Forward/backward pairs for the block primitives, float64 throughout.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Row-major convention: inputs are
``[tokens x features]`` and a linear layer ``W`` is ``[d_out x d_in]``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


class ShapeError(ValueError):
    pass


# -- linear with optional bias tuning --------------------------------------


def linear_forward(x: np.ndarray, W: np.ndarray, b: Optional[np.ndarray] = None,
                   alpha: Optional[np.ndarray] = None, beta: Optional[np.ndarray] = None):
    """``alpha * (x W^T + b + beta)``; absent terms are skipped, not zero-filled."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {W.shape}")
    d_out = W.shape[0]
    for name, v in (("bias", b), ("alpha", alpha), ("beta", beta)):
        if v is not None and v.shape != (d_out,):
            raise ShapeError(f"linear: {name} shape {v.shape} != ({d_out},)")
    z = x @ W.T
    if b is not None:
        z = z + b
    if beta is not None:
        z = z + beta
    y = z * alpha if alpha is not None else z
    return y, (x, W, z, b is not None, alpha, beta is not None)


def linear_backward(dy: np.ndarray, cache):
    x, W, z, has_b, alpha, has_beta = cache
    grads = {}
    if alpha is not None:
        grads["alpha"] = (dy * z).sum(axis=0)
        dz = dy * alpha
    else:
        dz = dy
    if has_b:
        grads["bias"] = dz.sum(axis=0)
    if has_beta:
        grads["beta"] = dz.sum(axis=0)
    grads["weight"] = dz.T @ x
    dx = dz @ W
    return dx, grads


def bias_tuned_linear(x: np.ndarray, W: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return linear_forward(x, W, None, alpha, beta)[0]


# -- RMSNorm ----------------------------------------------------------------


def rmsnorm_forward(x: np.ndarray, gamma: np.ndarray, eps: float = 1e-6):
    """``x / (sqrt(mean(x^2)) + eps) * gamma`` per row (eps outside the root)."""
    if x.shape[-1] != gamma.shape[-1]:
        raise ShapeError(f"rmsnorm: width {x.shape[-1]} != gamma {gamma.shape}")
    rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True))
    denom = rms + eps
    n = x / denom
    return n * gamma, (x, gamma, rms, denom, n)


def rmsnorm_backward(dy: np.ndarray, cache):
    x, gamma, rms, denom, n = cache
    width = x.shape[-1]
    dgamma = (dy * n).sum(axis=0)
    dn = dy * gamma
    # d rms / d x_j = x_j / (width * rms); zero rows have no defined direction
    safe_rms = np.where(rms > 0, rms, 1.0)
    coef = np.where(rms > 0, (dn * x).sum(axis=-1, keepdims=True) / (denom ** 2 * width * safe_rms), 0.0)
    dx = dn / denom - coef * x
    return dx, dgamma


def rmsnorm(x: np.ndarray, gamma: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    return rmsnorm_forward(x, gamma, eps)[0]


# -- softmax / attention ----------------------------------------------------


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(s, axis=axis, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=axis, keepdims=True)


def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray, causal: bool = True):
    """Single-head ``softmax(Q K^T / sqrt(d)) V`` with an optional causal mask."""
    if not (q.shape == k.shape and k.shape[0] == v.shape[0]):
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    n, d = q.shape
    scale = 1.0 / np.sqrt(d)
    s = (q @ k.T) * scale
    if causal:
        s = np.where(np.tril(np.ones((n, n), dtype=bool)), s, -np.inf)
    p = softmax(s, axis=-1)
    return p @ v, (q, k, v, p, scale)


def attention_backward(da: np.ndarray, cache):
    q, k, v, p, scale = cache
    dv = p.T @ da
    dp = da @ v.T
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dq = ds @ k * scale
    dk = ds.T @ q * scale
    return dq, dk, dv


# -- activation / loss ------------------------------------------------------


def silu_forward(u: np.ndarray):
    sig = 1.0 / (1.0 + np.exp(-u))
    return u * sig, (u, sig)


def silu_backward(dy: np.ndarray, cache):
    u, sig = cache
    return dy * sig * (1.0 + u * (1.0 - sig))


IGNORE_INDEX = -1


def cross_entropy_forward(logits: np.ndarray, targets: np.ndarray):
    """Mean of ``-log softmax(logits)[target]`` over rows whose target is not ``IGNORE_INDEX``.

    Targets are already aligned with rows; shifting for next-token prediction
    is the caller's job.
    """
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross entropy: logits {logits.shape}, targets {targets.shape}")
    vocab = logits.shape[1]
    mask = targets != IGNORE_INDEX
    if np.any((targets[mask] < 0) | (targets[mask] >= vocab)):
        raise ValueError(f"target index outside vocabulary of size {vocab}")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no supervised positions")
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    rows = np.nonzero(mask)[0]
    loss = -logp[rows, targets[rows]].sum() / count
    return loss, (logp, targets, rows, count)


def cross_entropy_backward(cache) -> np.ndarray:
    logp, targets, rows, count = cache
    grad = np.zeros_like(logp)
    grad[rows] = np.exp(logp[rows])
    grad[rows, targets[rows]] -= 1.0
    return grad / count


def next_token_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(cross_entropy_forward(logits, np.asarray(targets))[0])
