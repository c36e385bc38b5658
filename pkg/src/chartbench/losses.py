"""Training objectives for chart-representation distillation, with gradients.

Plain NumPy: the triplet hinge on Euclidean distances, mean token
cross-entropy over a linearized-table sequence, and their convex mix.
Each loss has a companion ``*_grad`` giving its analytic gradient.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

DEFAULT_MARGIN = 1.0
DEFAULT_LAMBDA = 0.1


class DimensionMismatch(ValueError):
    pass


class LambdaOutOfRange(ValueError):
    pass


def _vec(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"expected a vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector entries must be finite")
    return a


def _same_dim(*vs):
    if len({v.shape for v in vs}) != 1:
        raise DimensionMismatch(
            "dimension mismatch: " + ", ".join(str(v.shape[0]) for v in vs)
        )


def l2_distance(a, b) -> float:
    a, b = _vec(a), _vec(b)
    _same_dim(a, b)
    return float(np.linalg.norm(a - b))


def triplet_loss(z_a, z_p, z_n, m: float = DEFAULT_MARGIN) -> float:
    """``max(d(z_a, z_p) - d(z_a, z_n) + m, 0)``."""
    if m < 0:
        raise ValueError("margin must be non-negative")
    z_a, z_p, z_n = _vec(z_a), _vec(z_p), _vec(z_n)
    _same_dim(z_a, z_p, z_n)
    # adding the margin first keeps the loss exactly 0 once d_an >= d_ap + m
    return max((l2_distance(z_a, z_p) + m) - l2_distance(z_a, z_n), 0.0)


def triplet_loss_grad(z_a, z_p, z_n, m: float = DEFAULT_MARGIN):
    """Gradients ``(dL/dz_a, dL/dz_p, dL/dz_n)``.

    Zero when the hinge is inactive. Undefined where ``z_a`` coincides with
    ``z_p`` or ``z_n``; the zero subgradient is returned for that term.
    """
    z_a, z_p, z_n = _vec(z_a), _vec(z_p), _vec(z_n)
    _same_dim(z_a, z_p, z_n)
    zero = np.zeros_like(z_a)
    if triplet_loss(z_a, z_p, z_n, m) <= 0.0:
        return zero, zero.copy(), zero.copy()
    d_ap = np.linalg.norm(z_a - z_p)
    d_an = np.linalg.norm(z_a - z_n)
    u_ap = (z_a - z_p) / d_ap if d_ap > 0 else zero
    u_an = (z_a - z_n) / d_an if d_an > 0 else zero
    return u_ap - u_an, -u_ap, u_an


class LogitsSeq(NamedTuple):
    """Per-position class scores (n x C) and the gold class of each position."""

    logits: np.ndarray
    targets: np.ndarray


def _logits(seq: LogitsSeq):
    x = np.asarray(seq.logits, dtype=np.float64)
    t = np.asarray(seq.targets, dtype=np.intp)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("logits must be an n x C matrix with n >= 1")
    if t.shape != (x.shape[0],):
        raise ValueError("need one target per position")
    if np.any(t < 0) or np.any(t >= x.shape[1]):
        raise ValueError("target index out of range")
    return x, t


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def token_cross_entropy(seq: LogitsSeq) -> float:
    """Mean over the sequence of ``-log softmax(logits[i])[targets[i]]``."""
    x, t = _logits(seq)
    logp = _log_softmax(x)
    return float(-logp[np.arange(len(t)), t].mean())


def token_cross_entropy_grad(seq: LogitsSeq) -> np.ndarray:
    """Gradient with respect to the logits: ``(softmax - onehot) / n``."""
    x, t = _logits(seq)
    g = np.exp(_log_softmax(x))
    g[np.arange(len(t)), t] -= 1.0
    return g / len(t)


def combined_loss(l_triplet: float, l_table: float, lam: float = DEFAULT_LAMBDA) -> float:
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda must be in [0, 1], got {lam}")
    return lam * l_triplet + (1.0 - lam) * l_table
