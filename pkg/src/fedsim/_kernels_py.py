"""Pure numpy loss/gradient kernels (fallback for the compiled core).

Both backends implement the same math and contracts:

* cross-entropy with max-subtracted log-sum-exp stabilization,
* optional per-example weights applied as a self-normalized batch loss
  ``sum(l_i * w_i) / sum(w_i)``; ``sample_weight=None`` means all-ones
  weights, so a weighted call with ones is bit-identical to unweighted,
* L2 penalty ``0.5 * weight_decay * ||weights||^2`` on weight matrices only
  (biases excluded), folded into both loss and gradient.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"


def _softmax_terms(logits: np.ndarray, y: np.ndarray):
    shift = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shift)
    norm = exp.sum(axis=1, keepdims=True)
    per_example = np.log(norm[:, 0]) - shift[np.arange(len(y)), y]
    probs = exp / norm
    return per_example, probs


def _batch_coeffs(n: int, sample_weight):
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    return w, w.sum()


def linear_logits(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ W + b


def linear_loss_grad(W, b, X, y, sample_weight, weight_decay):
    n = X.shape[0]
    per_example, probs = _softmax_terms(linear_logits(W, b, X), y)
    w, wsum = _batch_coeffs(n, sample_weight)
    loss = float(per_example @ w / wsum) + 0.5 * weight_decay * float((W * W).sum())

    coeff = w / wsum
    dz = probs * coeff[:, None]
    dz[np.arange(n), y] -= coeff
    gW = X.T @ dz + weight_decay * W
    gb = dz.sum(axis=0)
    return loss, per_example, gW, gb


def mlp_logits(W1, b1, W2, b2, X) -> np.ndarray:
    hidden = np.maximum(X @ W1 + b1, 0.0)
    return hidden @ W2 + b2


def mlp_loss_grad(W1, b1, W2, b2, X, y, sample_weight, weight_decay):
    n = X.shape[0]
    pre = X @ W1 + b1
    hidden = np.maximum(pre, 0.0)
    per_example, probs = _softmax_terms(hidden @ W2 + b2, y)
    w, wsum = _batch_coeffs(n, sample_weight)
    penalty = 0.5 * weight_decay * float((W1 * W1).sum() + (W2 * W2).sum())
    loss = float(per_example @ w / wsum) + penalty

    coeff = w / wsum
    dz = probs * coeff[:, None]
    dz[np.arange(n), y] -= coeff
    gW2 = hidden.T @ dz + weight_decay * W2
    gb2 = dz.sum(axis=0)
    dh = dz @ W2.T
    dh[pre <= 0.0] = 0.0  # ReLU subgradient at the kink fixed to 0
    gW1 = X.T @ dh + weight_decay * W1
    gb1 = dh.sum(axis=0)
    return loss, per_example, gW1, gb1, gW2, gb2
