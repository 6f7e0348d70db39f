"""Softmax cross-entropy loss and the Adam optimizer."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ShapeError


@dataclass
class LossValue:
    loss: float
    grad: np.ndarray  # d(mean loss)/d(logits), same shape as the logits
    probs: np.ndarray


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch, fused with softmax.

    Uses the log-sum-exp form, so very large logits do not overflow. The
    gradient with respect to the logits is ``(softmax - onehot) / batch``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} do not line up")
    b, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    rows = np.arange(b)
    loss = float(-log_probs[rows, labels].astype(np.float64).mean())
    probs = exp / total
    grad = probs.copy()
    grad[rows, labels] -= 1
    grad /= b
    # -log p is exactly zero when p rounds to one; keep tiny negative noise out
    return LossValue(loss=max(loss, 0.0), grad=grad, probs=probs)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state):
    """Update ``params`` in place with one bias-corrected Adam step.

    Raises :class:`NumericError` without touching anything if a gradient
    contains NaN or infinity.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state have different lengths")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter tensor {i}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
