"""Finite-difference verification of every hand-written backward pass (float64)."""

from dataclasses import dataclass

import numpy as np

from .layers import Conv2D, Dense, Dropout, MaxPool2D, ReLU
from .model import ModelConfig, build_model
from .optim import softmax_cross_entropy

TOLERANCE = 1e-4


@dataclass
class GradResult:
    layer: str
    tensor: str
    rel_error: float
    worst_index: tuple

    @property
    def passed(self):
        return self.rel_error < TOLERANCE


def relative_error(analytic, numeric):
    """``|a - n| / (|a| + |n|)`` over the whole tensor (Euclidean norms)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_gradient(f, x):
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place).

    The step for each element is ``1e-3 * max(1, |x_i|)``.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = 1e-3 * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def _result(layer, tensor, analytic, numeric):
    diff = np.abs(np.asarray(analytic, dtype=np.float64) - numeric)
    worst = tuple(int(i) for i in np.unravel_index(int(diff.argmax()), diff.shape))
    return GradResult(layer, tensor, relative_error(analytic, numeric), worst)


def _check_layer(name, layer, x, rng):
    """Check input and parameter gradients of ``sum(layer(x) * R)`` for random R."""
    out = layer.forward(x, training=True)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, training=True) * proj))

    layer.forward(x, training=True)
    grad_x = layer.backward(proj)
    analytic = [grad_x] + [g.copy() for g in layer.grads]
    results = [_result(name, "input", analytic[0], numeric_gradient(loss, x))]
    labels = ("weights", "bias")
    for i, p in enumerate(layer.params):
        results.append(_result(name, labels[i], analytic[i + 1], numeric_gradient(loss, p)))
    return results


def check_conv2d(rng):
    layer = Conv2D(2, 3, rng=rng, dtype=np.float64, name="conv2d")
    layer.bias[...] = rng.standard_normal(3)
    return _check_layer("conv2d", layer, rng.standard_normal((2, 6, 6, 2)), rng)


def check_dense(rng):
    layer = Dense(7, 5, rng=rng, dtype=np.float64, name="dense")
    layer.bias[...] = rng.standard_normal(5)
    return _check_layer("dense", layer, rng.standard_normal((3, 7)), rng)


def check_relu(rng):
    x = rng.uniform(0.05, 1.0, size=(3, 4, 4, 2)) * rng.choice([-1.0, 1.0], size=(3, 4, 4, 2))
    return _check_layer("relu", ReLU(), x, rng)


def check_maxpool(rng):
    # distinct, well separated values so no perturbation flips a window's argmax
    values = rng.permutation(2 * 7 * 6 * 3).astype(np.float64) * 0.01
    return _check_layer("maxpool", MaxPool2D(), values.reshape(2, 7, 6, 3), rng)


def check_dropout(rng):
    layer = Dropout(0.5, rng=np.random.default_rng(0))
    x = rng.standard_normal((4, 10))
    layer.forward(x, training=True)
    mask, scale = layer._cache

    def fixed(inp, training=False, cache=True):
        layer._cache = (mask, scale)
        return np.where(mask, inp * scale, 0.0)

    layer.forward = fixed
    return _check_layer("dropout", layer, x, rng)


def check_softmax(rng):
    logits = rng.standard_normal((4, 26)) * 3
    labels = rng.integers(0, 26, size=4)

    def loss():
        return softmax_cross_entropy(logits, labels).loss

    analytic = softmax_cross_entropy(logits, labels).grad
    return [_result("softmax", "logits", analytic, numeric_gradient(loss, logits))]


def toy_config():
    return ModelConfig(name="toy", input_size=16, conv_filters=[2, 3], hidden_neurons=[5], dropout_rate=0.0)


def check_stack(rng):
    cfg = toy_config()
    model = build_model(cfg, seed=int(rng.integers(2**31)), dtype=np.float64)
    for layer in model.layers:
        for b in layer.params[1:]:
            b[...] = rng.uniform(-0.1, 0.1, size=b.shape)
    x = rng.uniform(0.0, 1.0, size=(2, 16, 16, 1))
    labels = rng.integers(0, 26, size=2)

    def loss():
        return softmax_cross_entropy(model.forward(x, training=True), labels).loss

    lv = softmax_cross_entropy(model.forward(x, training=True), labels)
    analytic = [g.copy() for g in model.backward(lv.grad)]
    names = [f"{layer.name}.{kind}" for layer in model.layers for kind in ("weights", "bias")[: len(layer.params)]]
    return [
        _result("stack", name, a, numeric_gradient(loss, p))
        for name, a, p in zip(names, analytic, model.params)
    ]


CHECKS = {
    "conv2d": check_conv2d,
    "dense": check_dense,
    "relu": check_relu,
    "maxpool": check_maxpool,
    "dropout": check_dropout,
    "softmax": check_softmax,
    "stack": check_stack,
}


def run(layers=None, seed=0):
    """Run the selected checks (all by default); returns a flat list of results."""
    names = list(CHECKS) if not layers else list(layers)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown layer {name!r}; choose from {', '.join(CHECKS)}")
        results += CHECKS[name](np.random.default_rng([seed, list(CHECKS).index(name)]))
    return results
