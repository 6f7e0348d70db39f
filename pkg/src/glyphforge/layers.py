"""Layers with hand-written forward and backward passes.

Every layer works on a leading batch axis: images are ``[n, h, w, c]`` and
vectors ``[n, d]``. Matrix products that produce activations are issued as a
stack of per-sample GEMMs (``np.matmul`` on a 3-D operand) so a sample's output
does not depend on what else is in the batch.
"""

import numpy as np

from .errors import ConfigError, ShapeError, StateError

# Upper bound on the im2col scratch buffer; larger batches are processed in chunks.
IM2COL_BUDGET_BYTES = 64 * 2**20


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    # drawn directly in the target precision; float32 draws halve init time for large layers
    w = rng.random(size=shape, dtype=np.dtype(dtype).type)
    w *= 2 * limit
    w -= limit
    return w


def softmax(logits, axis=-1):
    z = np.asarray(logits)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


class Layer:
    """Base layer: no parameters, identity shape."""

    name = "layer"

    def __init__(self):
        self.params = []
        self.grads = []
        self._cache = None

    def output_shape(self, input_shape):
        return input_shape

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        return self._cache

    def clear_cache(self):
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Conv2D(Layer):
    """3x3 convolution, stride 1, valid padding."""

    def __init__(self, in_channels, out_channels, rng=None, dtype=np.float32, name="conv"):
        super().__init__()
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        shape = (3, 3, in_channels, out_channels)
        if rng is None:
            self.kernels = np.zeros(shape, dtype=dtype)
        else:
            self.kernels = he_uniform(rng, shape, 9 * in_channels, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.params = [self.kernels, self.bias]

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if c != self.in_channels:
            raise ConfigError(f"{self.name}: expects {self.in_channels} channels, got {c}")
        if h < 3 or w < 3:
            raise ConfigError(f"{self.name}: input {h}x{w} is smaller than the 3x3 kernel")
        return (h - 2, w - 2, self.out_channels)

    def _chunk(self, x):
        _, h, w, c = x.shape
        per_sample = (h - 2) * (w - 2) * 9 * c * x.itemsize
        return max(1, IM2COL_BUDGET_BYTES // per_sample)

    @staticmethod
    def _im2col(x):
        n, h, w, c = x.shape
        oh, ow = h - 2, w - 2
        cols = np.empty((n, oh, ow, 3, 3, c), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                cols[:, :, :, dy, dx, :] = x[:, dy : dy + oh, dx : dx + ow, :]
        return cols.reshape(n, oh * ow, 9 * c)

    def forward(self, x, training=False, cache=True):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"{self.name}: bad input shape {x.shape}")
        n, h, w, _ = x.shape
        if h < 3 or w < 3:
            raise ShapeError(f"{self.name}: input {h}x{w} is smaller than the 3x3 kernel")
        oh, ow = h - 2, w - 2
        w2 = self.kernels.reshape(-1, self.out_channels)
        out = np.empty((n, oh, ow, self.out_channels), dtype=np.result_type(x, w2))
        step = self._chunk(x)
        for s in range(0, n, step):
            cols = self._im2col(x[s : s + step])
            y = np.matmul(cols, w2) + self.bias
            out[s : s + step] = y.reshape(-1, oh, ow, self.out_channels)
        self._cache = x if cache else None
        return out

    def backward(self, grad_out):
        x = self._cached()
        n, h, w, c = x.shape
        oh, ow = h - 2, w - 2
        if grad_out.shape != (n, oh, ow, self.out_channels):
            raise ShapeError(f"{self.name}: grad shape {grad_out.shape} does not match output")
        w2 = self.kernels.reshape(-1, self.out_channels)
        grad_w = np.zeros_like(w2)
        grad_x = np.zeros_like(x)
        step = self._chunk(x)
        for s in range(0, n, step):
            xs = x[s : s + step]
            m = xs.shape[0]
            cols = self._im2col(xs)
            g = grad_out[s : s + step].reshape(m, oh * ow, self.out_channels)
            grad_w += cols.reshape(-1, 9 * c).T @ g.reshape(-1, self.out_channels)
            gcols = (g.reshape(-1, self.out_channels) @ w2.T).reshape(m, oh, ow, 3, 3, c)
            gx = grad_x[s : s + step]
            for dy in range(3):
                for dx in range(3):
                    gx[:, dy : dy + oh, dx : dx + ow, :] += gcols[:, :, :, dy, dx, :]
        grad_b = grad_out.sum(axis=(0, 1, 2))
        self.grads = [grad_w.reshape(self.kernels.shape), grad_b]
        return grad_x


class MaxPool2D(Layer):
    """2x2 max pooling with stride 2; an odd trailing row or column is dropped."""

    def __init__(self, name="pool"):
        super().__init__()
        self.name = name

    def output_shape(self, input_shape):
        h, w, c = input_shape
        if h < 2 or w < 2:
            raise ConfigError(f"{self.name}: input {h}x{w} is smaller than the 2x2 window")
        return (h // 2, w // 2, c)

    def forward(self, x, training=False, cache=True):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: bad input shape {x.shape}")
        n, h, w, c = x.shape
        if h < 2 or w < 2:
            raise ShapeError(f"{self.name}: input {h}x{w} is smaller than the 2x2 window")
        h2, w2 = h // 2, w // 2
        # window cells in row-major order: (0,0), (0,1), (1,0), (1,1)
        cells = [x[:, dy : 2 * h2 : 2, dx : 2 * w2 : 2, :] for dy in (0, 1) for dx in (0, 1)]
        out = np.maximum(np.maximum(cells[0], cells[1]), np.maximum(cells[2], cells[3]))
        if cache:
            # ties go to the first cell in scan order
            idx = np.full(out.shape, 3, dtype=np.uint8)
            for k in (2, 1, 0):
                idx[cells[k] == out] = k
            self._cache = (x.shape, idx)
        else:
            self._cache = None
        return out

    def backward(self, grad_out):
        shape, idx = self._cached()
        n, h, w, c = shape
        h2, w2 = h // 2, w // 2
        if grad_out.shape != (n, h2, w2, c):
            raise ShapeError(f"{self.name}: grad shape {grad_out.shape} does not match output")
        grad_x = np.zeros(shape, dtype=grad_out.dtype)
        zero = np.zeros((), dtype=grad_out.dtype)
        for k, (dy, dx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            grad_x[:, dy : 2 * h2 : 2, dx : 2 * w2 : 2, :] = np.where(idx == k, grad_out, zero)
        return grad_x


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__()
        self.name = name

    def forward(self, x, training=False, cache=True):
        mask = x > 0
        self._cache = mask if cache else None
        return np.where(mask, x, np.zeros((), dtype=x.dtype))

    def backward(self, grad_out):
        mask = self._cached()
        return np.where(mask, grad_out, np.zeros((), dtype=grad_out.dtype))


class Flatten(Layer):
    def __init__(self, name="flatten"):
        super().__init__()
        self.name = name

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False, cache=True):
        self._cache = x.shape if cache else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cached())


class Dense(Layer):
    """Fully connected layer, ``out = x @ W + b`` with ``W`` of shape ``[in, out]``."""

    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32, name="dense"):
        super().__init__()
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        if rng is None:
            self.weights = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            self.weights = he_uniform(rng, (in_dim, out_dim), in_dim, dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.params = [self.weights, self.bias]

    def output_shape(self, input_shape):
        if input_shape != (self.in_dim,):
            raise ConfigError(f"{self.name}: expects input ({self.in_dim},), got {input_shape}")
        return (self.out_dim,)

    def forward(self, x, training=False, cache=True):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"{self.name}: expects [n, {self.in_dim}], got {x.shape}")
        out = np.matmul(x[:, None, :], self.weights)[:, 0, :] + self.bias
        self._cache = x if cache else None
        return out

    def backward(self, grad_out):
        x = self._cached()
        if grad_out.shape != (x.shape[0], self.out_dim):
            raise ShapeError(f"{self.name}: grad shape {grad_out.shape} does not match output")
        self.grads = [x.T @ grad_out, grad_out.sum(axis=0)]
        return grad_out @ self.weights.T


class Dropout(Layer):
    """Inverted dropout; the identity outside training."""

    def __init__(self, rate, rng=None, name="dropout"):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.name = name
        self.rate = float(rate)
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False, cache=True):
        if not training or self.rate == 0.0:
            self._cache = (None, None) if cache else None
            return x
        mask = self.rng.random(x.shape) >= self.rate
        scale = x.dtype.type(1.0 / (1.0 - self.rate))
        self._cache = (mask, scale) if cache else None
        return np.where(mask, x * scale, np.zeros((), dtype=x.dtype))

    def backward(self, grad_out):
        mask, scale = self._cached()
        if mask is None:
            return grad_out
        return np.where(mask, grad_out * scale, np.zeros((), dtype=grad_out.dtype))


class LayerStack:
    """An ordered model; shapes are validated when the stack is assembled."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for layer in self.layers:
            shape = tuple(layer.output_shape(shape))
            self.shapes.append(shape)
        self.output_shape = shape

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in layer.grads]

    @property
    def dtype(self):
        params = self.params
        return params[0].dtype if params else np.dtype(np.float32)

    def shape_after(self, name):
        for layer, shape in zip(self.layers, self.shapes[1:]):
            if layer.name == name:
                return shape
        raise KeyError(name)

    def _check_input(self, x):
        x = np.asarray(x)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"model expects input {self.input_shape}, got {x.shape}")
        return x, single

    def forward(self, x, training=False, cache=True):
        """Logits for a batch ``[n, h, w, c]`` or a single image ``[h, w, c]``."""
        x, single = self._check_input(x)
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training=training, cache=cache)
        return x[0] if single else x

    def backward(self, grad):
        """Backpropagate ``dLoss/dlogits``; returns parameter gradients in declaration order."""
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return self.grads

    def logits(self, x, batch_size=64):
        """Eval-mode logits without touching layer caches."""
        x, single = self._check_input(x)
        chunks = [
            self.forward(x[s : s + batch_size], training=False, cache=False)
            for s in range(0, x.shape[0], batch_size)
        ]
        out = np.concatenate(chunks, axis=0)
        return out[0] if single else out

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()

    def set_dropout_rng(self, rng):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def summary(self):
        rows = [("input", self.input_shape)]
        rows += [(layer.name, shape) for layer, shape in zip(self.layers, self.shapes[1:])]
        return rows
