"""Minimal dense/convolutional network with manual reverse-mode gradients.

Everything runs in float64 on numpy.  A network is a list of layer specs;
parameters live outside the specs so the same architecture can be rebuilt
from a checkpoint.  Convolutions are lowered to GEMM via im2col; the
transposed convolution scatters its columns back with a short kernel loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidArgumentError, InvalidDataError

__all__ = [
    "Dense",
    "Conv1d",
    "ConvTranspose1d",
    "MaxPool1d",
    "Relu",
    "Sigmoid",
    "Flatten",
    "Reshape",
    "Dropout",
    "Network",
    "layer_from_dict",
]


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass(frozen=True)
class Dense:
    """Affine map on feature vectors: ``y = x W + b``."""

    n_in: int
    n_out: int
    bias: bool = True

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise InvalidArgumentError(f"dense sizes must be positive, got {self.n_in}x{self.n_out}")

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise InvalidArgumentError(f"dense expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def init_params(self, rng):
        params = {"W": _uniform_init(rng, (self.n_in, self.n_out), self.n_in)}
        if self.bias:
            params["b"] = _uniform_init(rng, (self.n_out,), self.n_in)
        return params

    def forward(self, x, params, train, rng):
        y = x @ params["W"]
        if self.bias:
            y = y + params["b"]
        return y, x

    def backward(self, dy, params, cache):
        x = cache
        grads = {"W": x.T @ dy}
        if self.bias:
            grads["b"] = dy.sum(axis=0)
        return dy @ params["W"].T, grads

    def to_dict(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "bias": self.bias}


@dataclass(frozen=True)
class Conv1d:
    """1-d convolution on (channels, length) maps, lowered to one GEMM."""

    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.kernel, self.stride) < 1 or self.padding < 0:
            raise InvalidArgumentError(f"bad conv spec {self}")

    def _l_out(self, l_in):
        span = l_in + 2 * self.padding - self.kernel
        if span < 0:
            raise InvalidArgumentError(f"kernel {self.kernel} exceeds padded length {l_in + 2 * self.padding}")
        return span // self.stride + 1

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.c_in:
            raise InvalidArgumentError(f"conv expects ({self.c_in}, L), got {in_shape}")
        return (self.c_out, self._l_out(in_shape[1]))

    def init_params(self, rng):
        fan_in = self.c_in * self.kernel
        return {
            "W": _uniform_init(rng, (self.c_out, self.c_in, self.kernel), fan_in),
            "b": _uniform_init(rng, (self.c_out,), fan_in),
        }

    def forward(self, x, params, train, rng):
        b, _, l_in = x.shape
        l_out = self._l_out(l_in)
        xp = np.pad(x, ((0, 0), (0, 0), (self.padding, self.padding))) if self.padding else x
        win = sliding_window_view(xp, self.kernel, axis=2)[:, :, :: self.stride, :]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * l_out, self.c_in * self.kernel)
        wmat = params["W"].reshape(self.c_out, -1)
        y = (cols @ wmat.T).reshape(b, l_out, self.c_out).transpose(0, 2, 1) + params["b"][None, :, None]
        return y, (cols, l_in)

    def backward(self, dy, params, cache):
        cols, l_in = cache
        b, _, l_out = dy.shape
        dmat = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(b * l_out, self.c_out)
        grads = {
            "W": (dmat.T @ cols).reshape(params["W"].shape),
            "b": dy.sum(axis=(0, 2)),
        }
        dcols = (dmat @ params["W"].reshape(self.c_out, -1)).reshape(b, l_out, self.c_in, self.kernel)
        dcols = dcols.transpose(0, 2, 1, 3)
        lp = l_in + 2 * self.padding
        dxp = np.zeros((b, self.c_in, lp))
        for k in range(self.kernel):
            dxp[:, :, k : k + self.stride * l_out : self.stride] += dcols[:, :, :, k]
        dx = dxp[:, :, self.padding : lp - self.padding] if self.padding else dxp
        return dx, grads

    def to_dict(self):
        return {"type": "conv1d", "c_in": self.c_in, "c_out": self.c_out,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}


@dataclass(frozen=True)
class ConvTranspose1d:
    """Transposed 1-d convolution (fractionally strided upsampling)."""

    c_in: int
    c_out: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.kernel, self.stride) < 1 or self.padding < 0:
            raise InvalidArgumentError(f"bad transposed-conv spec {self}")

    def _l_out(self, l_in):
        l_out = (l_in - 1) * self.stride + self.kernel - 2 * self.padding
        if l_out < 1:
            raise InvalidArgumentError(f"padding {self.padding} swallows the whole output")
        return l_out

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.c_in:
            raise InvalidArgumentError(f"transposed conv expects ({self.c_in}, L), got {in_shape}")
        return (self.c_out, self._l_out(in_shape[1]))

    def init_params(self, rng):
        fan_in = self.c_in * self.kernel
        return {
            "W": _uniform_init(rng, (self.c_in, self.c_out, self.kernel), fan_in),
            "b": _uniform_init(rng, (self.c_out,), fan_in),
        }

    def forward(self, x, params, train, rng):
        b, _, l_in = x.shape
        xmat = np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(b * l_in, self.c_in)
        cols = (xmat @ params["W"].reshape(self.c_in, -1)).reshape(b, l_in, self.c_out, self.kernel)
        cols = cols.transpose(0, 2, 1, 3)
        l_full = (l_in - 1) * self.stride + self.kernel
        yfull = np.zeros((b, self.c_out, l_full))
        for k in range(self.kernel):
            yfull[:, :, k : k + self.stride * l_in : self.stride] += cols[:, :, :, k]
        y = yfull[:, :, self.padding : l_full - self.padding] if self.padding else yfull
        return y + params["b"][None, :, None], (xmat, l_in)

    def backward(self, dy, params, cache):
        xmat, l_in = cache
        b = dy.shape[0]
        l_full = (l_in - 1) * self.stride + self.kernel
        if self.padding:
            dyfull = np.zeros((b, self.c_out, l_full))
            dyfull[:, :, self.padding : l_full - self.padding] = dy
        else:
            dyfull = dy
        win = sliding_window_view(dyfull, self.kernel, axis=2)[:, :, :: self.stride, :]
        wmat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * l_in, self.c_out * self.kernel)
        grads = {
            "W": (xmat.T @ wmat).reshape(params["W"].shape),
            "b": dy.sum(axis=(0, 2)),
        }
        dx = (wmat @ params["W"].reshape(self.c_in, -1).T).reshape(b, l_in, self.c_in).transpose(0, 2, 1)
        return dx, grads

    def to_dict(self):
        return {"type": "convtranspose1d", "c_in": self.c_in, "c_out": self.c_out,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}


@dataclass(frozen=True)
class MaxPool1d:
    """Non-overlapping max pooling; a trailing remainder is dropped."""

    width: int = 2

    def __post_init__(self):
        if self.width < 1:
            raise InvalidArgumentError(f"pool width must be positive, got {self.width}")

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] < self.width:
            raise InvalidArgumentError(f"cannot pool shape {in_shape} by {self.width}")
        return (in_shape[0], in_shape[1] // self.width)

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        b, c, l_in = x.shape
        l_out = l_in // self.width
        if self.width == 2:
            # Pairwise compare-and-select beats argmax by a wide margin and
            # keeps the tie rule (strict > picks the earlier element).
            first = x[:, :, : 2 * l_out : 2]
            second = x[:, :, 1 : 2 * l_out : 2]
            take_second = second > first
            return np.where(take_second, second, first), (take_second, l_in)
        blocks = x[:, :, : l_out * self.width].reshape(b, c, l_out, self.width)
        idx = blocks.argmax(axis=3)
        y = np.take_along_axis(blocks, idx[..., None], axis=3)[..., 0]
        return y, (idx, l_in)

    def backward(self, dy, params, cache):
        idx, l_in = cache
        b, c, l_out = dy.shape
        dx = np.zeros((b, c, l_in))
        if self.width == 2:
            take_second = idx
            dx[:, :, : 2 * l_out : 2] = np.where(take_second, 0.0, dy)
            dx[:, :, 1 : 2 * l_out : 2] = np.where(take_second, dy, 0.0)
            return dx, {}
        dblocks = np.zeros((b, c, l_out, self.width))
        np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=3)
        dx[:, :, : l_out * self.width] = dblocks.reshape(b, c, l_out * self.width)
        return dx, {}

    def to_dict(self):
        return {"type": "maxpool1d", "width": self.width}


@dataclass(frozen=True)
class Relu:
    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, params, cache):
        return dy * cache, {}

    def to_dict(self):
        return {"type": "relu"}


@dataclass(frozen=True)
class Sigmoid:
    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        # Split by sign for overflow-free evaluation.
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out, out

    def backward(self, dy, params, cache):
        s = cache
        return dy * s * (1.0 - s), {}

    def to_dict(self):
        return {"type": "sigmoid"}


@dataclass(frozen=True)
class Flatten:
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, params, cache):
        return dy.reshape(cache), {}

    def to_dict(self):
        return {"type": "flatten"}


@dataclass(frozen=True)
class Reshape:
    """Feature vector to (channels, length) map."""

    channels: int
    length: int

    def out_shape(self, in_shape):
        if in_shape != (self.channels * self.length,):
            raise InvalidArgumentError(f"reshape expects ({self.channels * self.length},), got {in_shape}")
        return (self.channels, self.length)

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        return x.reshape(x.shape[0], self.channels, self.length), None

    def backward(self, dy, params, cache):
        return dy.reshape(dy.shape[0], -1), {}

    def to_dict(self):
        return {"type": "reshape", "channels": self.channels, "length": self.length}


@dataclass(frozen=True)
class Dropout:
    """Inverted dropout; identity outside training."""

    rate: float

    def __post_init__(self):
        if not (0.0 <= self.rate < 1.0):
            raise InvalidArgumentError(f"dropout rate must lie in [0, 1), got {self.rate}")

    def out_shape(self, in_shape):
        return in_shape

    def init_params(self, rng):
        return {}

    def forward(self, x, params, train, rng):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise InvalidArgumentError("training through dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy, params, cache):
        if cache is None:
            return dy, {}
        return dy * cache, {}

    def to_dict(self):
        return {"type": "dropout", "rate": self.rate}


_LAYER_TYPES = {
    "dense": Dense,
    "conv1d": Conv1d,
    "convtranspose1d": ConvTranspose1d,
    "maxpool1d": MaxPool1d,
    "relu": Relu,
    "sigmoid": Sigmoid,
    "flatten": Flatten,
    "reshape": Reshape,
    "dropout": Dropout,
}


def layer_from_dict(entry: dict):
    """Rebuild a layer spec from its :meth:`to_dict` form."""
    kind = entry.get("type")
    if kind not in _LAYER_TYPES:
        raise InvalidDataError(f"unknown layer type {kind!r}")
    kwargs = {k: v for k, v in entry.items() if k != "type"}
    return _LAYER_TYPES[kind](**kwargs)


class Network:
    """A feed-forward stack of layers with explicit parameters.

    Shapes are inferred at construction, so mismatched layers fail fast.
    ``params`` may be supplied to rebuild a trained network; otherwise they
    are drawn from a generator seeded with ``seed`` (layer order fixes the
    draw order, making initialization reproducible).
    """

    def __init__(self, layers, input_shape, seed=None, params=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.shapes = [self.input_shape]
        for layer in self.layers:
            self.shapes.append(tuple(int(s) for s in layer.out_shape(self.shapes[-1])))
        self.output_shape = self.shapes[-1]
        if params is not None:
            self.params = params
            self._check_params()
        else:
            if not isinstance(seed, np.random.SeedSequence):
                seed = np.random.SeedSequence(seed)
            rng = np.random.Generator(np.random.PCG64(seed))
            self.params = [layer.init_params(rng) for layer in self.layers]

    def _check_params(self):
        if len(self.params) != len(self.layers):
            raise InvalidDataError(
                f"expected {len(self.layers)} parameter sets, got {len(self.params)}"
            )
        rng = np.random.Generator(np.random.PCG64(0))
        for layer, given in zip(self.layers, self.params):
            expected = layer.init_params(rng)
            if sorted(expected) != sorted(given):
                raise InvalidDataError(f"parameter names {sorted(given)} do not match {layer}")
            for name, ref in expected.items():
                if given[name].shape != ref.shape:
                    raise InvalidDataError(
                        f"{layer} parameter {name} has shape {given[name].shape}, expected {ref.shape}"
                    )

    def param_count(self) -> int:
        return sum(int(p.size) for group in self.params for p in group.values())

    def forward(self, x, train=False, rng=None):
        """Run the stack.  Returns ``(output, caches)`` for a later backward."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise InvalidArgumentError(
                f"input shape {x.shape[1:]} does not match network input {self.input_shape}"
            )
        caches = []
        for layer, params in zip(self.layers, self.params):
            x, cache = layer.forward(x, params, train, rng)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches):
        """Back-propagate ``dy`` (gradient w.r.t. the output).

        Returns ``(dx, grads)`` where ``grads`` mirrors ``self.params``.
        """
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(dy, self.params[i], caches[i])
            grads[i] = g
        return dy, grads

    def to_dict(self):
        return {"layers": [layer.to_dict() for layer in self.layers],
                "input_shape": list(self.input_shape)}
