"""Small dense networks on flat parameter vectors, with manual backprop.

Everything is plain numpy so gradients can be audited against finite
differences. The actor squashes its output through tanh scaled by the action
limits, so emitted actions respect the per-step bounds by construction.
"""
from __future__ import annotations

import math

import numpy as np


class DimensionMismatch(ValueError):
    """Input size does not match the network."""


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - y * y
    if name == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


class MlpNet:
    """Fully connected net; parameters live in one flat vector.

    layer_sizes includes input and output, e.g. (13, 256, 256, 256, 6).
    output_scale, when given, multiplies the (squashed) output elementwise.
    """

    def __init__(
        self,
        layer_sizes,
        hidden_activation: str = "relu",
        output_activation: str = "linear",
        output_scale=None,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.dtype = np.dtype(dtype)
        self.output_scale = (
            None if output_scale is None
            else np.asarray(output_scale, dtype=self.dtype)
        )
        self._slices = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            self._slices.append((w, b, n_in, n_out))
        self.params = np.zeros(offset, dtype=self.dtype)
        # Reusable per-batch-size scratch: fresh large allocations are
        # expensive (page faults dominate), so hidden activations, gradient
        # flows, and the flat parameter gradient live in per-net buffers.
        self._scratch: dict[int, dict] = {}
        self._grad_buf = np.empty_like(self.params)
        if rng is not None:
            self.initialize(rng)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def initialize(self, rng: np.random.Generator) -> None:
        """Uniform fan-in init; a squashed output layer starts near zero."""
        last = len(self._slices) - 1
        for li, (w, b, n_in, n_out) in enumerate(self._slices):
            bound = 1.0 / np.sqrt(n_in)
            if li == last and self.output_activation == "tanh":
                bound = 3e-3
            self.params[w] = rng.uniform(-bound, bound, n_in * n_out)
            self.params[b] = rng.uniform(-bound, bound, n_out)

    def _weights(self, li: int):
        w, b, n_in, n_out = self._slices[li]
        return self.params[w].reshape(n_in, n_out), self.params[b]

    def _layer_activation(self, li: int) -> str:
        return (self.output_activation if li == len(self._slices) - 1
                else self.hidden_activation)

    def _buffers(self, batch: int) -> dict:
        buf = self._scratch.get(batch)
        if buf is None:
            buf = {
                "z": [np.empty((batch, n_out), dtype=self.dtype)
                      for _, _, _, n_out in self._slices],
                "y": [np.empty((batch, n_out), dtype=self.dtype)
                      for _, _, _, n_out in self._slices],
                "gin": np.empty((batch, self.input_dim), dtype=self.dtype),
                "gz": [np.empty((batch, n_out), dtype=self.dtype)
                       for _, _, _, n_out in self._slices],
            }
            self._scratch[batch] = buf
        return buf

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """x is (batch, input_dim) or (input_dim,); returns matching shape.

        The cache references per-net scratch buffers: a later forward of the
        same net and batch size invalidates it, so consume caches before the
        next forward (the training loop does).
        """
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"expected input dim {self.input_dim}, got {x.shape[1]}")
        buf = self._buffers(x.shape[0])
        cache = []
        h = x
        for li in range(len(self._slices)):
            W, b = self._weights(li)
            z = buf["z"][li]
            np.matmul(h, W, out=z)
            z += b
            name = self._layer_activation(li)
            if name == "relu":
                y = np.maximum(z, 0.0, out=buf["y"][li])
            elif name == "tanh":
                y = np.tanh(z, out=buf["y"][li])
            else:
                y = z
            cache.append((h, z, y))
            h = y
        out = h.copy() if self.output_scale is None else h * self.output_scale
        out = out[0] if squeeze else out
        if want_cache:
            return out, cache
        return out

    def backward(self, cache, grad_out: np.ndarray):
        """Gradient of a scalar loss through the cached forward pass.

        grad_out is dLoss/d(output), shaped like the batched output. Returns
        (grad over flat params, dLoss/d(input)); both live in per-net scratch
        and are valid until the next backward of this net.
        """
        g = np.asarray(grad_out, dtype=self.dtype)
        if g.ndim == 1:
            g = g[None, :]
        buf = self._buffers(g.shape[0])
        last = len(self._slices) - 1
        gz = buf["gz"][last]
        if self.output_scale is not None:
            np.multiply(g, self.output_scale, out=gz)
        else:
            gz[...] = g
        grad_params = self._grad_buf
        for li in reversed(range(len(self._slices))):
            h, z, y = cache[li]
            name = self._layer_activation(li)
            if name == "relu":
                gz *= z > 0.0
            elif name == "tanh":
                # z is free scratch at this point: reuse it for (1 - y^2)
                np.multiply(y, y, out=z)
                np.subtract(1.0, z, out=z)
                gz *= z
            w, b, n_in, n_out = self._slices[li]
            W = self.params[w].reshape(n_in, n_out)
            np.matmul(h.T, gz, out=grad_params[w].reshape(n_in, n_out))
            gz.sum(axis=0, out=grad_params[b])
            g_next = buf["gz"][li - 1] if li > 0 else buf["gin"]
            np.matmul(gz, W.T, out=g_next)
            gz = g_next
        return grad_params, gz

    def copy(self) -> "MlpNet":
        twin = MlpNet(
            self.layer_sizes,
            hidden_activation=self.hidden_activation,
            output_activation=self.output_activation,
            output_scale=None if self.output_scale is None else self.output_scale.copy(),
            dtype=self.dtype,
        )
        twin.params[:] = self.params
        return twin

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "output_scale": (None if self.output_scale is None
                             else self.output_scale.tolist()),
            "dtype": self.dtype.name,
        }

    @staticmethod
    def from_dict(meta: dict, params: np.ndarray) -> "MlpNet":
        net = MlpNet(
            meta["layer_sizes"],
            hidden_activation=meta["hidden_activation"],
            output_activation=meta["output_activation"],
            output_scale=meta["output_scale"],
            dtype=np.dtype(meta["dtype"]),
        )
        if params.size != net.n_params:
            raise DimensionMismatch(
                f"checkpoint has {params.size} parameters, net needs {net.n_params}")
        net.params[:] = params.astype(net.dtype)
        return net


class Adam:
    """Adam on a flat parameter vector (in-place, allocation-free updates)."""

    def __init__(self, n_params: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, dtype=np.float64):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n_params, dtype=dtype)
        self.v = np.zeros(n_params, dtype=dtype)
        self._tmp = np.empty(n_params, dtype=dtype)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        tmp = self._tmp
        np.multiply(grad, 1.0 - self.beta1, out=tmp)
        self.m *= self.beta1
        self.m += tmp
        np.multiply(grad, grad, out=tmp)
        tmp *= 1.0 - self.beta2
        self.v *= self.beta2
        self.v += tmp
        # bias correction folded into the step size and epsilon
        c2 = math.sqrt(1.0 - self.beta2 ** self.t)
        step_size = self.lr * c2 / (1.0 - self.beta1 ** self.t)
        np.sqrt(self.v, out=tmp)
        tmp += self.eps * c2
        np.divide(self.m, tmp, out=tmp)
        tmp *= step_size
        params -= tmp
