"""Small feed-forward networks with hand-written backprop and Adam.

All parameters of a network live in one flat float64 vector; per-layer
weight and bias arrays are views into it.  That keeps optimiser and
target-network updates to a few vector operations.

Forward, backward, Adam and Polyak steps run in the compiled ``_nn``
extension when it was built, else in the numpy module ``_nn_py``.  The
``LA3P_PURE_PYTHON`` environment variable forces the fallback.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from types import ModuleType

import numpy as np

from . import _nn_py

try:
    if os.environ.get("LA3P_PURE_PYTHON"):
        raise ImportError("compiled kernels disabled by LA3P_PURE_PYTHON")
    from . import _nn as _compiled
except ImportError:
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _nn_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

DEFAULT_BACKEND = "cython" if _compiled is not None else "python"

HEADS = ("linear", "tanh")


class StaleCache(RuntimeError):
    """Backward called with a cache produced before the parameters changed."""


@dataclass
class ForwardCache:
    inputs: np.ndarray  # C-contiguous (B, d_in) batch
    work: object  # backend workspace with every layer's activation
    output: np.ndarray
    version: int


class Mlp:
    """ReLU hidden layers with a linear or ``scale * tanh`` output head.

    Weights are stored as ``(d_in, d_out)`` so a batch ``x`` of shape
    ``(B, d_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, layer_dims, head: str = "linear", scale: float = 1.0,
                 rng: np.random.Generator | None = None, backend: str | None = None) -> None:
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"need at least input and output dims, got {layer_dims}")
        if head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.layer_dims = dims
        self.head = head
        self.backend = backend or DEFAULT_BACKEND
        self._k = BACKENDS[self.backend]
        self.scale = float(scale)
        self.params = np.zeros(self.num_params(dims))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            self.weights.append(self.params[pos:pos + d_in * d_out].reshape(d_in, d_out))
            pos += d_in * d_out
            self.biases.append(self.params[pos:pos + d_out])
            pos += d_out
        self.version = 0
        if rng is not None:
            self.init_uniform(rng)

    @staticmethod
    def num_params(dims) -> int:
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    def init_uniform(self, rng: np.random.Generator) -> None:
        """Weights and biases uniform in ``+-1/sqrt(fan_in)``."""
        for W, b in zip(self.weights, self.biases):
            bound = 1.0 / np.sqrt(W.shape[0])
            W[...] = rng.uniform(-bound, bound, W.shape)
            b[...] = rng.uniform(-bound, bound, b.shape)
        self.version += 1

    def copy(self) -> "Mlp":
        other = Mlp(self.layer_dims, self.head, self.scale, backend=self.backend)
        other.params[:] = self.params
        return other

    def set_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.shape}")
        self.params[:] = flat
        self.version += 1

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        h = np.ascontiguousarray(x, dtype=np.float64)
        if h.ndim == 1:
            h = h[None, :]
        if h.ndim != 2 or h.shape[1] != self.layer_dims[0]:
            raise ValueError(f"input dimension {h.shape[-1]} != {self.layer_dims[0]}")
        out, work = self._k.forward(self.params, self.layer_dims, h, self.head == "tanh", self.scale)
        return out, ForwardCache(h, work, out, self.version)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad, param_grads: bool = True,
                 input_grad: bool = True):
        """Reverse-mode pass.

        Returns ``(flat parameter gradient or None, input gradient or None)``.
        Gradients are summed over the batch.
        """
        if cache.version != self.version:
            raise StaleCache("parameters changed since this forward pass")
        g = np.ascontiguousarray(output_grad, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != cache.output.shape:
            raise ValueError(f"output gradient shape {g.shape} != {cache.output.shape}")
        return self._k.backward(self.params, self.layer_dims, cache.inputs, cache.work, g,
                                param_grads, self.head == "tanh", self.scale, input_grad)

    # -- serialisation ---------------------------------------------------

    def to_bytes(self) -> bytes:
        """``u32`` header length, JSON header, then little-endian float64 parameters."""
        header = json.dumps({
            "layer_dims": self.layer_dims, "head": self.head, "scale": self.scale,
            "shapes": [[list(W.shape), list(b.shape)] for W, b in zip(self.weights, self.biases)],
            "dtype": "<f8",
        }).encode("utf-8")
        return struct.pack("<I", len(header)) + header + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Mlp":
        (n,) = struct.unpack_from("<I", blob, 0)
        header = json.loads(blob[4:4 + n].decode("utf-8"))
        net = cls(header["layer_dims"], header["head"], header["scale"])
        data = np.frombuffer(blob, dtype="<f8", offset=4 + n)
        net.set_params(data)
        return net

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class AdamState:
    size: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)


def adam_step(net: Mlp, state: AdamState, grads) -> None:
    """One bias-corrected Adam step (descent) on ``net.params``, in place."""
    g = np.ascontiguousarray(grads, dtype=np.float64)
    if g.shape != net.params.shape or g.shape != state.m.shape:
        raise ValueError("gradient shape does not match the parameters")
    net._k.adam(net.params, state.m, state.v, g, state.lr, state.beta1, state.beta2,
                state.eps, state.step_count + 1)
    state.step_count += 1
    net.version += 1


def polyak_update(target: Mlp, source: Mlp, zeta: float) -> None:
    """``target <- zeta * source + (1 - zeta) * target``."""
    if target.params.shape != source.params.shape or target.layer_dims != source.layer_dims:
        raise ValueError("target and source networks differ in shape")
    if zeta == 1.0:
        target.params[:] = source.params
    elif zeta != 0.0:
        target._k.polyak(target.params, source.params, float(zeta))
    target.version += 1
