"""Layer primitives: valid strided convolution, activations, tiled pooling,
flatten contraction and a dense head.

Feature maps are ``(channels, n, n)`` arrays. "Convolution" is
cross-correlation without kernel flip, computed only where the kernel fits.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import symmetry
from .symmetry import GroupElement
from .tensor import max_abs_diff

ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")
POOLINGS = ("none", "max", "avg")


class GeometryError(ValueError):
    """A layer chain whose sides are not evenly divisible by stride or pool."""


@dataclass(frozen=True)
class ConvLayerSpec:
    kernels: np.ndarray  # (out_channel, in_channel, k, k)
    stride: int = 1
    activation: str = "identity"
    pooling: str = "none"
    pool_size: int = 2

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim != 4 or k.shape[2] != k.shape[3]:
            raise ValueError(f"kernels must be (out, in, k, k), got {k.shape}")
        object.__setattr__(self, "kernels", k)
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"unknown pooling {self.pooling!r}")
        if self.pooling != "none" and self.pool_size < 2:
            raise ValueError(f"pool window must be >= 2, got {self.pool_size}")

    @property
    def k(self) -> int:
        return self.kernels.shape[2]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    def conv_side(self, n: int) -> int:
        return (n - self.k) // self.stride + 1

    def output_side(self, n: int) -> int:
        m = self.conv_side(n)
        return m // self.pool_size if self.pooling != "none" else m

    def check_geometry(self, n: int, index: int | None = None) -> None:
        where = f"layer {index}: " if index is not None else ""
        if n < self.k:
            raise GeometryError(f"{where}input side {n} smaller than kernel {self.k}")
        if (n - self.k) % self.stride:
            raise GeometryError(
                f"{where}stride divisibility violated: (n - k) mod s = ({n} - {self.k}) mod {self.stride} != 0")
        if self.pooling != "none":
            m = self.conv_side(n)
            if m % self.pool_size:
                raise GeometryError(
                    f"{where}pooling divisibility violated: conv side {m} not divisible by window {self.pool_size}")


def validate_chain(layers, n: int, channels: int) -> list[int]:
    """Check a layer chain on an ``n``-sided, ``channels``-deep input.

    Returns the side of the input to each layer followed by the terminal side.
    """
    sides = [n]
    for i, layer in enumerate(layers):
        if layer.in_channels != channels:
            raise GeometryError(f"layer {i}: expects {layer.in_channels} input channels, got {channels}")
        layer.check_geometry(n, i)
        n = layer.output_side(n)
        channels = layer.out_channels
        sides.append(n)
    return sides


def transform_kernels(e: GroupElement, layer: ConvLayerSpec) -> ConvLayerSpec:
    return replace(layer, kernels=symmetry.apply(e, layer.kernels))


def _taps(x: np.ndarray, k: int, s: int, m: int):
    """Yield ``(u, v, x[:, u::s, v::s])`` cropped to ``m x m`` for each kernel offset."""
    span = s * (m - 1) + 1
    for u in range(k):
        for v in range(k):
            yield u, v, x[:, u:u + span:s, v:v + span:s]


def conv_valid(x: np.ndarray, layer: ConvLayerSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[0] != layer.in_channels:
        raise GeometryError(f"expected {layer.in_channels} input channels, got {x.shape[0]}")
    if x.shape[1] != x.shape[2]:
        raise GeometryError(f"input must be square, got {x.shape[1:]}")
    if x.shape[1] < layer.k or (x.shape[1] - layer.k) % layer.stride:
        layer.check_geometry(x.shape[1])
    m = layer.conv_side(x.shape[1])
    out = np.zeros((layer.out_channels, m, m))
    # offsets accumulate in fixed (u, v) order; memory stays O(output)
    for u, v, tap in _taps(x, layer.k, layer.stride, m):
        out += np.tensordot(layer.kernels[:, :, u, v], tap, axes=(1, 0))
    return out


def conv_backward(x: np.ndarray, layer: ConvLayerSpec, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a ``conv_valid`` output w.r.t. its input and kernels."""
    k, s = layer.k, layer.stride
    m = grad_out.shape[1]
    g_kernels = np.empty_like(layer.kernels)
    g_x = np.zeros_like(x)
    span = s * (m - 1) + 1
    for u, v, tap in _taps(x, k, s, m):
        g_kernels[:, :, u, v] = np.tensordot(grad_out, tap, axes=([1, 2], [1, 2]))
        g_x[:, u:u + span:s, v:v + span:s] += np.tensordot(layer.kernels[:, :, u, v], grad_out, axes=(0, 0))
    return g_x, g_kernels


def commute_check(e: GroupElement, v, layer: ConvLayerSpec) -> float:
    """Max deviation between convolving transformed data with transformed
    kernels and transforming the plain convolution."""
    lhs = conv_valid(symmetry.apply(e, v), transform_kernels(e, layer))
    rhs = symmetry.apply(e, conv_valid(v, layer))
    return max_abs_diff(lhs, rhs)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def activate(v, kind: str) -> np.ndarray:
    if kind == "identity":
        return v
    v = np.asarray(v, dtype=np.float64)
    if kind == "relu":
        return np.maximum(v, 0.0)
    if kind == "sigmoid":
        return _sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    raise ValueError(f"unknown activation {kind!r}")


def activate_backward(z: np.ndarray, a: np.ndarray, kind: str, grad: np.ndarray) -> np.ndarray:
    """Chain ``grad`` (w.r.t. ``a = activate(z)``) back to ``z``. ReLU'(0) = 0."""
    if kind == "identity":
        return grad
    if kind == "relu":
        return grad * (z > 0)
    if kind == "sigmoid":
        return grad * a * (1.0 - a)
    if kind == "tanh":
        return grad * (1.0 - a * a)
    raise ValueError(f"unknown activation {kind!r}")


def _tiles(v: np.ndarray, p: int) -> np.ndarray:
    c, n, n2 = v.shape
    if n % p or n2 % p:
        raise GeometryError(f"pooling divisibility violated: side {n} not divisible by window {p}")
    return v.reshape(c, n // p, p, n2 // p, p)


def pool(v, kind: str, p: int = 2) -> np.ndarray:
    """Non-overlapping ``p x p`` pooling anchored at index 0."""
    if kind == "none":
        return v
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 2
    t = _tiles(v[None] if squeeze else v, p)
    if kind == "max":
        out = t.max(axis=(2, 4))
    elif kind == "avg":
        out = t.mean(axis=(2, 4))
    else:
        raise ValueError(f"unknown pooling {kind!r}")
    return out[0] if squeeze else out


def pool_backward(a: np.ndarray, kind: str, p: int, grad: np.ndarray) -> np.ndarray:
    if kind == "none":
        return grad
    c, n, _ = a.shape
    up = np.repeat(np.repeat(grad, p, axis=1), p, axis=2)
    if kind == "avg":
        return up / (p * p)
    # route each window's gradient to its first maximal entry
    t = _tiles(a, p).transpose(0, 1, 3, 2, 4).reshape(c, n // p, n // p, p * p)
    idx = t.argmax(axis=-1)
    mask = np.zeros_like(t)
    np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
    mask = mask.reshape(c, n // p, n // p, p, p).transpose(0, 1, 3, 2, 4).reshape(c, n, n)
    return up * mask


def flatten_contract(maps, w) -> np.ndarray:
    """``node_f = sum_{ch,x,y} maps[ch,x,y] * w[f,ch,x,y]``."""
    maps = np.asarray(maps, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[1:] != maps.shape:
        raise ValueError(f"flatten weights {w.shape} do not match maps {maps.shape}")
    return np.tensordot(w, maps, axes=maps.ndim)


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"dense weight {w.shape} / bias {b.shape} mismatch")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class DenseHead:
    layers: tuple[DenseLayer, ...] = field(default_factory=tuple)
    softmax: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError(f"dense layers {i} and {i + 1} do not chain")

    def output_dim(self, n_in: int) -> int:
        return self.layers[-1].weight.shape[0] if self.layers else n_in


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def dense_forward(x, head: DenseHead) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    for i, layer in enumerate(head.layers):
        if layer.weight.shape[1] != x.shape[0]:
            raise ValueError(f"dense layer {i} expects {layer.weight.shape[1]} inputs, got {x.shape[0]}")
        x = activate(layer.weight @ x + layer.bias, layer.activation)
    return softmax(x) if head.softmax else x


def dense_backward(x, head: DenseHead, grad_out) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Gradient w.r.t. the head input and each layer's (weight, bias)."""
    acts = [np.asarray(x, dtype=np.float64)]
    pres = []
    for layer in head.layers:
        z = layer.weight @ acts[-1] + layer.bias
        pres.append(z)
        acts.append(activate(z, layer.activation))
    g = np.asarray(grad_out, dtype=np.float64)
    if head.softmax:
        p = softmax(acts[-1])
        g = p * (g - g @ p)
    grads = []
    for layer, z, a_in, a_out in zip(reversed(head.layers), reversed(pres), reversed(acts[:-1]), reversed(acts[1:])):
        gz = activate_backward(z, a_out, layer.activation, g)
        grads.append((np.outer(gz, a_in), gz))
        g = layer.weight.T @ gz
    return g, grads[::-1]
