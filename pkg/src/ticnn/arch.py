"""Forward passes for the ordinary network and its transformationally
identical variants, all driven by one shared :class:`NetworkSpec`.

Variants
--------
ordinary  plain conv -> activation -> pool chain, flatten, dense head
ti1       ordinary pass with every kernel and flatten weight symmetrized
ti21      M sub-channels with group-transformed kernels, node vectors averaged
ti212     sub-channel maps re-aligned and averaged before every activation
ti22      ordinary pass on the symmetrized input
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, symmetry
from .nn import ConvLayerSpec, DenseHead, DenseLayer
from .symmetry import GroupElement, TransformFamily
from .tensor import random_tensor


class VariantKind(str, enum.Enum):
    ORDINARY = "ordinary"
    TI1 = "ti1"
    TI21 = "ti21"
    TI212 = "ti212"
    TI22 = "ti22"

    def __str__(self) -> str:
        return self.value


TI_VARIANTS = (VariantKind.TI1, VariantKind.TI21, VariantKind.TI212, VariantKind.TI22)


@dataclass(frozen=True)
class NetworkSpec:
    family: TransformFamily
    layers: tuple[ConvLayerSpec, ...]
    flatten: np.ndarray  # (nodes, channels, m, m)
    head: DenseHead = field(default_factory=DenseHead)
    input_side: int = 0
    input_channels: int = 1

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", symmetry.get_family(self.family))
        if self.family.dim != 2:
            raise ValueError("networks operate on 2D grids; use a 2D family")
        object.__setattr__(self, "layers", tuple(self.layers))
        flat = np.asarray(self.flatten, dtype=np.float64)
        object.__setattr__(self, "flatten", flat)
        sides = nn.validate_chain(self.layers, self.input_side, self.input_channels)
        ch = self.layers[-1].out_channels if self.layers else self.input_channels
        expect = (ch, sides[-1], sides[-1])
        if flat.ndim != 4 or flat.shape[1:] != expect:
            raise nn.GeometryError(f"flatten weights {flat.shape} do not match terminal maps {expect}")
        if self.head.layers and self.head.layers[0].weight.shape[1] != flat.shape[0]:
            raise ValueError("dense head input does not match flatten node count")

    @property
    def nodes(self) -> int:
        return self.flatten.shape[0]

    def sides(self) -> list[int]:
        return nn.validate_chain(self.layers, self.input_side, self.input_channels)

    def with_family(self, family) -> "NetworkSpec":
        return replace(self, family=symmetry.get_family(family) if isinstance(family, str) else family)


@dataclass(frozen=True)
class ForwardOutput:
    node_values: np.ndarray
    output: np.ndarray


def _as_input(spec: NetworkSpec, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    expect = (spec.input_channels, spec.input_side, spec.input_side)
    if v.shape != expect:
        raise nn.GeometryError(f"input shape {v.shape} does not match network input {expect}")
    return v


def layer_forward(layer: ConvLayerSpec, x: np.ndarray) -> np.ndarray:
    z = nn.conv_valid(x, layer)
    return nn.pool(nn.activate(z, layer.activation), layer.pooling, layer.pool_size)


def run_chain(layers, x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer_forward(layer, x)
    return x


def _finish(spec: NetworkSpec, nodes: np.ndarray) -> ForwardOutput:
    return ForwardOutput(nodes, nn.dense_forward(nodes, spec.head))


def forward_ordinary(spec: NetworkSpec, v) -> ForwardOutput:
    maps = run_chain(spec.layers, _as_input(spec, v))
    return _finish(spec, nn.flatten_contract(maps, spec.flatten))


def transform_all_kernels(e: GroupElement, spec: NetworkSpec) -> NetworkSpec:
    """Apply ``e`` to every conv kernel and flatten-weight tensor."""
    layers = tuple(nn.transform_kernels(e, layer) for layer in spec.layers)
    return replace(spec, layers=layers, flatten=symmetry.apply(e, spec.flatten))


def symmetrize_kernels(spec: NetworkSpec) -> NetworkSpec:
    """Project every kernel and flatten-weight tensor onto the family-invariant subspace."""
    layers = tuple(replace(layer, kernels=symmetry.symmetrize(layer.kernels, spec.family)) for layer in spec.layers)
    return replace(spec, layers=layers, flatten=symmetry.symmetrize(spec.flatten, spec.family))


def forward_ti1(spec: NetworkSpec, v) -> ForwardOutput:
    return forward_ordinary(symmetrize_kernels(spec), v)


def subchannel_nodes(spec: NetworkSpec, v) -> list[np.ndarray]:
    """Per-sub-channel node vectors of the merge-at-flatten variant, in family order."""
    x = _as_input(spec, v)
    out = []
    for e in spec.family:
        sub = transform_all_kernels(e, spec)
        out.append(nn.flatten_contract(run_chain(sub.layers, x), sub.flatten))
    return out


def _mean(arrays) -> np.ndarray:
    acc = arrays[0].copy()
    for a in arrays[1:]:
        acc += a
    return acc / len(arrays)


def forward_ti21(spec: NetworkSpec, v) -> ForwardOutput:
    return _finish(spec, _mean(subchannel_nodes(spec, v)))


def ti212_layer(layer: ConvLayerSpec, family: TransformFamily, inputs: list[np.ndarray]) -> np.ndarray:
    """One split/merge step: convolve each sub-channel with its transformed
    kernels, align the pre-activation maps to the canonical frame, average,
    then activate and pool once. Returns the merged map."""
    aligned = []
    for e, x in zip(family, inputs):
        z = nn.conv_valid(x, nn.transform_kernels(e, layer))
        aligned.append(symmetry.apply(symmetry.inverse(e), z))
    a = nn.activate(_mean(aligned), layer.activation)
    return nn.pool(a, layer.pooling, layer.pool_size)


def forward_ti212(spec: NetworkSpec, v) -> ForwardOutput:
    x = _as_input(spec, v)
    inputs = [x] * spec.family.order
    merged = x
    for layer in spec.layers:
        merged = ti212_layer(layer, spec.family, inputs)
        inputs = [symmetry.apply(e, merged) for e in spec.family]
    return _finish(spec, nn.flatten_contract(merged, spec.flatten))


def forward_ti22(spec: NetworkSpec, v) -> ForwardOutput:
    return forward_ordinary(spec, symmetry.symmetrize(_as_input(spec, v), spec.family))


_FORWARD = {
    VariantKind.ORDINARY: forward_ordinary,
    VariantKind.TI1: forward_ti1,
    VariantKind.TI21: forward_ti21,
    VariantKind.TI212: forward_ti212,
    VariantKind.TI22: forward_ti22,
}


def forward(spec: NetworkSpec, v, variant: VariantKind | str = VariantKind.ORDINARY) -> ForwardOutput:
    return _FORWARD[VariantKind(variant)](spec, v)


def random_spec(
    side: int,
    layers: list[dict],
    *,
    seed: int,
    family: str = "dih4",
    in_channels: int = 1,
    nodes: int = 4,
    head_dims: tuple[int, ...] = (3,),
    head_activation: str = "identity",
    softmax: bool = False,
    bias: bool = True,
    fan_in_scale: bool = True,
) -> NetworkSpec:
    """Build a spec with uniform [-1, 1) parameters.

    ``layers`` holds dicts with keys ``out_channels``, ``kernel`` and optional
    ``stride``, ``activation``, ``pooling``, ``pool_size``. With
    ``fan_in_scale`` the conv kernels and flatten weights are multiplied by
    ``sqrt(3 / fan_in)`` so pre-activations keep roughly the input's variance.
    """
    def draw(shape, s):
        t = random_tensor(shape, s)
        if fan_in_scale:
            t *= np.sqrt(3.0 / np.prod(shape[1:]))
        return t

    ss = np.random.SeedSequence(seed)
    seeds = iter(int(s) for s in ss.generate_state(2 * len(layers) + 2 * len(head_dims) + 4, dtype=np.uint64))
    conv = []
    ch = in_channels
    n = side
    for cfg in layers:
        k = cfg["kernel"]
        out = cfg["out_channels"]
        layer = ConvLayerSpec(
            draw((out, ch, k, k), next(seeds)),
            stride=cfg.get("stride", 1),
            activation=cfg.get("activation", "identity"),
            pooling=cfg.get("pooling", "none"),
            pool_size=cfg.get("pool_size", 2),
        )
        layer.check_geometry(n, len(conv))
        n = layer.output_side(n)
        ch = out
        conv.append(layer)
    flatten = draw((nodes, ch, n, n), next(seeds))
    dense = []
    width = nodes
    for d in head_dims:
        w = random_tensor((d, width), next(seeds))
        b = random_tensor((d,), next(seeds)) if bias else np.zeros(d)
        dense.append(DenseLayer(w, b, head_activation))
        width = d
    return NetworkSpec(family, tuple(conv), flatten, DenseHead(tuple(dense), softmax), side, in_channels)
