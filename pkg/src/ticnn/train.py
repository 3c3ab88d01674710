"""Reverse-mode gradients, full-batch gradient descent and finite-difference
checks for every network variant.

The merge-at-flatten variant shares one kernel set across M sub-channels;
its kernel gradient is the average of the sub-channel gradients after each
is pulled back to the canonical frame. The symmetric-kernel variant projects
gradients with the same group average used to build its kernels, which is
the exact adjoint of that projection.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, symmetry
from .arch import (
    NetworkSpec,
    VariantKind,
    _as_input,
    forward,
    symmetrize_kernels,
    transform_all_kernels,
)
from .nn import DenseLayer
from .tensor import DEFAULT_TOL, Tolerance, scaled_close


class TrainingError(RuntimeError):
    pass


@dataclass
class GradientBundle:
    conv: list[np.ndarray]
    flatten: np.ndarray
    dense: list[tuple[np.ndarray, np.ndarray]]
    loss: float

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"conv{i}", g) for i, g in enumerate(self.conv)]
        out.append(("flatten", self.flatten))
        for i, (w, b) in enumerate(self.dense):
            out += [(f"dense{i}.weight", w), (f"dense{i}.bias", b)]
        return out


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    steps: int = 50
    loss: str = "mse"
    seed: int = 0
    check_identity: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.loss not in ("mse", "xent"):
            raise ValueError(f"unknown loss {self.loss!r}")


def loss_and_grad(y: np.ndarray, target: np.ndarray, kind: str = "mse", softmax_head: bool = False):
    """Loss value and its gradient w.r.t. the network output ``y``.

    ``mse`` is the mean of squared errors. ``xent`` expects a softmax head,
    so ``y`` holds probabilities.
    """
    target = np.asarray(target, dtype=np.float64)
    if y.shape != target.shape:
        raise ValueError(f"target shape {target.shape} does not match output {y.shape}")
    if kind == "mse":
        r = y - target
        return float(r @ r) / r.size, 2.0 * r / r.size
    if kind == "xent":
        if not softmax_head:
            raise ValueError("cross-entropy loss needs a softmax head")
        return float(-(target @ np.log(y))), -target / y
    raise ValueError(f"unknown loss {kind!r}")


# -- ordinary chain with caches ---------------------------------------------

def _chain_forward(layers, x):
    caches = []
    for layer in layers:
        z = nn.conv_valid(x, layer)
        a = nn.activate(z, layer.activation)
        caches.append((x, z, a))
        x = nn.pool(a, layer.pooling, layer.pool_size)
    return x, caches


def _chain_backward(layers, caches, g_maps):
    grads = [None] * len(layers)
    g = g_maps
    for i in reversed(range(len(layers))):
        layer = layers[i]
        x, z, a = caches[i]
        g = nn.pool_backward(a, layer.pooling, layer.pool_size, g)
        g = nn.activate_backward(z, a, layer.activation, g)
        g, grads[i] = nn.conv_backward(x, layer, g)
    return g, grads


def _head(spec, nodes, target, loss):
    y = nn.dense_forward(nodes, spec.head)
    value, gy = loss_and_grad(y, target, loss, spec.head.softmax)
    g_nodes, dense = nn.dense_backward(nodes, spec.head, gy)
    return value, g_nodes, dense


def _ordinary(spec: NetworkSpec, x: np.ndarray, target, loss) -> GradientBundle:
    maps, caches = _chain_forward(spec.layers, x)
    nodes = nn.flatten_contract(maps, spec.flatten)
    value, g_nodes, dense = _head(spec, nodes, target, loss)
    g_flat = g_nodes[:, None, None, None] * maps[None]
    g_maps = np.tensordot(g_nodes, spec.flatten, axes=(0, 0))
    _, conv = _chain_backward(spec.layers, caches, g_maps)
    return GradientBundle(conv, g_flat, dense, value)


def _subchannel_pass(spec, x):
    subs, nodes = [], []
    for e in spec.family:
        sub = transform_all_kernels(e, spec)
        maps, caches = _chain_forward(sub.layers, x)
        subs.append((e, sub, maps, caches))
        nodes.append(nn.flatten_contract(maps, sub.flatten))
    mean = nodes[0].copy()
    for n in nodes[1:]:
        mean += n
    return subs, mean / len(nodes)


def subchannel_gradients(spec: NetworkSpec, v, target, loss: str = "mse"):
    """Kernel/flatten gradients of each merge-at-flatten sub-channel w.r.t.
    its own transformed parameters, with the merged node gradient as the
    upstream signal. Returned in family order as ``(element, conv, flatten)``."""
    x = _as_input(spec, v)
    subs, mean = _subchannel_pass(spec, x)
    _, g_nodes, _ = _head(spec, mean, target, loss)
    out = []
    for e, sub, maps, caches in subs:
        g_flat = g_nodes[:, None, None, None] * maps[None]
        g_maps = np.tensordot(g_nodes, sub.flatten, axes=(0, 0))
        _, conv = _chain_backward(sub.layers, caches, g_maps)
        out.append((e, conv, g_flat))
    return out


def _ti21(spec: NetworkSpec, x, target, loss) -> GradientBundle:
    subs, mean = _subchannel_pass(spec, x)
    value, g_nodes, dense = _head(spec, mean, target, loss)
    M = spec.family.order
    conv = [np.zeros_like(layer.kernels) for layer in spec.layers]
    g_flat = np.zeros_like(spec.flatten)
    for e, sub, maps, caches in subs:
        inv = symmetry.inverse(e)
        g_maps = np.tensordot(g_nodes, sub.flatten, axes=(0, 0))
        _, sub_conv = _chain_backward(sub.layers, caches, g_maps)
        for acc, g in zip(conv, sub_conv):
            acc += symmetry.apply(inv, g)
        g_flat += symmetry.apply(inv, g_nodes[:, None, None, None] * maps[None])
    return GradientBundle([g / M for g in conv], g_flat / M, dense, value)


def _ti212(spec: NetworkSpec, x, target, loss) -> GradientBundle:
    family = spec.family
    M = family.order
    inverses = [symmetry.inverse(e) for e in family]
    inputs = [x] * M
    caches = []
    merged = x
    for layer in spec.layers:
        sub_layers = [nn.transform_kernels(e, layer) for e in family]
        aligned = [symmetry.apply(inv, nn.conv_valid(xi, sl)) for inv, xi, sl in zip(inverses, inputs, sub_layers)]
        zbar = aligned[0].copy()
        for z in aligned[1:]:
            zbar += z
        zbar /= M
        a = nn.activate(zbar, layer.activation)
        caches.append((inputs, sub_layers, zbar, a))
        merged = nn.pool(a, layer.pooling, layer.pool_size)
        inputs = [symmetry.apply(e, merged) for e in family]
    nodes = nn.flatten_contract(merged, spec.flatten)
    value, g_nodes, dense = _head(spec, nodes, target, loss)
    g_flat = g_nodes[:, None, None, None] * merged[None]
    g = np.tensordot(g_nodes, spec.flatten, axes=(0, 0))
    conv = [None] * len(spec.layers)
    for h in reversed(range(len(spec.layers))):
        layer = spec.layers[h]
        inputs, sub_layers, zbar, a = caches[h]
        g = nn.pool_backward(a, layer.pooling, layer.pool_size, g)
        g_zbar = nn.activate_backward(zbar, a, layer.activation, g) / M
        g_k = np.zeros_like(layer.kernels)
        g_prev = np.zeros_like(inputs[0])
        for e, inv, xi, sl in zip(family, inverses, inputs, sub_layers):
            gx, gk = nn.conv_backward(xi, sl, symmetry.apply(e, g_zbar))
            g_k += symmetry.apply(inv, gk)
            g_prev += symmetry.apply(inv, gx) if h > 0 else gx
        conv[h] = g_k
        g = g_prev
    return GradientBundle(conv, g_flat, dense, value)


def backprop(spec: NetworkSpec, variant, v, target, loss: str = "mse") -> GradientBundle:
    """Exact gradients of ``loss(forward(spec, v, variant).output, target)``."""
    variant = VariantKind(variant)
    x = _as_input(spec, v)
    if variant is VariantKind.ORDINARY:
        return _ordinary(spec, x, target, loss)
    if variant is VariantKind.TI22:
        return _ordinary(spec, symmetry.symmetrize(x, spec.family), target, loss)
    if variant is VariantKind.TI1:
        b = _ordinary(symmetrize_kernels(spec), x, target, loss)
        fam = spec.family
        return GradientBundle([symmetry.symmetrize(g, fam) for g in b.conv],
                              symmetry.symmetrize(b.flatten, fam), b.dense, b.loss)
    if variant is VariantKind.TI21:
        return _ti21(spec, x, target, loss)
    return _ti212(spec, x, target, loss)


def evaluate_loss(spec: NetworkSpec, variant, v, target, loss: str = "mse") -> float:
    y = forward(spec, v, variant).output
    return loss_and_grad(y, target, loss, spec.head.softmax)[0]


# -- parameter plumbing -------------------------------------------------------

def parameters(spec: NetworkSpec) -> list[tuple[str, np.ndarray]]:
    out = [(f"conv{i}", layer.kernels) for i, layer in enumerate(spec.layers)]
    out.append(("flatten", spec.flatten))
    for i, layer in enumerate(spec.head.layers):
        out += [(f"dense{i}.weight", layer.weight), (f"dense{i}.bias", layer.bias)]
    return out


def apply_update(spec: NetworkSpec, grads: GradientBundle, lr: float) -> NetworkSpec:
    layers = tuple(replace(layer, kernels=layer.kernels - lr * g) for layer, g in zip(spec.layers, grads.conv))
    dense = tuple(DenseLayer(layer.weight - lr * gw, layer.bias - lr * gb, layer.activation)
                  for layer, (gw, gb) in zip(spec.head.layers, grads.dense))
    return replace(spec, layers=layers, flatten=spec.flatten - lr * grads.flatten,
                   head=replace(spec.head, layers=dense))


def _mean_bundle(bundles: list[GradientBundle]) -> GradientBundle:
    n = len(bundles)
    conv = [sum(b.conv[i] for b in bundles) / n for i in range(len(bundles[0].conv))]
    flat = sum(b.flatten for b in bundles) / n
    dense = [(sum(b.dense[i][0] for b in bundles) / n, sum(b.dense[i][1] for b in bundles) / n)
             for i in range(len(bundles[0].dense))]
    return GradientBundle(conv, flat, dense, sum(b.loss for b in bundles) / n)


class IdentityViolation(AssertionError):
    pass


def check_identity(spec: NetworkSpec, variant, v, tol: Tolerance = DEFAULT_TOL) -> float:
    """Worst scaled-tolerance failure ratio over the family; raises on violation."""
    ref = forward(spec, v, variant).output
    worst = 0.0
    for e in spec.family:
        ok, diff, thr = scaled_close(ref, forward(spec, symmetry.apply(e, v), variant).output, tol)
        if not ok:
            raise IdentityViolation(f"{variant}: transform {e} changed output by {diff:.3e} > {thr:.3e}")
        worst = max(worst, diff)
    return worst


@dataclass
class TrainResult:
    spec: NetworkSpec
    losses: list[float] = field(default_factory=list)


def sgd_train(spec: NetworkSpec, variant, dataset, cfg: TrainConfig) -> TrainResult:
    """Full-batch gradient descent; ``losses[i]`` is the loss before step ``i``
    and the final entry is the loss after the last step."""
    variant = VariantKind(variant)
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if variant is VariantKind.TI1:
        spec = symmetrize_kernels(spec)
    losses = []
    for step in range(cfg.steps + 1):
        bundle = _mean_bundle([backprop(spec, variant, v, t, cfg.loss) for v, t in dataset])
        if not np.isfinite(bundle.loss):
            raise TrainingError(f"non-finite loss at step {step}")
        losses.append(bundle.loss)
        if variant is not VariantKind.ORDINARY and cfg.check_identity:
            check_identity(spec, variant, dataset[step % len(dataset)][0])
        if step == cfg.steps:
            break
        spec = apply_update(spec, bundle, cfg.learning_rate)
    return TrainResult(spec, losses)


# -- finite differences -------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    worst_rel_error: float
    location: tuple[str, tuple[int, ...]]
    n_params: int


def _with_parameter(spec: NetworkSpec, name: str, value: np.ndarray) -> NetworkSpec:
    if name.startswith("conv"):
        i = int(name[4:])
        layers = list(spec.layers)
        layers[i] = replace(layers[i], kernels=value)
        return replace(spec, layers=tuple(layers))
    if name == "flatten":
        return replace(spec, flatten=value)
    idx, part = name[5:].split(".")
    dense = list(spec.head.layers)
    layer = dense[int(idx)]
    dense[int(idx)] = DenseLayer(value if part == "weight" else layer.weight,
                                 value if part == "bias" else layer.bias, layer.activation)
    return replace(spec, head=replace(spec.head, layers=tuple(dense)))


def finite_difference(spec: NetworkSpec, variant, v, target, eps: float = 1e-6, loss: str = "mse"):
    """Central-difference gradient of every parameter, keyed like :func:`parameters`."""
    out = {}
    for name, p in parameters(spec):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            hi, lo = p.copy(), p.copy()
            hi[idx] += eps
            lo[idx] -= eps
            f_hi = evaluate_loss(_with_parameter(spec, name, hi), variant, v, target, loss)
            f_lo = evaluate_loss(_with_parameter(spec, name, lo), variant, v, target, loss)
            g[idx] = (f_hi - f_lo) / (2 * eps)
        out[name] = g
    return out


def grad_check(spec: NetworkSpec, variant, v, target, eps: float = 1e-6, loss: str = "mse") -> GradCheckReport:
    """Worst ``|g - fd| / max(|g|, |fd|, 1e-8)`` over all parameters."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    spec = copy.deepcopy(spec)
    analytic = dict(backprop(spec, variant, v, target, loss).arrays())
    numeric = finite_difference(spec, variant, v, target, eps, loss)
    worst, where, count = 0.0, ("", ()), 0
    for name, fd in numeric.items():
        g = analytic[name]
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        count += rel.size
        i = np.unravel_index(int(np.argmax(rel)), rel.shape)
        if rel[i] > worst:
            worst, where = float(rel[i]), (name, tuple(int(j) for j in i))
    return GradCheckReport(worst, where, count)


def kink_margin(spec: NetworkSpec, variant, v) -> float:
    """Smallest distance of any ReLU pre-activation from 0, or of any max-pool
    runner-up from its window maximum, along the variant's forward graph.
    Central differences are only trustworthy when this exceeds the step."""
    variant = VariantKind(variant)
    x = _as_input(spec, v)
    if variant is VariantKind.TI22:
        x = symmetry.symmetrize(x, spec.family)
    if variant is VariantKind.TI1:
        spec = symmetrize_kernels(spec)
    margins = [np.inf]

    def visit(layer, z, a):
        if layer.activation == "relu":
            margins.append(float(np.min(np.abs(z))))
        if layer.pooling == "max":
            c, n, _ = a.shape
            p = layer.pool_size
            t = np.sort(a.reshape(c, n // p, p, n // p, p).transpose(0, 1, 3, 2, 4).reshape(-1, p * p), axis=1)
            gaps = t[:, -1] - t[:, -2]
            if layer.activation == "relu":
                # all-dead windows stay tied at exactly 0 under small perturbations
                gaps = gaps[t[:, -1] > 0]
            if gaps.size:
                margins.append(float(np.min(gaps)))

    if variant is VariantKind.TI212:
        inputs = [x] * spec.family.order
        for layer in spec.layers:
            aligned = [symmetry.apply(symmetry.inverse(e), nn.conv_valid(xi, nn.transform_kernels(e, layer)))
                       for e, xi in zip(spec.family, inputs)]
            z = sum(aligned[1:], aligned[0].copy()) / len(aligned)
            a = nn.activate(z, layer.activation)
            visit(layer, z, a)
            merged = nn.pool(a, layer.pooling, layer.pool_size)
            inputs = [symmetry.apply(e, merged) for e in spec.family]
        return min(margins)
    subs = [transform_all_kernels(e, spec) for e in spec.family] if variant is VariantKind.TI21 else [spec]
    for sub in subs:
        _, caches = _chain_forward(sub.layers, x)
        for layer, (_, z, a) in zip(sub.layers, caches):
            visit(layer, z, a)
    return min(margins)


def nudge_off_kinks(spec: NetworkSpec, variant, v, margin: float = 1e-3, seed: int = 0, max_tries: int = 200):
    """Add small seeded noise to ``v`` until every kink margin exceeds ``margin``."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = np.asarray(v, dtype=np.float64)
    for _ in range(max_tries):
        if kink_margin(spec, variant, x) > margin:
            return x
        x = x + rng.uniform(-1e-2, 1e-2, size=x.shape)
    raise RuntimeError(f"could not move input {margin} away from activation kinks")
