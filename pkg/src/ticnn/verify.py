"""Randomized verification campaigns, equivalence/distinctness probes and
the orbit-composition enumerator.

Each trial draws its own seed from the master seed with
``SeedSequence([master_seed, trial_index])`` so that any single trial can be
replayed on its own and results never depend on execution order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from . import arch, symmetry
from .arch import NetworkSpec, VariantKind
from .nn import GeometryError
from .tensor import DEFAULT_TOL, Tolerance, max_abs_diff, random_tensor, scaled_close

REFERENCE_COMPOSITE_COUNT = 2160
MAX_ENUMERATION_ORDER = 24
MAX_RESAMPLES = 1000


def parse_pooling(token: str) -> tuple[str, int]:
    """``"none"`` -> ("none", 1); ``"max2"`` -> ("max", 2); ``"avg3"`` -> ("avg", 3)."""
    if token == "none":
        return "none", 1
    for kind in ("max", "avg"):
        if token.startswith(kind) and token[len(kind):].isdigit():
            p = int(token[len(kind):])
            if p < 2:
                raise ValueError(f"pooling window must be >= 2 in {token!r}")
            return kind, p
    raise ValueError(f"bad pooling option {token!r}; use none, max<p> or avg<p>")


@dataclass(frozen=True)
class CampaignConfig:
    seed: int = 0
    trials: int = 200
    families: tuple[str, ...] = ("dih4", "c4", "c2", "flip-lr", "flip-td", "flip-diag", "flip-anti")
    side_range: tuple[int, int] = (10, 64)
    kernel_range: tuple[int, int] = (3, 9)
    layer_range: tuple[int, int] = (1, 4)
    channel_range: tuple[int, int] = (1, 4)
    strides: tuple[int, ...] = (1, 2)
    poolings: tuple[str, ...] = ("none", "max2", "avg2")
    activations: tuple[str, ...] = ("relu", "sigmoid", "tanh")
    nodes_range: tuple[int, int] = (2, 4)
    outputs: int = 3
    softmax: bool = False
    tolerance: Tolerance = DEFAULT_TOL
    # fixed layer chain instead of sampled geometry; see random_valid_geometry
    geometry: dict | None = None

    def __post_init__(self):
        for name in ("families", "strides", "poolings", "activations"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        for name in ("side_range", "kernel_range", "layer_range", "channel_range", "nodes_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (int(lo), int(hi)))
            if not 1 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 1 <= lo <= hi, got {(lo, hi)}")
        if self.side_range[1] > 1000 or self.kernel_range[1] > 30 or self.layer_range[1] > 10:
            raise ValueError("ranges exceed the supported maxima (side 1000, kernel 30, layers 10)")
        if self.trials < 0:
            raise ValueError("trials must be >= 0")
        for f in self.families:
            if symmetry.get_family(f).dim != 2:
                raise ValueError(f"campaigns need a 2D family, got {f!r}")
        for p in self.poolings:
            parse_pooling(p)
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be >= 1")
        if self.geometry is not None:
            fixed_spec(self.geometry, seed=0, family=self.families[0], outputs=self.outputs, softmax=self.softmax)
        elif not _any_geometry_possible(self):
            raise GeometryError(
                f"no layer chain from these ranges fits side range {self.side_range}: "
                "stride/pooling divisibility cannot be met")


def trial_seed(master: int, index: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([master, index, stream]).generate_state(1, dtype=np.uint64)[0])


def _min_side(ks, ss, ps) -> tuple[int, int]:
    """Input side as ``a * t + b`` for terminal side ``t`` of a fully tiled chain."""
    def side(t):
        n = t
        for k, s, p in zip(reversed(ks), reversed(ss), reversed(ps)):
            n = (n * p - 1) * s + k
        return n
    b1, b2 = side(1), side(2)
    return b2 - b1, b1 - (b2 - b1)


def _any_geometry_possible(cfg: CampaignConfig) -> bool:
    k, s = cfg.kernel_range[0], min(cfg.strides)
    p = min(parse_pooling(x)[1] for x in cfg.poolings)
    a, b = _min_side([k] * cfg.layer_range[0], [s] * cfg.layer_range[0], [p] * cfg.layer_range[0])
    lo, hi = cfg.side_range
    # smallest chain must have some t >= 1 with a t + b inside the range
    t_lo = max(1, -(-(lo - b) // a))
    return a * t_lo + b <= hi


def fixed_spec(geometry: dict, *, seed: int, family: str, outputs: int = 3, softmax: bool = False) -> NetworkSpec:
    """Random weights on a fixed chain: ``{side, channels, nodes, layers: [...]}``."""
    layers = []
    for cfg in geometry["layers"]:
        kind, p = parse_pooling(cfg.get("pooling", "none"))
        layers.append(dict(out_channels=cfg.get("out_channels", 1), kernel=cfg["kernel"],
                           stride=cfg.get("stride", 1), activation=cfg.get("activation", "identity"),
                           pooling=kind, pool_size=max(p, 2)))
    return arch.random_spec(geometry["side"], layers, seed=seed, family=family,
                            in_channels=geometry.get("channels", 1), nodes=geometry.get("nodes", 3),
                            head_dims=(outputs,), softmax=softmax)


def random_valid_geometry(cfg: CampaignConfig, seed: int) -> NetworkSpec:
    """Deterministic random spec for ``(cfg, seed)``.

    Stride, pooling and kernel sizes are drawn first; the input side is then
    picked among the sides that tile every layer exactly.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    family = cfg.families[int(rng.integers(len(cfg.families)))]
    weight_seed = int(rng.integers(2**63))
    if cfg.geometry is not None:
        return fixed_spec(cfg.geometry, seed=weight_seed, family=family, outputs=cfg.outputs, softmax=cfg.softmax)
    lo, hi = cfg.side_range
    for _ in range(MAX_RESAMPLES):
        depth = int(rng.integers(cfg.layer_range[0], cfg.layer_range[1] + 1))
        ks = [int(rng.integers(cfg.kernel_range[0], cfg.kernel_range[1] + 1)) for _ in range(depth)]
        ss = [int(cfg.strides[rng.integers(len(cfg.strides))]) for _ in range(depth)]
        pools = [parse_pooling(cfg.poolings[rng.integers(len(cfg.poolings))]) for _ in range(depth)]
        acts = [cfg.activations[rng.integers(len(cfg.activations))] for _ in range(depth)]
        chans = [int(rng.integers(cfg.channel_range[0], cfg.channel_range[1] + 1)) for _ in range(depth + 1)]
        a, b = _min_side(ks, ss, [p for _, p in pools])
        t_lo = max(1, -(-(lo - b) // a))
        t_hi = (hi - b) // a
        if t_lo > t_hi:
            continue
        t = int(rng.integers(t_lo, t_hi + 1))
        side = a * t + b
        nodes = int(rng.integers(cfg.nodes_range[0], cfg.nodes_range[1] + 1))
        layers = [dict(out_channels=c, kernel=k, stride=s, activation=act, pooling=kind, pool_size=max(p, 2))
                  for c, k, s, (kind, p), act in zip(chans[1:], ks, ss, pools, acts)]
        spec = arch.random_spec(side, layers, seed=weight_seed, family=family, in_channels=chans[0],
                                nodes=nodes, head_dims=(cfg.outputs,), softmax=cfg.softmax)
        if not is_degenerate(spec, int(rng.integers(2**63))):
            return spec
        weight_seed = int(rng.integers(2**63))
    raise GeometryError(f"no divisible, non-degenerate geometry found after {MAX_RESAMPLES} resamples")


def is_degenerate(spec: NetworkSpec, probe_seed: int) -> bool:
    """True if some layer maps a random probe input to a constant map.

    Such a network ignores its input entirely (typically every ReLU unit
    dead), so it is trivially invariant and proves nothing.
    """
    x = random_tensor((spec.input_channels, spec.input_side, spec.input_side), probe_seed)
    for layer in spec.layers:
        x = arch.layer_forward(layer, x)
        if np.ptp(x) == 0:
            return True
    return False


def describe(spec: NetworkSpec) -> dict:
    return {
        "family": spec.family.name,
        "side": spec.input_side,
        "channels": spec.input_channels,
        "layers": [
            {"k": l.k, "out": l.out_channels, "stride": l.stride, "act": l.activation,
             "pool": "none" if l.pooling == "none" else f"{l.pooling}{l.pool_size}"}
            for l in spec.layers
        ],
        "nodes": spec.nodes,
    }


@dataclass(frozen=True)
class TrialResult:
    trial: int
    geometry: dict
    variant: str
    elements: tuple[str, ...]
    max_abs_diff: float
    threshold: float
    passed: bool

    def record(self) -> dict:
        return {"type": "trial", "trial": self.trial, "variant": self.variant, "geometry": self.geometry,
                "elements": list(self.elements), "max_abs_diff": self.max_abs_diff,
                "threshold": self.threshold, "pass": self.passed}


def _trial_input(cfg: CampaignConfig, spec: NetworkSpec, index: int) -> np.ndarray:
    return random_tensor((spec.input_channels, spec.input_side, spec.input_side), trial_seed(cfg.seed, index, 1))


def identity_trial(variant, cfg: CampaignConfig, index: int) -> TrialResult:
    variant = VariantKind(variant)
    spec = random_valid_geometry(cfg, trial_seed(cfg.seed, index))
    v = _trial_input(cfg, spec, index)
    ref = arch.forward(spec, v, variant).output
    outs = [arch.forward(spec, symmetry.apply(e, v), variant).output for e in spec.family]
    diff = max(max_abs_diff(ref, o) for o in outs)
    thr = cfg.tolerance.threshold(max(float(np.max(np.abs(o))) for o in outs + [ref]))
    return TrialResult(index, describe(spec), variant.value, tuple(e.label for e in spec.family),
                       diff, thr, diff <= thr)


def run_identity_campaign(variant, cfg: CampaignConfig) -> list[TrialResult]:
    """Worst output change over every family transform of a random input, per trial."""
    return [identity_trial(variant, cfg, i) for i in range(cfg.trials)]


def _compare(index, spec, variant_label, elements, a, b, tol) -> TrialResult:
    ok, diff, thr = scaled_close(a, b, tol)
    return TrialResult(index, describe(spec), variant_label, elements, diff, thr, ok)


def linear_config(cfg: CampaignConfig) -> CampaignConfig:
    return replace(cfg, activations=("identity",), poolings=("none",), strides=(1,), geometry=None)


def run_equivalence_campaign(cfg: CampaignConfig, linear_trials: int | None = None) -> list[TrialResult]:
    """Cross-transform ti212 vs ti22 trials, then linear-regime node-vector trials
    comparing ti21 and ti212 against ti22."""
    results = []
    for i in range(cfg.trials):
        spec = random_valid_geometry(cfg, trial_seed(cfg.seed, i))
        v = _trial_input(cfg, spec, i)
        rng = np.random.Generator(np.random.PCG64(trial_seed(cfg.seed, i, 2)))
        a, b = (spec.family[int(j)] for j in rng.integers(spec.family.order, size=2))
        lhs = arch.forward_ti212(spec, symmetry.apply(a, v)).output
        rhs = arch.forward_ti22(spec, symmetry.apply(b, v)).output
        results.append(_compare(i, spec, "ti212~ti22", (a.label, b.label), lhs, rhs, cfg.tolerance))
    lin = linear_config(cfg)
    n_lin = cfg.trials if linear_trials is None else linear_trials
    for i in range(n_lin):
        spec = random_valid_geometry(lin, trial_seed(cfg.seed, i, 3))
        v = _trial_input(lin, spec, i)
        ref = arch.forward_ti22(spec, v).node_values
        for label, fwd in (("linear:ti21~ti22", arch.forward_ti21), ("linear:ti212~ti22", arch.forward_ti212)):
            results.append(_compare(i, spec, label, (), fwd(spec, v).node_values, ref, cfg.tolerance))
    return results


@dataclass(frozen=True)
class DistinctnessReport:
    trials: int
    distinct: int
    threshold: float
    required_fraction: float
    diffs: tuple[float, ...]

    @property
    def fraction(self) -> float:
        return self.distinct / self.trials if self.trials else 1.0

    @property
    def passed(self) -> bool:
        return self.fraction >= self.required_fraction

    def record(self) -> dict:
        return {"type": "distinctness", "trials": self.trials, "distinct": self.distinct,
                "fraction": self.fraction, "threshold": self.threshold,
                "required_fraction": self.required_fraction, "pass": self.passed}


def run_distinctness_probe(cfg: CampaignConfig, threshold: float = 1e-6,
                           required_fraction: float = 0.95) -> DistinctnessReport:
    """How often symmetric-kernel and symmetrized-input networks disagree on the same spec and input."""
    diffs = []
    for i in range(cfg.trials):
        spec = random_valid_geometry(cfg, trial_seed(cfg.seed, i, 4))
        v = _trial_input(cfg, spec, i)
        diffs.append(max_abs_diff(arch.forward_ti1(spec, v).output, arch.forward_ti22(spec, v).output))
    return DistinctnessReport(cfg.trials, sum(d > threshold for d in diffs), threshold, required_fraction,
                              tuple(diffs))


# -- orbit compositions -------------------------------------------------------

def arrow_pattern(side: int = 16) -> np.ndarray:
    """Two-tone arrow with a single barb, placed off-centre so that no
    non-identity square symmetry maps it onto itself."""
    if side < 8:
        raise ValueError("arrow needs side >= 8")
    v = np.zeros((side, side))
    row = side // 3
    v[row, 1:side - 3] = 1.0  # shaft
    tip = side - 4
    for d in range(1, side // 4 + 1):
        v[row - d, tip - d] = 1.0  # upper barb only
    v[row + 1, 1] = 1.0  # tail nub
    return v


@dataclass(frozen=True)
class Composite:
    subset: tuple[int, ...]
    tensor: np.ndarray


@dataclass
class CompositionReport:
    rule: str
    family: str
    subsets_examined: int
    distinct_count: int
    composites: list[Composite]
    verdicts: list[dict] = field(default_factory=list)
    reference_count: int = REFERENCE_COMPOSITE_COUNT

    def record(self) -> dict:
        return {"type": "composition", "rule": self.rule, "family": self.family,
                "subsets_examined": self.subsets_examined, "distinct_count": self.distinct_count,
                "reference_count": self.reference_count}


def enumerate_compositions(v, family, rule: str = "sum") -> CompositionReport:
    """Combine the orbit images of ``v`` over every non-empty subset of the family.

    ``sum`` adds the images, ``union`` takes their elementwise maximum (for
    two-tone patterns). Distinct composites are counted by exact equality.
    """
    fam = symmetry.get_family(family) if isinstance(family, str) else family
    if fam.order > MAX_ENUMERATION_ORDER:
        raise ValueError(f"family order {fam.order} exceeds enumeration bound {MAX_ENUMERATION_ORDER}")
    if rule not in ("sum", "union"):
        raise ValueError(f"unknown composition rule {rule!r}")
    v = np.asarray(v, dtype=np.float64)
    if rule == "union" and not np.all((v == 0) | (v == 1)):
        raise ValueError("union rule needs a two-tone pattern with values in {0, 1}")
    images = [symmetry.apply(e, v) for e in fam]
    composites, seen = [], set()
    for size in range(1, fam.order + 1):
        for subset in itertools.combinations(range(fam.order), size):
            parts = [images[i] for i in subset]
            if rule == "sum":
                t = parts[0].copy()
                for p in parts[1:]:
                    t += p
            else:
                t = np.maximum.reduce(parts)
            composites.append(Composite(subset, t))
            seen.add(t.tobytes())
    return CompositionReport(rule, fam.name, len(composites), len(seen), composites)


def linear_softmax_spec(side: int = 16, *, seed: int = 0, family: str = "dih4", classes: int = 4) -> NetworkSpec:
    """Bias-free linear network with a bare softmax head: node values scale
    with the input, so positive rescaling keeps the argmax."""
    layers = [dict(out_channels=2, kernel=3), dict(out_channels=2, kernel=3, stride=2 if (side - 5) % 2 == 0 else 1)]
    return arch.random_spec(side, layers, seed=seed, family=family, nodes=classes, head_dims=(), softmax=True)


def singleton_outputs(spec: NetworkSpec, v, variant=VariantKind.TI22) -> list[np.ndarray]:
    return [arch.forward(spec, symmetry.apply(e, v), variant).output for e in spec.family]


def confirm_output_collision(spec: NetworkSpec, v, report: CompositionReport, mode: str = "scaling",
                             variant=VariantKind.TI22, tol: Tolerance = DEFAULT_TOL) -> bool:
    """Fill ``report.verdicts`` and return the asserted verdict.

    ``scaling`` (sum composites): each symmetrized composite must equal
    ``|S|`` times the symmetrized pattern to 1e-12, and the predicted class
    must match the pattern's. ``support`` (union composites): records whether
    the symmetrized composites share the pattern's support and whether the
    outputs coincide; nothing is asserted, so it returns True.
    """
    variant = VariantKind(variant)
    if variant not in (VariantKind.TI22, VariantKind.TI21):
        raise ValueError("collision checks apply to ti22 or ti21")
    fam = spec.family
    v = np.asarray(v, dtype=np.float64)
    sym_v = symmetry.symmetrize(v, fam)
    ref = arch.forward(spec, v, variant).output
    ref_class = int(np.argmax(ref))
    verdicts = []
    ok_all = True
    for c in report.composites:
        sym_c = symmetry.symmetrize(c.tensor, fam)
        out = arch.forward(spec, c.tensor, variant).output
        if mode == "scaling":
            err = max_abs_diff(sym_c, len(c.subset) * sym_v)
            same_class = int(np.argmax(out)) == ref_class
            ok = err <= 1e-12 and same_class
            ok_all &= ok
            verdicts.append({"subset": list(c.subset), "sym_scale_error": err, "argmax": int(np.argmax(out)),
                             "same_argmax": same_class, "pass": ok})
        elif mode == "support":
            same_support = bool(np.array_equal(sym_c > 0, sym_v > 0))
            same_out, diff, _ = scaled_close(out, ref, tol)
            verdicts.append({"subset": list(c.subset), "same_support": same_support,
                             "same_output": same_out, "output_diff": diff})
        else:
            raise ValueError(f"unknown collision mode {mode!r}")
    report.verdicts = verdicts
    return ok_all
