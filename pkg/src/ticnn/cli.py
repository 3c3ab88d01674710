"""``ticnn`` command line: verify, equiv, train-demo, ambiguity, transform.

Exit codes: 0 success, 1 a checked property failed, 2 usage or config error.
Reports are JSON lines (one record per trial/step, then a summary record)
written to ``--out`` or stdout.
"""
from __future__ import annotations

import argparse
import contextlib
import sys
from dataclasses import replace

import numpy as np

from . import arch, symmetry, train, verify
from .arch import TI_VARIANTS, VariantKind
from .nn import GeometryError
from .serialize import (
    ConfigError,
    ReportWriter,
    campaign_config,
    format_csv,
    load_config,
    read_csv,
    validate_config,
    write_csv,
)
from .tensor import random_tensor


class CheckFailed(Exception):
    pass


def _doc(args) -> dict:
    if args.config:
        return load_config(args.config)
    return validate_config({"schema_version": 1})


def _campaign(args, doc):
    return campaign_config(doc, seed=args.seed, trials=args.trials, family=args.family, tolerance=args.tolerance)


@contextlib.contextmanager
def _writer(args):
    if args.out:
        with open(args.out, "w") as fh:
            yield ReportWriter(fh)
    else:
        yield ReportWriter(sys.stdout)


def cmd_verify(args) -> int:
    doc = _doc(args)
    cfg = _campaign(args, doc)
    names = args.variant or doc.get("verify", {}).get("variants", [v.value for v in TI_VARIANTS])
    try:
        variants = [VariantKind(v) for v in names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ok = True
    with _writer(args) as out:
        for variant in variants:
            results = verify.run_identity_campaign(variant, cfg)
            for r in results:
                out.write(r.record())
            failures = sum(not r.passed for r in results)
            summary = {"type": "summary", "command": "verify", "variant": variant.value,
                       "trials": len(results), "failures": failures,
                       "worst_max_abs_diff": max((r.max_abs_diff for r in results), default=0.0)}
            if variant is VariantKind.ORDINARY:
                summary["informational"] = True
                summary["violations_over_1e-3"] = sum(r.max_abs_diff > 1e-3 for r in results)
            else:
                ok &= failures == 0
            out.write(summary)
    return 0 if ok else 1


def cmd_equiv(args) -> int:
    doc = _doc(args)
    cfg = _campaign(args, doc)
    eq = doc.get("equiv", {})
    results = verify.run_equivalence_campaign(cfg, eq.get("linear_trials"))
    dcfg = cfg if "distinct_trials" not in eq or args.trials is not None else replace(cfg, trials=eq["distinct_trials"])
    probe = verify.run_distinctness_probe(dcfg, eq.get("distinct_threshold", 1e-6), eq.get("distinct_fraction", 0.95))
    with _writer(args) as out:
        for r in results:
            out.write(r.record())
        out.write(probe.record())
        failures = sum(not r.passed for r in results)
        out.write({"type": "summary", "command": "equiv", "trials": len(results), "failures": failures,
                   "distinct_fraction": probe.fraction, "distinct_pass": probe.passed})
    return 0 if failures == 0 and probe.passed else 1


def cmd_transform(args) -> int:
    v = read_csv(args.input)
    fam = symmetry.get_family(args.family or "dih4")
    if not 0 <= args.element < fam.order:
        raise ConfigError(f"element index {args.element} out of range for {fam.name} (order {fam.order})")
    e = fam[args.element]
    if args.inverse:
        e = symmetry.inverse(e)
    if fam.dim == 3 and v.ndim != 3:
        raise ConfigError("3D families need a rank-3 CSV tensor")
    result = symmetry.apply(e, v)
    if args.out:
        write_csv(args.out, result)
    else:
        sys.stdout.write(format_csv(result))
    return 0


def toy_task(side: int, samples: int, seed: int, family: str):
    spec = arch.random_spec(side, [dict(out_channels=2, kernel=3, activation="tanh"),
                                   dict(out_channels=2, kernel=3, activation="tanh", pooling="avg")],
                            seed=seed, family=family, nodes=3, head_dims=(2,))
    data = [(random_tensor((1, side, side), verify.trial_seed(seed, i, 5)),
             random_tensor((2,), verify.trial_seed(seed, i, 6))) for i in range(samples)]
    return spec, data


def cmd_train_demo(args) -> int:
    doc = _doc(args)
    tcfg = dict(doc.get("train", {}))
    variant = VariantKind(args.variant or tcfg.get("variant", "ti22"))
    steps = args.steps if args.steps is not None else tcfg.get("steps", 50)
    lr = args.lr if args.lr is not None else tcfg.get("learning_rate", 0.01)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    family = args.family or tcfg.get("family", "dih4")
    spec, data = toy_task(tcfg.get("side", 8), tcfg.get("samples", 4), seed, family)
    cfg = train.TrainConfig(learning_rate=lr, steps=steps, loss=tcfg.get("loss", "mse"), seed=seed)
    do_grad_check = args.grad_check or tcfg.get("grad_check", False)
    code = 0
    with _writer(args) as out:
        result = train.sgd_train(spec, variant, data, cfg)
        for i, loss in enumerate(result.losses):
            out.write({"type": "loss", "step": i, "loss": loss})
        try:
            worst = train.check_identity(result.spec, variant, data[0][0])
            identity_ok = True
        except train.IdentityViolation:
            worst, identity_ok = None, False
        informational = variant is VariantKind.ORDINARY
        out.write({"type": "identity", "variant": variant.value, "pass": identity_ok,
                   "worst_max_abs_diff": worst, "informational": informational})
        if not identity_ok and not informational:
            code = 1
        if do_grad_check:
            v = train.nudge_off_kinks(result.spec, variant, data[0][0], seed=seed)
            rep = train.grad_check(result.spec, variant, v, data[0][1], loss=cfg.loss)
            print(f"grad-check worst relative error: {rep.worst_rel_error:.3e} at {rep.location}", file=sys.stderr)
            out.write({"type": "grad_check", "worst_rel_error": rep.worst_rel_error,
                       "location": [rep.location[0], list(rep.location[1])], "n_params": rep.n_params,
                       "pass": rep.worst_rel_error <= 1e-5})
            if rep.worst_rel_error > 1e-5:
                code = 1
        out.write({"type": "summary", "command": "train-demo", "variant": variant.value, "steps": steps,
                   "initial_loss": result.losses[0], "final_loss": result.losses[-1], "exit_code": code})
    return code


def cmd_ambiguity(args) -> int:
    doc = _doc(args)
    acfg = dict(doc.get("ambiguity", {}))
    rule = args.rule or acfg.get("rule", "sum")
    family = args.family or acfg.get("family", "dih4")
    pattern = args.pattern or acfg.get("pattern", "arrow")
    side = acfg.get("side", 16)
    v = verify.arrow_pattern(side) if pattern == "arrow" else read_csv(pattern)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ConfigError(f"pattern must be a square matrix, got shape {v.shape}")
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    spec = verify.linear_softmax_spec(v.shape[0], seed=seed, family=family)
    report = verify.enumerate_compositions(v, spec.family, rule)
    singles = verify.singleton_outputs(spec, v)
    bit_equal = all(np.array_equal(singles[0], s) for s in singles)
    mode = "scaling" if rule == "sum" else "support"
    ok = verify.confirm_output_collision(spec, v, report, mode)
    with _writer(args) as out:
        out.write(report.record())
        for verdict in report.verdicts:
            out.write({"type": "verdict", **verdict})
        out.write({"type": "summary", "command": "ambiguity", "rule": rule, "family": spec.family.name,
                   "distinct_count": report.distinct_count, "reference_count": report.reference_count,
                   "singletons_bit_equal": bit_equal, "collision_pass": ok})
    return 0 if ok and bit_equal else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--config", help="YAML run config with schema_version: 1")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--tolerance", type=float, help="absolute tolerance override")
    common.add_argument("--trials", type=int, help="trial count override")
    common.add_argument("--family", choices=symmetry.FAMILY_NAMES, help="transformation family")

    p = argparse.ArgumentParser(prog="ticnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", parents=[common], help="transformational-identity campaigns")
    s.add_argument("--variant", action="append", help="variant to run (repeatable)")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("equiv", parents=[common], help="equivalence and distinctness probes")
    s.set_defaults(func=cmd_equiv)

    s = sub.add_parser("train-demo", parents=[common], help="gradient descent on a toy task")
    s.add_argument("--variant", choices=[v.value for v in VariantKind])
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--grad-check", action="store_true", help="compare backprop with finite differences")
    s.set_defaults(func=cmd_train_demo)

    s = sub.add_parser("ambiguity", parents=[common], help="orbit-composition collisions")
    s.add_argument("--pattern", help="two-tone square CSV (default: built-in arrow)")
    s.add_argument("--rule", choices=["sum", "union"])
    s.set_defaults(func=cmd_ambiguity)

    s = sub.add_parser("transform", parents=[common], help="apply one family element to a CSV tensor")
    s.add_argument("input", help="input CSV")
    s.add_argument("--element", type=int, default=0, help="index into the family's element list")
    s.add_argument("--inverse", action="store_true", help="apply the element's inverse")
    s.set_defaults(func=cmd_transform)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GeometryError, ValueError, OSError) as exc:
        print(f"ticnn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
