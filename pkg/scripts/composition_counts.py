"""Count distinct orbit composites of the built-in arrow (or a CSV pattern)
under every 2D family and both composition rules."""
import argparse

from ticnn import serialize, symmetry, verify


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pattern", help="two-tone square CSV")
    p.add_argument("--side", type=int, default=16)
    args = p.parse_args()
    v = serialize.read_csv(args.pattern) if args.pattern else verify.arrow_pattern(args.side)
    print(f"{'family':10s} {'M':>3s} {'subsets':>8s} {'sum':>6s} {'union':>6s}")
    for name in symmetry.FAMILIES_2D:
        fam = symmetry.get_family(name)
        s = verify.enumerate_compositions(v, fam, "sum")
        u = verify.enumerate_compositions(v, fam, "union")
        print(f"{name:10s} {fam.order:3d} {s.subsets_examined:8d} {s.distinct_count:6d} {u.distinct_count:6d}")
    print(f"count reported for dih4 two-tone patterns: {verify.REFERENCE_COMPOSITE_COUNT}")


if __name__ == "__main__":
    main()
