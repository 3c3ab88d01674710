"""Identity and equivalence campaigns over wider geometry ranges than the
default suite (up to side 1000, kernel 30, 10 layers).

    python scripts/large_scale_campaign.py --trials 20 --max-side 256 --max-kernel 30 --max-layers 6
"""
import argparse
import time

from ticnn import verify
from ticnn.arch import TI_VARIANTS


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-side", type=int, default=256)
    p.add_argument("--max-kernel", type=int, default=30)
    p.add_argument("--max-layers", type=int, default=6)
    p.add_argument("--families", nargs="+", default=["dih4"])
    args = p.parse_args()
    cfg = verify.CampaignConfig(seed=args.seed, trials=args.trials, families=tuple(args.families),
                                side_range=(10, args.max_side), kernel_range=(3, args.max_kernel),
                                layer_range=(1, args.max_layers))
    for variant in TI_VARIANTS:
        t0 = time.perf_counter()
        res = verify.run_identity_campaign(variant, cfg)
        worst = max(r.max_abs_diff / r.threshold for r in res)
        sides = [r.geometry["side"] for r in res]
        print(f"{variant.value:6s} {sum(r.passed for r in res)}/{len(res)} pass  "
              f"worst diff/threshold {worst:.2e}  sides {min(sides)}..{max(sides)}  "
              f"{time.perf_counter() - t0:.1f}s")
    res = verify.run_equivalence_campaign(cfg)
    print(f"equiv  {sum(r.passed for r in res)}/{len(res)} pass")


if __name__ == "__main__":
    main()
