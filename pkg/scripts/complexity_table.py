#!/usr/bin/env python3
"""Print parameter and MAC tables for the toy and full configurations.

The full-scale rows sit next to the reference figures (198.7M params,
124.3G FLOPs, 88.9G without the decoder) so the convention gap is visible.
"""

import argparse

from swinnet.complexity import count_params_flops
from swinnet.model import ModelConfig

REFERENCE = {"SwinNet": (198.7, 124.3), "SwinNet-fuse": (198.3, 124.3),
             "SwinNet-edge": (198.4, 122.4), "SwinNet-decoder": (173.6, 88.9)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", choices=("toy", "full", "both"), default="both")
    args = ap.parse_args()

    if args.scale in ("toy", "both"):
        print("== toy (96 px) ==")
        print(count_params_flops(ModelConfig.toy()).table())
    if args.scale in ("full", "both"):
        rep = count_params_flops(ModelConfig.full())
        print("== full (384 px) ==")
        print(rep.table())
        print(f"{'variant':<16} {'params(M)':>10} {'ref':>7} {'GMACs':>8} {'ref':>7}")
        for name, cost in rep.variants.items():
            p_ref, f_ref = REFERENCE[name]
            print(f"{name:<16} {cost.params / 1e6:10.1f} {p_ref:7.1f} {cost.macs / 1e9:8.1f} {f_ref:7.1f}")


if __name__ == "__main__":
    main()
