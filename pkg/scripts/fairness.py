"""Per-window Jain index for equal masters sharing one link."""

import argparse

import numpy as np

from sdbridge import scenario as sc
from sdbridge.metrics import jain_index
from sdbridge.sim import us
from sdbridge.workload import synthetic_run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--duration-us", type=float, default=2000)
    ap.add_argument("--window", type=int, default=10_000, help="flits per fairness window")
    ap.add_argument("--kind", default="uniform", choices=["sequential", "uniform", "hotspot"])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    doc = sc.load(sc.shipped("fairness-4masters"))
    b = sc.build(doc, args.seed, sc.resolve_calibration(doc))
    seq = []
    b.system.nodes[0].bridge.xcvrs[0].tap = lambda f, t: seq.append(f.src_master)
    w = doc["workloads"][0]
    pattern = sc._pattern(dict(w["pattern"], kind=args.kind), b.segments[0].local)
    synthetic_run(b.system, {m: pattern for m in w["masters"]}, us(args.duration_us), seed=args.seed)
    print("window,flits_m0,flits_m1,flits_m2,flits_m3,jain")
    for i, k in enumerate(range(0, len(seq) - args.window + 1, args.window)):
        c = np.bincount(seq[k:k + args.window], minlength=4)
        print(f"{i}," + ",".join(str(x) for x in c) + f",{jain_index(c.tolist()):.5f}")


if __name__ == "__main__":
    main()
