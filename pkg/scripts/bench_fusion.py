"""Interleaved fused-vs-unfused throughput for one or more presets.

    python scripts/bench_fusion.py S6 T2 --batch 4 --iters 30
"""

import argparse
import json

from mobilemamba import bench_pair, build, fuse_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("variants", nargs="*", default=["S6"])
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--iters", type=int, default=30)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    rows = []
    for name in args.variants:
        g = build(name, seed=0, bn_stats="random")
        fused, rep = fuse_model(g)
        u, f = bench_pair(g, fused, args.batch, args.warmup, args.iters, args.threads)
        rows.append({
            "variant": name, "layers": [rep.layers_before, rep.layers_after],
            "unfused_ips": u.images_per_second, "fused_ips": f.images_per_second,
            "ratio": f.images_per_second / u.images_per_second,
            "unfused_p50_ms": u.latency_ms_p50, "fused_p50_ms": f.latency_ms_p50,
        })
        if not args.json:
            r = rows[-1]
            print(f"{name}: layers {rep.layers_before}->{rep.layers_after}  "
                  f"unfused {r['unfused_ips']:.2f} img/s  fused {r['fused_ips']:.2f} img/s  x{r['ratio']:.3f}")
    if args.json:
        print(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
