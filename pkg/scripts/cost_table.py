"""Static FLOPs/params for every preset next to the reference numbers.

    python scripts/cost_table.py [--csv-dir out/]
"""

import argparse
from pathlib import Path

from mobilemamba import build, count_costs
from mobilemamba.model import PRESETS, preset
from mobilemamba.verify import REFERENCE_COSTS


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--csv-dir", type=Path, help="also write one per-layer CSV per variant")
    ap.add_argument("--ffn-ratio", type=float, help="override the FFN expansion ratio")
    ap.add_argument("--no-downsample-ffn", action="store_true")
    args = ap.parse_args()

    print(f"{'variant':<8}{'res':>5}{'MFLOPs':>10}{'ref':>7}{'dF':>8}{'Mparams':>10}{'ref':>7}{'dP':>8}")
    for name in PRESETS:
        cfg = preset(name)
        if args.ffn_ratio is not None:
            cfg = cfg.replace(ffn_ratio=args.ffn_ratio)
        if args.no_downsample_ffn:
            cfg = cfg.replace(downsample_ffn=False)
        rep = count_costs(build(cfg, seed=None))
        f_ref, p_ref = REFERENCE_COSTS[name]
        mf, mp = rep.flops / 1e6, rep.params / 1e6
        print(f"{name:<8}{cfg.resolution:>5}{mf:>10.1f}{f_ref:>7}{mf / f_ref - 1:>+8.1%}"
              f"{mp:>10.2f}{p_ref:>7}{mp / p_ref - 1:>+8.1%}")
        if args.csv_dir:
            args.csv_dir.mkdir(parents=True, exist_ok=True)
            (args.csv_dir / f"{name}.csv").write_text(rep.to_csv())


if __name__ == "__main__":
    main()
