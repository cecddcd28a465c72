"""How far do the ablation switches move the logits of a fixed random model?

Builds each variant with the same seed, toggles exact-vs-Euler input
discretization and the wavelet branch, and reports the logit shift.

    python scripts/ablation_outputs.py T2
"""

import argparse

import numpy as np

from mobilemamba import build, preset
from mobilemamba.mrffi import SsmConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("variant", nargs="?", default="T2")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--batch", type=int, default=4)
    args = ap.parse_args()

    base_cfg = preset(args.variant)
    x = np.random.default_rng(args.seed).random((args.batch, 3, base_cfg.resolution, base_cfg.resolution),
                                                dtype=np.float32)
    base = build(base_cfg, seed=args.seed, bn_stats="random")
    ref = base(x)
    variants = {
        "euler_b": base_cfg.replace(ssm=SsmConfig(euler_b=True)),
        "no_wt": base_cfg.replace(wt_enabled=False),
    }
    print(f"{args.variant} baseline logits: std {ref.std():.4e}")
    for tag, cfg in variants.items():
        g = build(cfg, seed=None)
        src = base.state_dict()
        for name, arr in g.state_dict().items():
            arr[...] = src[name]
        out = g(x)
        rel = np.linalg.norm(out - ref) / np.linalg.norm(ref)
        agree = np.mean(out.argmax(1) == ref.argmax(1))
        print(f"{tag:<8} max |dlogit| {np.abs(out - ref).max():.3e}  rel {rel:.3e}  top-1 agreement {agree:.2f}")


if __name__ == "__main__":
    main()
