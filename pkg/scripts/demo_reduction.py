"""Reduce the demo atlas to a round-isometry cocycle and plot beta along the base.

Accepts any atlas file in the fiberround-atlas JSON format.
"""

import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fiberround.atlas import demo_atlas_spec, load_atlas, parse_atlas
from fiberround.bundle import max_adjacent_distance, reduce_bundle


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--atlas", type=Path, help="atlas JSON; defaults to the built-in demo")
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--rp", action="store_true", help="projective-plane fibres")
    ap.add_argument("--write-atlas", type=Path, help="dump the built-in demo atlas and exit")
    ap.add_argument("--out", type=Path, default=Path("results/demo_reduction"))
    args = ap.parse_args()

    spec = demo_atlas_spec(args.samples, rp_mode=args.rp)
    if args.write_atlas:
        args.write_atlas.write_text(json.dumps(spec, indent=2) + "\n")
        return
    desc = load_atlas(args.atlas) if args.atlas else parse_atlas(spec)
    args.out.mkdir(parents=True, exist_ok=True)

    res = reduce_bundle(desc, workers=1)
    c, rep = res.cocycle, res.cocycle_report
    (args.out / "cocycle.csv").write_text(c.to_csv())
    print(f"orthogonality residual {c.max_residual:.2e}, raw defect {c.min_raw_defect:.3f}")
    print(f"identity/inverse/triple {rep.identity_error:.1e} / {rep.inverse_error:.1e} / {rep.triple_error:.1e}")
    print(f"max adjacent change {max_adjacent_distance(c, desc.atlas):.3e}")

    base = desc.atlas.base.coords
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), sharey=True)
    for ax, (i, j) in zip(axes, [(0, 1), (1, 2)]):
        keys = sorted(b for (a, bb, b) in c.entries if (a, bb) == (i, j))
        M = np.array([c.matrix(i, j, b).ravel() for b in keys])
        for col in range(9):
            ax.plot(base[keys], M[:, col], ".", ms=3)
        ax.set_title(f"entries of beta_{i}{j}")
        ax.set_xlabel("base angle")
    fig.tight_layout()
    fig.savefig(args.out / "beta_entries.png", dpi=120)


if __name__ == "__main__":
    main()
