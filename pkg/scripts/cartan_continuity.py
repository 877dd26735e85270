"""Distance between Cartan isometries along a Mobius path.

For round metrics (m1 o b_eps)* g0 the map distance to the eps = 0 map
should shrink linearly in eps.
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from fiberround.cartan import cartan_isometry, great_circle_distance, icosphere
from fiberround.mobius import Mobius, random_mobius


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--out", type=Path, default=Path("results/cartan_continuity"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    x = icosphere(2)[0]
    eps = 0.04 / 2.0 ** np.arange(6)
    rows = []
    for k in range(args.paths):
        m1 = random_mobius(rng)
        b = rng.standard_normal(3)
        b /= np.linalg.norm(b)
        ref = cartan_isometry(m1.pullback_round(), depth=args.depth)(x)
        d = [float(np.max(great_circle_distance(
            cartan_isometry((m1 @ Mobius.from_boost(e * b)).pullback_round(), depth=args.depth)(x), ref)))
            for e in eps]
        ratios = np.array(d[:-1]) / np.array(d[1:])
        rows += [[k, e, v] for e, v in zip(eps, d)]
        print(f"path {k}: halving ratios " + " ".join(f"{r:.3f}" for r in ratios))
    with open(args.out / "distances.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "eps", "sup_distance"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
