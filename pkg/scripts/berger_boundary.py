"""Pinching ratio of the Berger family (1, 1, eps) and its lower boundary.

Compares the closed form, the sampled-plane estimate and the
finite-difference curvature oracle, then bisects for the boundary.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from fiberround.milnor import MilnorMetricS3, fd_plane_extremes, sectional_extremes_milnor


def closed_form_ratio(eps):
    # sectional curvatures of the Berger sphere lie between eps and 4 - 3 eps
    lo, hi = np.minimum(eps, 4 - 3 * eps), np.maximum(eps, 4 - 3 * eps)
    return hi / lo


def bisect(pinched, lo, hi, width=1e-7):
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if pinched(mid) else (mid, hi)
    return 0.5 * (lo + hi)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/berger_boundary"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    eps = np.linspace(0.4, 1.3, 46)
    rows = []
    for e in eps:
        m = MilnorMetricS3.berger(float(e))
        s = sectional_extremes_milnor(m)
        k_min, k_max = fd_plane_extremes(m)
        rows.append([e, closed_form_ratio(e), s.ratio, k_max / k_min])
    with open(args.out / "ratios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "closed_form", "sampled", "finite_difference"])
        w.writerows(rows)

    lower = bisect(lambda e: sectional_extremes_milnor(MilnorMetricS3.berger(e)).pinched, 0.4, 0.8)
    upper = bisect(lambda e: not sectional_extremes_milnor(MilnorMetricS3.berger(e)).pinched, 1.0, 1.3)
    print(f"lower boundary {lower:.8f} (4/7 = {4 / 7:.8f}, error {lower - 4 / 7:+.1e})")
    print(f"upper boundary {upper:.8f} (16/13 = {16 / 13:.8f}, error {upper - 16 / 13:+.1e})")

    r = np.array(rows)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(r[:, 0], r[:, 1], "k-", label="closed form")
    ax.plot(r[:, 0], r[:, 2], "o", ms=3, label="sampled planes")
    ax.plot(r[:, 0], r[:, 3], "x", ms=4, label="finite differences")
    ax.axhline(4.0, color="grey", ls=":")
    ax.set_xlabel("fibre scale eps")
    ax.set_ylabel("K_max / K_min")
    ax.set_ylim(0.9, 8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out / "ratios.png", dpi=120)


if __name__ == "__main__":
    main()
