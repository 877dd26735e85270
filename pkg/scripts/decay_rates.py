"""Measure the decay rate of single-mode perturbations of the round metric.

The linearised normalized flow damps a degree-l mode at rate l(l+1) - 2.
"""

import argparse

from fiberround.flow import FlowConfig, run_flow_to_round
from fiberround.geometry import ConformalMetricS2
from fiberround.harmonics import HarmonicField


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--degrees", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    ap.add_argument("--amplitude", type=float, default=1e-5)
    ap.add_argument("--dt-max", type=float, nargs="+", default=[0.02, 0.01, 0.005])
    args = ap.parse_args()

    print("dt      l  measured    expected  rel.error")
    for dt in args.dt_max:
        for l in args.degrees:
            g = ConformalMetricS2(HarmonicField.from_modes({(l, 0): args.amplitude}))
            _, trace = run_flow_to_round(g, FlowConfig(dt_max=dt, convergence_tol=args.amplitude * 1e-4))
            r0 = trace.residual[0]
            rate = trace.decay_rate(lo=r0 * 1e-3, hi=r0 * 0.5)
            expected = l * (l + 1) - 2
            print(f"{dt:<7g} {l}  {rate:9.5f}  {expected:8d}  {rate / expected - 1:+.2e}")


if __name__ == "__main__":
    main()
