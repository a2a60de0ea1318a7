"""Mean error of reflected vs projected ULA on a half-line Gaussian, over a range of step sizes.

    python3 scripts/bias_ordering.py --deltas 0.05 0.1 0.2 0.4 --n-iter 200000
"""

import argparse

import numpy as np

from poissonpnp.diagnostics import WelfordAccumulator
from poissonpnp.oracle import GaussianTarget, QuadratureSpec, quadrature_moments
from poissonpnp.samplers import BoxConstraint, ChainConfig, run_chain


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--deltas", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.4])
    p.add_argument("--n-iter", type=int, default=200_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()

    truth = quadrature_moments(QuadratureSpec(((0.0, 10.0, 4001),), lambda q: -0.5 * q[:, 0] ** 2)).mean[0]
    print(f"truth E[x] = {truth:.5f}")
    print(f"{'delta':>8} {'seed':>5} {'reflected':>11} {'projected':>11}")
    for delta in args.deltas:
        for seed in args.seeds:
            errs = []
            for kernel in ("rpnp-ula", "ppnp-ula"):
                acc = WelfordAccumulator()
                cfg = ChainConfig(delta=delta, n_iter=args.n_iter, burn_in=1000, seed=seed)
                run_chain(kernel, GaussianTarget(0.0, 1.0), None, cfg, [acc],
                          constraint=BoxConstraint(0.0, 1e6), x0=np.ones(1))
                errs.append(float(acc.mean[0]) - truth)
            print(f"{delta:8.3f} {seed:5d} {errs[0]:+11.5f} {errs[1]:+11.5f}")


if __name__ == "__main__":
    main()
