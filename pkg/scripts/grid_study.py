"""Moments at t = 5 from the PDE on successively finer grids, against particles.

Shows the first-order upwind bias in var_x that decides the grid used for the
particle/PDE agreement check. Takes several minutes at 256^2 on one core.

    python3 scripts/grid_study.py [--particles]
"""
import argparse

import numpy as np

from fhn_meanfield import pde
from fhn_meanfield import particle as P
from fhn_meanfield.config import PRESETS
from fhn_meanfield.grid import Grid2D

KEYS = ("mean_v", "mean_x", "var_v", "var_x")


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--particles", action="store_true", help="also run 10 x 2000 particles")
    ap.add_argument("--T", type=float, default=5.0)
    args = ap.parse_args(argv)
    p = PRESETS["small-eps"]
    law = P.InitialLaw()
    for n, dt in ((64, 2e-3), (128, 1e-3), (256, 4e-4)):
        g = Grid2D(nx=n, nv=n)
        res = pde.solve(law.density(g), args.T, dt, p, stride=max(1, int(args.T / dt)))
        print(f"{n:4d}^2  " + "  ".join(f"{k} {res.series[k][-1]:.4f}" for k in KEYS), flush=True)
    if args.particles:
        c = P.CouplingSpec.from_params(p)
        rows = []
        for trial in range(10):
            ts = P.simulate(P.init_ensemble(2000, law, 7, trial), args.T, 1e-3, p, c,
                            P.Recorder(stride=int(args.T / 1e-3)))
            rows.append([ts[k][-1] for k in KEYS])
        m = np.mean(rows, axis=0)
        print("particles  " + "  ".join(f"{k} {x:.4f}" for k, x in zip(KEYS, m)))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
