"""Finite-capacity loads against the large-capacity limit.

Single class with lambda = 2, gamma = mu = 1 by default; prints omega, the
limiting normalised load and the convergence table.
"""

import argparse

from lossnet.kelly import kelly_table
from lossnet.model import make_params


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacities", type=int, nargs="+", default=[25, 50, 100, 200, 400, 800, 1600])
    ap.add_argument("--lam", type=float, default=2.0)
    ap.add_argument("--gamma", type=float, default=1.0)
    ap.add_argument("--mu", type=float, default=1.0)
    args = ap.parse_args()
    p = make_params([1], 1, [args.lam], [args.gamma], [args.mu])
    lim, rows = kelly_table(p, args.capacities)
    print(f"omega = {lim.omega:.12f}, rho_bar = {lim.rho_bar[0]:.12f}")
    print(f"{'C':>6} {'rho/C':>12} {'error':>10} {'C x error':>10} {'tail ratio':>11} {'exp(-omega)':>11}")
    for r in rows:
        print(f"{r.C:6d} {r.ratio[0]:12.8f} {r.error:10.3e} {r.C * r.error:10.4f} "
              f"{r.tail_ratio[0]:11.6f} {r.tail_limit[0]:11.6f}")


if __name__ == "__main__":
    main()
