"""Metastable switching of the n_2 = 0 node fraction in the A = (1, 5) instance.

Runs the N-node system at one or more values of lambda_2 and writes the
sampled observable plus the regime report. Thresholds are the central half
of the gap between the observable at the two phi-minima; when phi has a
single minimum the band from ``--fallback-band`` is used.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from lossnet.equilibrium import find_all_critical_points
from lossnet.model import enumerate_statespace, make_params, uniform
from lossnet.productform import nu_rho
from lossnet.simulator import SimConfig, init_state, observable_weights, pair_correlation, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/switching")
    ap.add_argument("--lambda2", type=float, nargs="+", default=[2.71, 2.735])
    ap.add_argument("--N", type=int, default=300)
    ap.add_argument("--t-max", type=float, default=20_000.0)
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--fallback-band", type=float, nargs=2, default=[0.6653, 0.7485])
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for lam2 in args.lambda2:
        p = make_params([1, 5], 5, [0.64, lam2], [1, 1], [0, 0])
        sp = enumerate_statespace(p)
        pts = find_all_critical_points(p)
        _, W = observable_weights(["zero:1"], sp)
        pred = sorted(float(W[0] @ nu_rho(c.rho, sp)) for c in pts if c.label == "minimum")
        if len(pred) >= 2:
            gap = pred[-1] - pred[0]
            band = (pred[0] + 0.25 * gap, pred[-1] - 0.25 * gap)
        else:
            band = tuple(args.fallback_band)
        cfg = SimConfig(seed=args.seed, t_max=args.t_max, sample_dt=1.0, observables=["zero:1", "states"],
                        switch_thresholds=band, switch_observable="zero:1", N=args.N)
        r = simulate(init_state(uniform(sp), args.N, sp), p, sp, cfg)
        tag = f"lambda2_{lam2:g}"
        np.savetxt(out / f"{tag}.csv", np.column_stack([r.times, r.column("zero:1")]),
                   delimiter=",", header="t,zero:1", comments="")
        states = r.values[:, 1:]
        cov = pair_correlation(states, sp, args.N)
        rep = r.switches.to_dict()
        doc = {"lambda2": lam2, "predictions": pred, "labels": [c.label for c in pts],
               "report": rep, "pair_covariance": cov.covariance.tolist(),
               "pair_covariance_se": cov.stderr.tolist(), "config": cfg.to_dict()}
        (out / f"{tag}.json").write_text(json.dumps(doc, indent=2) + "\n")
        levels = rep["levels"]
        dwell = np.mean(rep["dwell_times"]) if rep["dwell_times"] else float("nan")
        print(f"lambda2 = {lam2:g}: {len(pts)} critical points, minima predict "
              + ", ".join(f"{x:.3f}" for x in pred)
              + f"; {len(rep['crossings'])} crossings, mean dwell {dwell:.0f}, levels "
              + ("none" if levels is None else f"{levels[0]:.3f}/{levels[1]:.3f}")
              + "; pair covariance " + ", ".join(f"{c:+.3f}" for c in cov.covariance))


if __name__ == "__main__":
    main()
