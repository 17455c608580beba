"""Energy landscape of the narrow-band two-class instance.

Writes the critical points, a phi grid for surface plots and the signature
cross-check at each point, then integrates the mean-field ODE from the
uniform distribution and from a start near each minimum.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from lossnet.dynamics import integrate_ode, signature_crosscheck
from lossnet.equilibrium import find_all_critical_points, phi
from lossnet.model import enumerate_statespace, make_params, uniform
from lossnet.productform import nu_rho


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/landscape")
    ap.add_argument("--resolution", type=int, default=200)
    ap.add_argument("--lambda1", type=float, default=0.68)
    ap.add_argument("--lambda2", type=float, default=9.0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    p = make_params([1, 20], 20, [args.lambda1, args.lambda2], [1, 1], [0, 0])
    sp = enumerate_statespace(p)
    pts = find_all_critical_points(p)
    rows = []
    for c in pts:
        rep = signature_crosscheck(c.rho, p, sp)
        rows.append({**c.to_dict(), "signatures": rep.to_dict()})
        print(f"{c.label:9s} rho = ({c.rho[0]:.6f}, {c.rho[1]:.6f})  phi = {c.phi_value:.6f}  "
              f"consistent = {rep.consistent}")
    (out / "critical_points.json").write_text(json.dumps(rows, indent=2) + "\n")

    r1 = np.linspace(0.3, 18.0, args.resolution)
    r2 = np.linspace(8.5, 10.5, args.resolution)
    with open(out / "phi_surface.csv", "w") as fh:
        fh.write("rho_0,rho_1,phi\n")
        for a in r1:
            for b in r2:
                fh.write(f"{a!r},{b!r},{phi([a, b], p)!r}\n")

    starts = {"uniform": uniform(sp)}
    for i, c in enumerate(x for x in pts if x.label == "minimum"):
        starts[f"near_minimum_{i}"] = 0.8 * nu_rho(c.rho, sp) + 0.2 * uniform(sp)
    for name, y0 in starts.items():
        tr = integrate_ode(y0, p, sp, T=400.0, output_interval=0.5)
        data = np.column_stack([tr.times, tr.points, tr.g_values])
        header = "t," + ",".join("y_" + "_".join(map(str, n)) for n in sp.states) + ",g"
        np.savetxt(out / f"trajectory_{name}.csv", data, delimiter=",", header=header, comments="")
        d = [np.max(np.abs(nu_rho(c.rho, sp) - tr.final)) for c in pts]
        k = int(np.argmin(d))
        print(f"{name:15s} converged = {tr.converged} at t = {tr.times[-1]:.1f}, ends at the {pts[k].label} "
              f"rho = ({pts[k].rho[0]:.4f}, {pts[k].rho[1]:.4f})")


if __name__ == "__main__":
    main()
