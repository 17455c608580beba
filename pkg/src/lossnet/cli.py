"""Command-line front end: ``lossnet <command> params.json [options]``.

Exit codes: 0 success, 2 invalid input, 3 state-space cap exceeded, 4 no
fixed point found, 5 unsupported model, 6 integrator failure, 7 design
condition violated. Class and state indices on the command line are 0-based.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import StepSizeError, integrate_ode, vector_field
from .equilibrium import (
    DesignConditionError,
    SearchReport,
    classify_critical_point,
    design_bistable,
    find_all_critical_points,
    phi,
    picard_fixed_points,
)
from .io import RunManifest, write_csv, write_json
from .kelly import kelly_table
from .model import (
    ModelError,
    NetworkParams,
    StateSpaceCapError,
    UnsupportedModelError,
    enumerate_statespace,
    point_mass,
    uniform,
)
from .productform import nu_rho
from .simulator import (
    SimConfig,
    init_state,
    replay_document,
    simulate,
    write_trajectory_csv,
)

logger = logging.getLogger("lossnet")

EXIT_OK, EXIT_PARSE, EXIT_CAP, EXIT_NO_POINT, EXIT_UNSUPPORTED, EXIT_INTEGRATOR, EXIT_DESIGN = 0, 2, 3, 4, 5, 6, 7
NEAREST_TIE_TOL = 1e-9


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_params(path: str) -> NetworkParams:
    try:
        return NetworkParams.from_json(path)
    except FileNotFoundError:
        raise CommandError(f"cannot read {path}", EXIT_PARSE) from None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, params: NetworkParams | None, options: dict) -> RunManifest:
    return RunManifest(command=args.command, params_file=getattr(args, "params", None),
                       options=options, params=None if params is None else params.to_dict())


def _summary(points) -> str:
    labels = [p.label for p in points]
    return (f"{len(points)} points: {labels.count('minimum')} minima, "
            f"{labels.count('saddle')} saddles, {labels.count('degenerate')} degenerate")


# ---------------------------------------------------------------- commands


def cmd_enumerate(args) -> int:
    params = _load_params(args.params)
    space = enumerate_statespace(params)
    m = _manifest(args, params, {})
    header = ["index"] + [f"n_{k}" for k in range(params.K)] + ["occupancy"]
    rows = [[i, *s, o] for i, (s, o) in enumerate(zip(space.states, space.occupancy))]
    write_csv(_outdir(args) / "states.csv", header, rows, m)
    print(space.size)
    return EXIT_OK


def _critical_point_rows(points, K):
    header = [f"rho_{k}" for k in range(K)] + ["phi", "grad_norm"] + \
             [f"eig_{k}" for k in range(K)] + ["label"]
    rows = [[*p.rho, p.phi_value, p.grad_norm, *p.hessian_eigenvalues, p.label] for p in points]
    return header, rows


def cmd_fixed_points(args) -> int:
    params = _load_params(args.params)
    out = _outdir(args)
    m = _manifest(args, params, {"grid": args.grid, "tol": args.tol, "picard_only": args.picard_only})
    if args.picard_only or not params.has_transfers:
        loads = picard_fixed_points(params, grid_per_axis=args.grid)
        header = [f"rho_{k}" for k in range(params.K)]
        write_csv(out / "fixed_points.csv", header, loads, m)
        write_json(out / "fixed_points.json", {"fixed_points": loads}, m)
        print(f"{len(loads)} fixed points (Picard limits, unclassified)")
        if not loads:
            raise CommandError("no fixed point found: numerical failure", EXIT_NO_POINT)
        if not params.has_transfers and not args.picard_only:
            raise CommandError("classification by phi needs gamma_k > 0 for every class; "
                               "listed Picard fixed points only", EXIT_UNSUPPORTED)
        return EXIT_OK
    report = SearchReport()
    points = find_all_critical_points(params, grid_per_axis=args.grid, report=report, tol=args.tol)
    header, rows = _critical_point_rows(points, params.K)
    write_csv(out / "critical_points.csv", header, rows, m)
    write_json(out / "critical_points.json",
               {"critical_points": [p.to_dict() for p in points],
                "starts": report.starts, "failed_starts": report.failures}, m)
    print(_summary(points))
    if not points:
        raise CommandError("no fixed point found: numerical failure", EXIT_NO_POINT)
    return EXIT_OK


def _initial_distribution(spec: str, space):
    if spec == "uniform":
        return uniform(space)
    if spec.isdigit():
        i = int(spec)
        if i >= space.size:
            raise CommandError(f"--y0 index {i} out of range (|X| = {space.size})", EXIT_PARSE)
        return point_mass(space, i)
    path = Path(spec)
    if not path.exists():
        raise CommandError(f"--y0 must be a state index, 'uniform' or a CSV file; got {spec!r}", EXIT_PARSE)
    y = np.loadtxt(path, delimiter=",", ndmin=1).ravel()
    if y.shape != (space.size,):
        raise CommandError(f"--y0 vector has {y.size} entries, expected {space.size}", EXIT_PARSE)
    return y


def nearest_equilibrium(y, params, space):
    """Index and distance of the critical point whose ``nu_rho`` is nearest to ``y`` in sup-norm."""
    if params.has_transfers:
        loads = [p.rho for p in find_all_critical_points(params)]
    else:
        loads = picard_fixed_points(params)
    best, best_d = None, np.inf
    for i, rho in enumerate(loads):
        d = float(np.max(np.abs(nu_rho(rho, space) - y)))
        if d < best_d - NEAREST_TIE_TOL:
            best, best_d = i, d
    return best, best_d, loads


def cmd_integrate(args) -> int:
    params = _load_params(args.params)
    space = enumerate_statespace(params)
    y0 = _initial_distribution(args.y0, space)
    try:
        traj = integrate_ode(y0, params, space, T=args.T, step=args.step,
                             output_interval=args.output_interval)
    except StepSizeError as exc:
        raise CommandError(f"{exc} (was --step {args.step:g})", EXIT_INTEGRATOR) from None
    except ValueError as exc:
        raise CommandError(str(exc), EXIT_PARSE) from None
    m = _manifest(args, params, {"y0": args.y0, "T": args.T, "step": args.step,
                                 "output_interval": args.output_interval})
    header = ["t"] + ["y_" + "_".join(str(int(x)) for x in n) for n in space.states] + ["g"]
    g = traj.g_values if traj.g_values is not None else np.full(len(traj.times), np.nan)
    rows = [[t, *p, gv] for t, p, gv in zip(traj.times, traj.points, g)]
    out = _outdir(args)
    write_csv(out / "trajectory.csv", header, rows, m)
    vnorm = float(np.max(np.abs(vector_field(traj.final, params, space))))
    idx, dist, loads = nearest_equilibrium(traj.final, params, space)
    summary = {"final_v_norm": vnorm, "converged": traj.converged, "step_used": traj.step}
    if idx is not None:
        summary.update(nearest_index=idx, nearest_rho=loads[idx], nearest_distance=dist)
        if params.has_transfers:
            summary["nearest_label"] = classify_critical_point(loads[idx], params).label
    write_json(out / "integrate_summary.json", summary, m)
    print(f"sup|V| = {vnorm:.3e}; converged: {'yes' if traj.converged else 'no'}")
    if idx is not None:
        rho = ", ".join(f"{x:.6g}" for x in loads[idx])
        print(f"nearest critical point #{idx}: rho = ({rho}), sup-distance {dist:.3e}")
    return EXIT_OK


def cmd_scan_phi(args) -> int:
    params = _load_params(args.params)
    if not params.has_transfers:
        raise CommandError("phi needs gamma_k > 0 for every class", EXIT_UNSUPPORTED)
    K = params.K
    axes = args.axes if args.axes is not None else list(range(min(K, 2)))
    if len(axes) not in (1, 2) or len(set(axes)) != len(axes) or any(not 0 <= a < K for a in axes):
        raise CommandError(f"--axes must name one or two distinct classes in 0..{K - 1}", EXIT_PARSE)
    rng = args.range
    if len(rng) == 2:
        rng = rng * len(axes)
    if len(rng) != 2 * len(axes) or min(rng) <= 0:
        raise CommandError("--range must hold strictly positive lo,hi (per axis)", EXIT_PARSE)
    base = np.ones(K) if args.base is None else np.asarray(args.base, dtype=float)
    if base.shape != (K,) or np.any(base <= 0):
        raise CommandError(f"--base must hold {K} positive loads", EXIT_PARSE)
    r = args.resolution
    if r < 1:
        raise CommandError("--resolution must be at least 1", EXIT_PARSE)
    grids = [np.linspace(rng[2 * i], rng[2 * i + 1], r) if r > 1 else np.array([rng[2 * i]])
             for i in range(len(axes))]
    rows = []
    rho = base.copy()
    if len(axes) == 1:
        for a in grids[0]:
            rho[axes[0]] = a
            rows.append([a, phi(rho, params)])
        header = [f"rho_{axes[0]}", "phi"]
    else:
        for a in grids[0]:
            for b in grids[1]:
                rho[axes[0]], rho[axes[1]] = a, b
                rows.append([a, b, phi(rho, params)])
        header = [f"rho_{axes[0]}", f"rho_{axes[1]}", "phi"]
    m = _manifest(args, params, {"axes": axes, "range": rng, "resolution": r, "base": base.tolist()})
    write_csv(_outdir(args) / "phi_scan.csv", header, rows, m)
    print(f"{len(rows)} grid values written")
    return EXIT_OK


def auto_thresholds(params, space, observable: str) -> tuple[float, float]:
    """Central half of the band between the observable's values at the two lowest minima of ``phi``."""
    from .simulator import observable_weights

    minima = [p for p in find_all_critical_points(params) if p.label == "minimum"]
    if len(minima) < 2:
        raise CommandError(f"automatic switch thresholds need two minima of phi; found {len(minima)}",
                           EXIT_UNSUPPORTED)
    _, W = observable_weights([observable], space)
    vals = sorted(float(W[0] @ nu_rho(p.rho, space)) for p in minima[:2])
    width = vals[1] - vals[0]
    return vals[0] + 0.25 * width, vals[1] - 0.25 * width


def _sim_inputs(args):
    if args.replay:
        doc = json.loads(Path(args.replay).read_text())
        return NetworkParams.from_dict(doc["params"]), dict(doc["config"]), args.replay
    if not args.params or not args.config:
        raise CommandError("simulate needs PARAMS and --config, or --replay", EXIT_PARSE)
    return _load_params(args.params), json.loads(Path(args.config).read_text()), args.params


def cmd_simulate(args) -> int:
    try:
        params, raw, source = _sim_inputs(args)
    except (json.JSONDecodeError, KeyError) as exc:
        raise CommandError(f"malformed simulation input: {exc}", EXIT_PARSE) from None
    space = enumerate_statespace(params)
    if args.seed is not None:
        raw["seed"] = args.seed
    if raw.get("N") is None:
        raise CommandError("config must set N, the number of nodes", EXIT_PARSE)
    if raw.get("switch_thresholds") == "auto":
        from .simulator import default_switch_observable

        raw["switch_observable"] = raw.get("switch_observable") or default_switch_observable(params)
        raw["switch_thresholds"] = auto_thresholds(params, space, raw["switch_observable"])
    try:
        config = SimConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CommandError(f"invalid config: {exc}", EXIT_PARSE) from None
    initial = config.initial
    if initial == "empty":
        y0 = point_mass(space, 0)
    elif initial == "uniform":
        y0 = uniform(space)
    else:
        y0 = np.asarray(initial, dtype=float)
    state0 = init_state(y0, config.N, space, seed=config.seed, method=config.init_method)
    result = simulate(state0, params, space, config)
    out = _outdir(args)
    m = _manifest(args, params, {"config": config.to_dict(), "replay": args.replay})
    m.params_file = source
    m.seeds = [config.seed]
    traj_path = out / "trajectory.csv"
    write_trajectory_csv(traj_path, result)
    m.outputs.append(str(traj_path))
    (out / "trajectory.csv.manifest.json").write_text(json.dumps(m.to_dict(), indent=2) + "\n")
    (out / "replay.json").write_text(replay_document(params, config) + "\n")
    m.outputs.append(str(out / "replay.json"))
    report = result.switches.to_dict() if result.switches is not None else None
    write_json(out / "switches.json",
               {"switches": report, "seed": config.seed, "config": config.to_dict(),
                "n_events": result.n_events, "halted": result.halted,
                "time_average": result.time_average}, m)
    n_cross = 0 if report is None else len(report["crossings"])
    print(f"{result.n_events} events; {n_cross} regime crossings"
          + ("; halted in an absorbing state" if result.halted else ""))
    return EXIT_OK


def cmd_kelly(args) -> int:
    params = _load_params(args.params)
    limit, rows = kelly_table(params, args.check_C)
    m = _manifest(args, params, {"check_C": args.check_C})
    out = _outdir(args)
    K = params.K
    header = ["C"] + [f"rho_over_C_{k}" for k in range(K)] + [f"rho_bar_{k}" for k in range(K)] + \
             ["error"] + [f"tail_ratio_{k}" for k in range(K)] + [f"tail_limit_{k}" for k in range(K)]
    csv_rows = [[r.C, *r.ratio, *limit.rho_bar, r.error, *r.tail_ratio, *r.tail_limit] for r in rows]
    write_csv(out / "kelly_table.csv", header, csv_rows, m)
    write_json(out / "kelly.json", {**limit.to_dict(), "table": [r.to_dict() for r in rows]}, m)
    print(f"omega = {limit.omega:.12g}")
    print("rho_bar = (" + ", ".join(f"{x:.12g}" for x in limit.rho_bar) + ")")
    for r in rows:
        print(f"C = {r.C:5d}  max|rho/C - rho_bar| = {r.error:.3e}  tail ratio = "
              + ", ".join(f"{t:.6f}" for t in r.tail_ratio))
    return EXIT_OK


def cmd_design(args) -> int:
    try:
        doc = json.loads(Path(args.rho_bar).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read load file: {exc}", EXIT_PARSE) from None
    rho_bar = doc.get("rho_bar") if isinstance(doc, dict) else doc
    if not isinstance(rho_bar, list) or len(rho_bar) != 2:
        raise CommandError("load file must hold two loads, as a list or under 'rho_bar'", EXIT_PARSE)
    design = design_bistable(rho_bar, args.C)
    out = _outdir(args)
    path = out / args.output
    design.params.to_json(path)
    m = _manifest(args, design.params, {"rho_bar": rho_bar, "C": args.C})
    m.params_file = args.rho_bar
    write_json(out / (path.stem + ".manifest.json"),
               {"rho_bar": rho_bar, "hessian_at_rho_bar": design.hessian,
                "params_output": str(path)}, m)
    print("lambda = (" + ", ".join(f"{x:.12g}" for x in design.params.lam) + ")")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lossnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lossnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, helptext, params=True):
        p = sub.add_parser(name, help=helptext)
        if params:
            p.add_argument("params", help="parameter JSON file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.set_defaults(func=func)
        return p

    command("enumerate", cmd_enumerate, "list the state lattice")

    p = command("fixed-points", cmd_fixed_points, "find and classify all equilibria")
    p.add_argument("--grid", type=int, default=7, help="multistart points per axis")
    p.add_argument("--tol", type=float, default=1e-11, help="Newton tolerance on the residual")
    p.add_argument("--picard-only", action="store_true", help="list Picard limits without classification")

    p = command("integrate", cmd_integrate, "integrate the mean-field ODE")
    p.add_argument("--y0", default="uniform", help="state index, 'uniform', or a CSV vector file")
    p.add_argument("--T", type=float, default=100.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--output-interval", type=float, default=None)

    p = command("scan-phi", cmd_scan_phi, "evaluate the energy function on a grid")
    p.add_argument("--axes", type=_int_list, default=None, help="one or two class indices, e.g. 0,1")
    p.add_argument("--range", type=_float_list, required=True, help="lo,hi or lo0,hi0,lo1,hi1")
    p.add_argument("--resolution", type=int, default=100, help="grid points per axis")
    p.add_argument("--base", type=_float_list, default=None, help="loads of the classes not scanned")

    p = command("simulate", cmd_simulate, "run the N-node stochastic system", params=False)
    p.add_argument("params", nargs="?", help="parameter JSON file")
    p.add_argument("--config", help="simulation config JSON")
    p.add_argument("--replay", help="replay.json from an earlier run")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = command("kelly", cmd_kelly, "large-capacity limit and finite-C convergence table")
    p.add_argument("--check-C", type=_int_list, default=[50, 100, 200, 400])

    p = command("design", cmd_design, "build a two-class instance with a prescribed saddle", params=False)
    p.add_argument("rho_bar", help="JSON file with two loads")
    p.add_argument("--C", type=int, required=True)
    p.add_argument("--output", default="designed_params.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except UnsupportedModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except ModelError as exc:
        where = f" (key {exc.key!r})" if exc.key else ""
        print(f"error: invalid parameters{where}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except StateSpaceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except StepSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except DesignConditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DESIGN


if __name__ == "__main__":
    sys.exit(main())
