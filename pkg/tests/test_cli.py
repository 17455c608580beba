import json

import numpy as np
import pytest

from lossnet.cli import main


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


NARROW = {"K": 2, "A": [1, 20], "C": 20, "lambda": [0.68, 9.0], "gamma": [1, 1], "mu": [0, 0]}
SINGLE = {"K": 1, "A": [1], "C": 1, "lambda": [2], "gamma": [1], "mu": [1]}


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_enumerate(tmp_path, capsys):
    code, out, _ = run(["enumerate", write(tmp_path / "p.json", NARROW), "--out", str(tmp_path)], capsys)
    assert code == 0 and out.strip() == "22"
    lines = (tmp_path / "states.csv").read_text().splitlines()
    assert lines[0] == "index,n_0,n_1,occupancy" and len(lines) == 23
    manifest = json.loads((tmp_path / "states.csv.manifest.json").read_text())
    assert manifest["command"] == "enumerate" and manifest["params"]["C"] == 20


def test_enumerate_errors(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text('{"K": 1, "A": [1], "C": 1, "lambda": [1], "gamma": [1]}')
    code, _, err = run(["enumerate", str(bad)], capsys)
    assert code == 2 and "'mu'" in err
    bad.write_text("{not json")
    assert run(["enumerate", str(bad)], capsys)[0] == 2
    monkeypatch.setenv("LOSSNET_STATE_CAP", "5")
    assert run(["enumerate", write(tmp_path / "p.json", NARROW), "--out", str(tmp_path)], capsys)[0] == 3


def test_fixed_points(tmp_path, capsys):
    code, out, _ = run(["fixed-points", write(tmp_path / "p.json", NARROW), "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.strip() == "3 points: 2 minima, 1 saddles, 0 degenerate"
    doc = json.loads((tmp_path / "critical_points.json").read_text())
    assert [c["label"] for c in doc["critical_points"]].count("minimum") == 2
    assert set(doc["critical_points"][0]) == {"rho", "phi", "grad_norm", "eigenvalues", "label"}


def test_fixed_points_equal_requirements(tmp_path, capsys):
    p = {"K": 2, "A": [2, 2], "C": 8, "lambda": [1.0, 3.0], "gamma": [1, 0.5], "mu": [0.5, 0.2]}
    code, out, _ = run(["fixed-points", write(tmp_path / "p.json", p), "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("1 points: 1 minima, 0 saddles")


def test_fixed_points_without_transfers(tmp_path, capsys):
    p = dict(SINGLE, gamma=[0])
    code, out, err = run(["fixed-points", write(tmp_path / "p.json", p), "--out", str(tmp_path)], capsys)
    assert code == 5 and "gamma" in err and "1 fixed points" in out
    assert (tmp_path / "fixed_points.csv").exists()


def test_integrate(tmp_path, capsys):
    code, out, _ = run(["integrate", write(tmp_path / "p.json", NARROW), "--T", "200",
                        "--output-interval", "1", "--out", str(tmp_path)], capsys)
    assert code == 0 and "converged: yes" in out
    data = np.genfromtxt(tmp_path / "trajectory.csv", delimiter=",", names=True)
    g = data["g"]
    assert np.all(np.diff(g) <= 1e-8 * (1 + np.abs(g[:-1])))
    summary = json.loads((tmp_path / "integrate_summary.json").read_text())
    assert summary["nearest_label"] == "minimum"


def test_integrate_from_a_fixed_point(tmp_path, capsys):
    from lossnet.equilibrium import find_all_critical_points
    from lossnet.model import NetworkParams, enumerate_statespace
    from lossnet.productform import nu_rho

    params = NetworkParams.from_dict(SINGLE | {"C": 4})
    y = nu_rho(find_all_critical_points(params)[0].rho, enumerate_statespace(params))
    np.savetxt(tmp_path / "y0.csv", y[None, :], delimiter=",", fmt="%.17g")
    code, out, _ = run(["integrate", write(tmp_path / "p.json", SINGLE | {"C": 4}),
                        "--y0", str(tmp_path / "y0.csv"), "--out", str(tmp_path)], capsys)
    assert code == 0 and "converged: yes" in out
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) <= 3


def test_integrate_step_failure(tmp_path, capsys):
    code, _, err = run(["integrate", write(tmp_path / "p.json", NARROW), "--y0", "0", "--T", "100",
                        "--step", "20", "--out", str(tmp_path)], capsys)
    assert code == 6 and "smaller" in err


def test_scan(tmp_path, capsys):
    pfile = write(tmp_path / "p.json", NARROW)
    code, _, _ = run(["scan-phi", pfile, "--range", "0.5,16,8,11", "--resolution", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    from lossnet.equilibrium import phi
    from lossnet.model import NetworkParams

    rows = (tmp_path / "phi_scan.csv").read_text().splitlines()
    assert len(rows) == 2
    a, b, v = map(float, rows[1].split(","))
    assert (a, b) == (0.5, 8.0) and v == phi([0.5, 8.0], NetworkParams.from_dict(NARROW))
    assert run(["scan-phi", pfile, "--range", "0,1"], capsys)[0] == 2


def test_scan_surface_basins(tmp_path, capsys):
    pfile = write(tmp_path / "p.json", NARROW)
    run(["scan-phi", pfile, "--range", "0.4,18,8.5,10.5", "--resolution", "60", "--out", str(tmp_path)], capsys)
    data = np.loadtxt(tmp_path / "phi_scan.csv", delimiter=",", skiprows=1)
    grid = data[:, 2].reshape(60, 60)
    interior = grid[1:-1, 1:-1]
    nb = [grid[i:i + 58, j:j + 58] for i in range(3) for j in range(3) if (i, j) != (1, 1)]
    local_min = np.all([interior < x for x in nb], axis=0)
    assert local_min.sum() == 2


def test_scan_single_class(tmp_path, capsys):
    code, _, _ = run(["scan-phi", write(tmp_path / "p.json", SINGLE | {"C": 5}), "--range", "0.1,5",
                      "--resolution", "50", "--out", str(tmp_path)], capsys)
    assert code == 0
    v = np.loadtxt(tmp_path / "phi_scan.csv", delimiter=",", skiprows=1)[:, 1]
    k = int(np.argmin(v))
    assert 0 < k < 49
    assert np.all(np.diff(v[: k + 1]) < 0) and np.all(np.diff(v[k:]) > 0)


def test_kelly(tmp_path, capsys):
    code, out, _ = run(["kelly", write(tmp_path / "p.json", SINGLE), "--out", str(tmp_path)], capsys)
    assert code == 0 and "omega = 0.405465108108" in out
    doc = json.loads((tmp_path / "kelly.json").read_text())
    errs = [r["error"] for r in doc["table"]]
    assert errs == sorted(errs, reverse=True)
    code, _, _ = run(["kelly", write(tmp_path / "q.json", SINGLE | {"mu": [0]})], capsys)
    assert code == 5


def test_kelly_light_traffic(tmp_path, capsys):
    p = {"K": 1, "A": [1], "C": 1, "lambda": [0.5], "gamma": [1], "mu": [1]}
    code, out, _ = run(["kelly", write(tmp_path / "p.json", p), "--check-C", "20", "--out", str(tmp_path)], capsys)
    assert code == 0 and "omega = 0\n" in out and "rho_bar = (0.5)" in out


def test_design(tmp_path, capsys):
    code, _, _ = run(["design", write(tmp_path / "r.json", {"rho_bar": [3, 5]}), "--C", "30",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    code, out, _ = run(["fixed-points", str(tmp_path / "designed_params.json"), "--out", str(tmp_path)], capsys)
    assert code == 0 and out.startswith("3 points: 2 minima, 1 saddles")
    code, _, err = run(["design", write(tmp_path / "s.json", [0.5, 10]), "--C", "30"], capsys)
    assert code == 7 and "exp" in err


def test_simulate_and_replay(tmp_path, capsys):
    pfile = write(tmp_path / "p.json", {"K": 2, "A": [1, 5], "C": 5, "lambda": [0.64, 2.735],
                                        "gamma": [1, 1], "mu": [0, 0]})
    cfg = write(tmp_path / "c.json", {"N": 300, "seed": 4, "t_max": 3000, "sample_dt": 1.0,
                                      "observables": ["zero:1"], "switch_thresholds": "auto",
                                      "initial": "uniform"})
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(["simulate", pfile, "--config", cfg, "--out", str(a)], capsys)
    assert code == 0
    rep = json.loads((a / "switches.json").read_text())["switches"]
    assert len(rep["crossings"]) >= 2
    dirs = [d for _, d in rep["crossings"]]
    assert all(x != y for x, y in zip(dirs, dirs[1:]))
    assert run(["simulate", "--replay", str(a / "replay.json"), "--out", str(b)], capsys)[0] == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()

    def strip(path):
        doc = json.loads(path.read_text())
        doc["manifest"].pop("duration_s")
        doc["manifest"]["outputs"] = [o.split("/")[-1] for o in doc["manifest"]["outputs"]]
        doc["manifest"]["options"].pop("replay")
        doc["manifest"].pop("params_file")
        return doc

    assert strip(a / "switches.json") == strip(b / "switches.json")


def test_simulate_idle(tmp_path, capsys):
    pfile = write(tmp_path / "p.json", SINGLE | {"lambda": [0]})
    cfg = write(tmp_path / "c.json", {"N": 10, "seed": 1, "t_max": 5, "sample_dt": 1,
                                      "observables": ["state:0"], "switch_thresholds": [0.2, 0.8]})
    code, out, _ = run(["simulate", pfile, "--config", cfg, "--out", str(tmp_path)], capsys)
    assert code == 0 and "halted" in out
    rep = json.loads((tmp_path / "switches.json").read_text())["switches"]
    assert rep["crossings"] == []
    assert set(np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)[:, 1]) == {1.0}


def test_simulate_needs_inputs(tmp_path, capsys):
    assert run(["simulate", "--out", str(tmp_path)], capsys)[0] == 2
