import csv
import json

import pytest

from kirchloc import ConfigError, DisorderModel, EdgeProfile, LatticeSpec
from kirchloc.cli import main, run, validate

BASE = {
    "lattice": {"dimension": 1, "edges": [{"length": 1.0, "kind": "zero"}]},
    "disorder": {"low": -1, "high": 1, "coupling": 2.0, "master_seed": 7},
    "bands": {"window": [-5, 5], "resolution": 0.01},
    "eigs": {"radius": 2, "window": [0.5, 8]},
    "green": {"radius": 2, "queries": [
        {"energy": 1.3, "source": [[0], 0, 0.3], "target": [[1], 0, 0.6]}]},
    "fm": {"radius": 6, "energy": 1.0, "s": 0.2, "samples": 300, "max_distance": 5},
    "criterion": {"energies": [0.0, 1.0], "couplings": [30], "s": 0.2, "C_s": 1.25, "D_s": 1.15,
                  "finite_volume_radius": 1, "samples": 200},
    "ids": {"E0": 1.0, "radius": 30, "samples": 40, "eps_min": 0.05, "eps_max": 2.0},
    "ct": {"energy": 1.0, "radius": 6, "samples": 20, "epsilon": [0.05]},
    "converge": {"target_energy": 2.0, "radii": [2, 4]},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_bands_free_chain(tmp_path):
    cfg = json.loads(json.dumps(BASE))
    cfg["disorder"] = {"low": 0, "high": 0}
    assert main(["--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--command", "bands"]) == 0
    rows = read_csv(tmp_path / "o" / "band_intervals.csv")
    assert rows[0] == ["start", "end"]
    (start, end), = [tuple(map(float, r)) for r in rows[1:]]
    assert start == pytest.approx(0.0, abs=1e-9) and end == 5.0
    body = read_csv(tmp_path / "o" / "bands.csv")[1:]
    for e, ind, *_ in body:
        assert int(ind) == (float(e) >= -1e-9)


@pytest.mark.parametrize("command", ["bands", "eigs", "green", "fm", "criterion", "ids", "ct",
                                     "converge"])
def test_commands_are_reproducible(tmp_path, command):
    cfg = write(tmp_path, BASE)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["--config", str(cfg), "--out", str(out), "--command", command,
                     "--seed", "11", "--threads", str(1 + k)]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir() if p.suffix == ".csv")
    assert files
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["master_seed"] == 11 and manifest["command"] == command
    assert manifest["config"]["lattice"] == BASE["lattice"]
    assert {"python", "numpy", "scipy"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0 and set(files) <= set(manifest["outputs"])
    assert (outs[0] / f"{command}.plot.txt").exists()


def test_reals_round_trip_through_csv(tmp_path):
    out = tmp_path / "o"
    run("eigs", BASE, out)
    rows = read_csv(out / "eigenvalues.csv")
    records = json.loads((out / "eigenpairs.json").read_text())
    assert [float(r[1]) for r in rows[1:]] == [r["energy"] for r in records]


def test_quarter_warning_does_not_fail(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE))
    cfg["criterion"]["s"] = 0.3
    code = main(["--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--command", "criterion"])
    assert code == 0
    assert "outside (0, 1/4)" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert any("1/4" in w for w in manifest["warnings"])


@pytest.mark.parametrize("edit,path", [
    (lambda c: c["fm"].update(samples=-3), "fm.samples"),
    (lambda c: c["lattice"].update(dimension=5), "lattice.dimension"),
    (lambda c: c["lattice"]["edges"][0].update(length="x"), "lattice.edges.0.length"),
    (lambda c: c["disorder"].update(low=3), "disorder"),
    (lambda c: c.update(bogus=1), "<root>"),
    (lambda c: c.pop("fm"), "fm"),
])
def test_config_errors_name_the_field(tmp_path, capsys, edit, path):
    cfg = json.loads(json.dumps(BASE))
    edit(cfg)
    code = main(["--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--command", "fm"])
    assert code == 2
    assert f"config error: {path}:" in capsys.readouterr().err


def test_module_error_exit_code(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE))
    cfg["eigs"]["window"] = [0.5, 12]
    code = main(["--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o"),
                 "--command", "eigs"])
    assert code == 1
    assert "WindowSplitRequired" in capsys.readouterr().err


def test_missing_command_and_bad_file(tmp_path):
    assert main(["--config", str(write(tmp_path, BASE)), "--out", str(tmp_path / "o")]) == 2
    assert main(["--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o"),
                 "--command", "bands"]) == 2


def test_command_from_config(tmp_path):
    cfg = dict(BASE, command="converge")
    assert main(["--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "converge.csv").exists()


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, BASE)
    for seed in (1, 2):
        main(["--config", str(cfg), "--out", str(tmp_path / f"s{seed}"), "--command", "fm",
              "--seed", str(seed)])
    a = (tmp_path / "s1" / "moments.csv").read_bytes()
    b = (tmp_path / "s2" / "moments.csv").read_bytes()
    assert a != b


def test_config_round_trip():
    lat = LatticeSpec(2, (EdgeProfile.piecewise(1.5, [0.5], [0.0, 2.0]), EdgeProfile.sampled(1.0, [0.1, 0.3])))
    model = DisorderModel(-1, 2, coupling=3.0, density="truncated_gaussian", mean=0.2, std=0.7,
                          master_seed=2**64 - 1)
    cfg = {"lattice": lat.to_dict(), "disorder": model.to_dict(), "bands": {"window": [0, 1]}}
    cfg2 = json.loads(json.dumps(cfg))
    lat2, model2 = validate(cfg2, "bands")
    assert lat2 == lat and model2 == model


def test_validate_rejects_unknown_command():
    with pytest.raises(ConfigError):
        run("plot", BASE, "/tmp/unused")
