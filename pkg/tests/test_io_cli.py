"""IFS files, deterministic output and the command line."""
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

import fractalbem
from fractalbem import bem, cli, io, library
from fractalbem.ifs import similarity_dimension

TEN_MAPS = {
    "name": "ten_maps",
    "ambient_dim": 2,
    "declared_measure": 2.0 / 3.0,
    "maps": [{"rho": 0.25, "translation": [0.0, (m - 1) / 4]} for m in range(1, 5)]
    + [{"rho": 0.25, "translation": [0.5, (m - 5) / 4]} for m in range(5, 9)]
    + [{"rho": 0.5, "translation": [0.5, 0.0]}, {"rho": 0.5, "translation": [0.5, 0.5]}],
}


def run_cli(capsys, *argv):
    code = cli.run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------------------
# IFS documents
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("name", sorted(library.LIBRARY))
def test_library_round_trip(name):
    ifs = library.get(name)
    again = io.ifs_from_dict(json.loads(io.serialize_ifs(ifs)))
    assert io.ifs_equal(ifs, again)
    assert io.serialize_ifs(again) == io.serialize_ifs(ifs)


def test_ten_map_file(tmp_path):
    ifs = io.parse_ifs_file(write_json(tmp_path / "ten.json", TEN_MAPS), require_n_attractor=True)
    assert ifs.M == 10 and ifs.is_n_attractor
    assert similarity_dimension(ifs) == pytest.approx(2.0, abs=1e-12)
    assert np.array_equal(ifs.maps[8].translation, [0.5, 0.0])
    assert np.array_equal(ifs.maps[9].translation, [0.5, 0.5])
    built_in = library.infinitely_many_components()
    assert all(a.rho == b.rho and np.array_equal(a.translation, b.translation)
               for a, b in zip(ifs.maps, built_in.maps))


def test_rotation_and_reflection_maps():
    doc = {"ambient_dim": 2, "maps": [{"rho": 0.5, "rotation_deg": 90, "translation": [1, 0]},
                                      {"rho": 0.5, "rotation_deg": 0, "reflect": True, "translation": [0, 0]}]}
    ifs = io.ifs_from_dict(doc)
    assert np.allclose(ifs.maps[0].orthogonal, [[0, -1], [1, 0]], atol=1e-15)
    assert np.linalg.det(ifs.maps[1].orthogonal) == pytest.approx(-1.0)
    one_d = {"ambient_dim": 1, "maps": [{"rho": 0.5, "reflect": True, "translation": [1.0]},
                                        {"rho": 0.5, "translation": [0.5]}]}
    assert io.ifs_from_dict(one_d).maps[0].orthogonal[0, 0] == -1.0


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["maps"][1].__setitem__("rho", 1.2), "maps[1].rho"),
    (lambda d: d["maps"][0].__setitem__("rho", "half"), "maps[0].rho"),
    (lambda d: d["maps"][2].pop("translation"), "maps[2].translation"),
    (lambda d: d["maps"][3].__setitem__("translation", [0.0]), "maps[3].translation"),
    (lambda d: d["maps"][0].__setitem__("colour", 1), "maps[0].colour"),
    (lambda d: d["maps"][1].__setitem__("orthogonal", [[1, 1], [0, 1]]), "maps[1].orthogonal"),
    (lambda d: d["maps"][0].__setitem__("reflect", "yes"), "maps[0].reflect"),
    (lambda d: d.__setitem__("ambient_dim", 3), "ambient_dim"),
    (lambda d: d.__setitem__("declared_measure", -1.0), "declared_measure"),
    (lambda d: d.__setitem__("declared_measure", float("inf")), "declared_measure"),
    (lambda d: d.__setitem__("maps", d["maps"][:1]), "maps"),
    (lambda d: d.__setitem__("extra", 1), "extra"),
])
def test_validation_names_the_field(mutate, path):
    doc = json.loads(json.dumps(TEN_MAPS))
    mutate(doc)
    with pytest.raises(io.ValidationError) as exc:
        io.ifs_from_dict(doc)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


def test_n_attractor_requirement():
    cantor = {"ambient_dim": 1, "maps": [{"rho": 1 / 3, "translation": [0.0]},
                                         {"rho": 1 / 3, "translation": [2 / 3]}]}
    assert not io.ifs_from_dict(cantor).is_n_attractor
    with pytest.raises(io.ValidationError, match="not an n-attractor"):
        io.ifs_from_dict(cantor, require_n_attractor=True)


def test_file_errors(tmp_path):
    with pytest.raises(io.ValidationError, match="cannot read"):
        io.parse_ifs_file(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    with pytest.raises(io.ValidationError, match="invalid JSON at line 1"):
        io.parse_ifs_file(bad)


# ---------------------------------------------------------------------------
# deterministic output
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("x", [0.1, 1.0, 1 / 3, 1e-300, 12345678901234567.0, -2.5e-7, 0.0])
def test_fmt_round_trips(x):
    text = io.fmt(x)
    assert float(text) == x
    assert any(c in text for c in ".e")


def test_dumps_is_deterministic():
    doc = {"b": np.float64(0.1), "a": [1, 2.0, np.int64(3)], "z": 1 + 2j, "nan": float("nan"),
           "flag": np.bool_(True), "arr": np.arange(3) / 7}
    text = io.dumps(doc)
    assert text == io.dumps(doc)
    back = json.loads(text)
    assert back["z"] == {"re": 1.0, "im": 2.0}
    assert back["nan"] is None and back["flag"] is True
    assert back["arr"][1] == 1 / 7
    assert list(back) == ["b", "a", "z", "nan", "flag", "arr"]


def test_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACTALBEM_OUTPUT_DIR", str(tmp_path))
    p = io.write_csv("sub/x.csv", ["a,b", "1,2"])
    assert p == tmp_path / "sub" / "x.csv" and p.read_text() == "a,b\n1,2\n"
    absolute = tmp_path / "abs.csv"
    assert io.resolve_output(absolute) == absolute


def test_version_stamp():
    stamp = io.version_stamp()
    assert stamp.startswith(fractalbem.__version__)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------
def test_attractor_info(capsys):
    code, out, _ = run_cli(capsys, "attractor", "info", "--attractor", "koch_snowflake")
    assert code == cli.EXIT_OK
    doc = json.loads(out)
    assert doc["command"] == "attractor info"
    assert doc["version"] == io.version_stamp()
    res = doc["result"]
    assert res["similarity_dimension"] == pytest.approx(2.0, abs=1e-12)
    assert res["diameter"] == pytest.approx(1.0, abs=1e-12)
    assert res["n_attractor"] is True and res["maps"] == 7


def test_output_is_byte_identical(capsys):
    argv = ("geom", "porosity", "--attractor", "unit_square", "--pixel", "0.03125", "--seed", "3",
            "--trials", "20")
    first = run_cli(capsys, *argv)
    second = run_cli(capsys, *argv)
    assert first[0] == 0 and first[1] == second[1]


def test_mesh_csv(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("FRACTALBEM_OUTPUT_DIR", str(tmp_path))
    code, out, _ = run_cli(capsys, "attractor", "mesh", "--attractor", "unit_square", "--h", "0.25",
                           "--out", "mesh.csv")
    assert code == 0
    res = json.loads(out)["result"]
    rows = (tmp_path / "mesh.csv").read_text().splitlines()
    assert rows[0].startswith("index;diameter;measure")
    measures = [float(r.split(";")[2]) for r in rows[1:]]
    assert len(measures) == res["cells"] == 64
    assert math.fsum(measures) == pytest.approx(1.0, rel=1e-12)


def test_mesh_to_stdout(capsys):
    code, out, _ = run_cli(capsys, "attractor", "mesh", "--attractor", "unit_interval", "--level", "2")
    assert code == 0
    assert out.splitlines()[1:] == ["1.1;0.25;0.25;0.125", "1.2;0.25;0.25;0.375",
                                    "2.1;0.25;0.25;0.625", "2.2;0.25;0.25;0.875"]


def test_mesh_argument_errors(capsys):
    code, _, err = run_cli(capsys, "attractor", "mesh", "--attractor", "unit_square")
    assert code == cli.EXIT_INPUT
    assert json.loads(err)["exit_code"] == 2
    code, _, _ = run_cli(capsys, "attractor", "mesh", "--attractor", "unit_square", "--h", "5")
    assert code == cli.EXIT_INPUT


def test_usage_errors(capsys):
    assert run_cli(capsys, "attractor", "info", "--attractor", "nonesuch")[0] == 2
    assert run_cli(capsys, "geom", "porosity")[0] == 2              # --seed is required
    assert run_cli(capsys, "bem")[0] == 2
    assert run_cli(capsys, "attractor", "info", "--threads", "0")[0] == 2


def test_bad_ifs_file_reports_field(capsys, tmp_path):
    doc = json.loads(json.dumps(TEN_MAPS))
    doc["maps"][4]["rho"] = 1.2
    code, _, err = run_cli(capsys, "attractor", "info", "--ifs", write_json(tmp_path / "b.json", doc))
    assert code == 2
    assert "maps[4].rho" in json.loads(err)["message"]


def test_bem_requires_n_attractor(capsys, tmp_path):
    cantor = {"ambient_dim": 1, "maps": [{"rho": 1 / 3, "translation": [0.0]},
                                         {"rho": 1 / 3, "translation": [2 / 3]}]}
    code, _, err = run_cli(capsys, "bem", "solve", "--ifs", write_json(tmp_path / "c.json", cantor), "--h", "0.5")
    assert code == 2 and "n-attractor" in err


def test_numerical_failure_exit_code(capsys, monkeypatch):
    def broken(config):
        raise bem.BEMError("Galerkin matrix is singular")

    monkeypatch.setattr(bem, "solve_config", broken)
    code, _, err = run_cli(capsys, "bem", "solve", "--h", "0.8")
    assert code == cli.EXIT_NUMERIC
    assert json.loads(err)["error"] == "BEMError"


def test_bem_solve_writes_solution(capsys, tmp_path):
    out = tmp_path / "sol.json"
    code, text, _ = run_cli(capsys, "bem", "solve", "--h", "0.4", "--k", "3", "--theta", "30", "--out", str(out))
    assert code == 0
    res = json.loads(text)["result"]
    assert res["cells"] == 16 and res["residual"] < 1e-10
    sol = json.loads(out.read_text())
    assert sol["config"]["k"] == 3.0
    assert sol["config"]["direction"][2] == pytest.approx(-math.cos(math.radians(30)))


def test_bem_field_csv(capsys, tmp_path):
    out = tmp_path / "field.csv"
    code, _, _ = run_cli(capsys, "bem", "field", "--h", "0.8", "--grid", "2,2,2",
                         "--box", "0,1,0,1,0.5,1", "--out", str(out))
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "x,y,z,re_u,im_u,abs_u" and len(rows) == 9
    code, _, _ = run_cli(capsys, "bem", "field", "--h", "0.8", "--grid", "2,2", "--box", "0,1,0,1")
    assert code == 2


def test_geom_commands(capsys):
    code, out, _ = run_cli(capsys, "geom", "dim", "--attractor", "unit_square", "--pixel", "0.00390625")
    assert code == 0 and json.loads(out)["result"]["slope"] == pytest.approx(1.0, abs=0.05)
    code, out, _ = run_cli(capsys, "geom", "osc", "--attractor", "unit_square", "--pixel", "0.03125",
                           "--seed", "1", "--samples", "500")
    assert code == 0 and json.loads(out)["result"]["ok"] is True
    code, out, _ = run_cli(capsys, "geom", "dt", "--attractor", "unit_square", "--pixel", "0.00390625",
                           "--seed", "1", "--t", "0.5", "--points", "4")
    assert code == 0 and json.loads(out)["result"]["verdict"] == "bounded"


def test_approx_commands(capsys):
    code, out, _ = run_cli(capsys, "approx", "project", "--function", "x1", "--h", "0.25")
    res = json.loads(out)["result"]
    assert code == 0 and res["poincare_holds"] is True and res["cells"] == 64
    assert res["l2_error"] == pytest.approx(0.125 / (2 * math.sqrt(3)), rel=1e-3)
    code, out, _ = run_cli(capsys, "approx", "converge", "--function", "sinsin", "--h-list", "0.5,0.25,0.125")
    assert code == 0 and json.loads(out)["result"]["slope"] > 0


def test_render_csv(capsys):
    code, out, _ = run_cli(capsys, "attractor", "render", "--attractor", "unit_square", "--pixel", "0.125")
    rows = out.splitlines()
    assert code == 0 and rows[0] == "x1,x2,class"
    assert {int(r.split(",")[2]) for r in rows[1:]} <= {1, 2}


def test_config_file(capsys, tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"attractor": "koch_snowflake", "h": 0.5})
    code, out, _ = run_cli(capsys, "attractor", "mesh", "--config", cfg, "--out", str(tmp_path / "m.csv"))
    doc = json.loads(out)
    assert code == 0 and doc["config"]["attractor"] == "koch_snowflake" and doc["config"]["h"] == 0.5
    # explicit options win over the file
    code, out, _ = run_cli(capsys, "attractor", "mesh", "--config", cfg, "--h", "0.9", "--out", str(tmp_path / "m.csv"))
    assert json.loads(out)["config"]["h"] == 0.9
    # the echoed config round-trips
    echo = write_json(tmp_path / "echo.json", {k: v for k, v in doc["config"].items()})
    code, again, _ = run_cli(capsys, "attractor", "mesh", "--config", echo, "--out", str(tmp_path / "m.csv"))
    assert code == 0 and json.loads(again)["result"] == doc["result"]


def test_config_unknown_key(capsys, tmp_path):
    cfg = write_json(tmp_path / "cfg.json", {"attractor": "unit_square", "hh": 0.5})
    code, _, err = run_cli(capsys, "attractor", "mesh", "--config", cfg)
    assert code == 2 and "hh" in json.loads(err)["message"]
    cfg = write_json(tmp_path / "list.json", [1, 2])
    assert run_cli(capsys, "attractor", "mesh", "--config", cfg)[0] == 2


def test_threads_option(capsys):
    code, out, _ = run_cli(capsys, "attractor", "info", "--threads", "1")
    assert code == 0 and "threads" not in json.loads(out)["config"]


@pytest.mark.skipif(shutil.which("fractalbem") is None, reason="console script not installed")
def test_console_script_and_module():
    a = subprocess.run(["fractalbem", "attractor", "info"], capture_output=True, text=True)
    b = subprocess.run([sys.executable, "-m", "fractalbem", "attractor", "info"], capture_output=True, text=True)
    assert a.returncode == b.returncode == 0
    assert a.stdout == b.stdout
