import json
import subprocess
import sys

import numpy as np
import pytest

from pdrb import cli, fe, greedy, rb, vtk
from pdrb.convergence import manufactured_study
from pdrb.problem import Discretization


def test_vtk_roundtrip(disc_small, tmp_path):
    u, s, _ = greedy.solve_pair(disc_small, (0.5, -1.0))
    p = vtk.write_vtk(tmp_path / "a.vtk", disc_small.spaces, {"u": u}, {"sigma": s},
                      cell_scalars={"eta": np.arange(disc_small.mesh.n_triangles, dtype=float)})
    arr = vtk.read_vtk_arrays(p)
    assert np.array_equal(arr["points"][:, :2], disc_small.mesh.vertices)
    assert np.array_equal(arr["cells"], disc_small.mesh.triangles)
    assert np.array_equal(arr["u"], u.values)
    mean = fe.flux_at(disc_small.spaces, s.flux, np.full((1, 3), 1 / 3))[:, 0, :]
    assert np.allclose(arr["sigma"][:, :2], mean, rtol=1e-15, atol=0)
    assert set(np.unique(arr["region"])) == {1.0, 2.0}
    assert np.array_equal(arr["eta"], np.arange(disc_small.mesh.n_triangles))


def test_convergence_rates():
    st = manufactured_study(4, 4)
    assert np.all(np.abs(st.rates("err_primal") - 1) < 0.1)
    assert np.all(np.abs(st.rates("err_dual") - 1) < 0.1)
    assert max(l.identity for l in st.levels) < 1e-10
    assert max(l.feasibility for l in st.levels) < 1e-10
    assert "rates primal" in st.table()


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = d / "run.ini"
    cfg.write_text("[problem]\nuniform_levels = 6\n[greedy]\ntrain_size = 200\nn_max = 3\n"
                   "eps_rb0 = 1e-9\nmu_1 = 0 0\n[output]\nvtk = yes\n")
    assert cli.main(["greedy", str(cfg), "-o", str(d / "out")]) == 0
    return d


def test_greedy_outputs(run_dir):
    out = run_dir / "out"
    for name in ("history.csv", "model.npz", "manifest.json", "mesh_01.txt"):
        assert (out / name).is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["generator"] == "PCG64" and man["seed"] == 0
    assert len(list(out.glob("snap_*.vtk"))) >= 1


def test_online(run_dir, capsys, tmp_path):
    model = run_dir / "out" / "model.npz"
    assert cli.main(["online", str(model), "0.25", "-1", "--vtk", str(tmp_path / "o.vtk")]) == 0
    text = capsys.readouterr().out
    assert "eta_rb" in text and (tmp_path / "o.vtk").is_file()
    m, _ = rb.load_model(model)
    eta = float(text.split("eta_rb =")[1])
    assert eta == pytest.approx(rb.online_solve(m, (0.25, -1)).eta_rb, rel=1e-11)


def test_online_outside_box_warns(run_dir, caplog):
    assert cli.main(["online", str(run_dir / "out" / "model.npz"), "3", "0"]) == 0
    assert "outside" in caplog.text


def test_validate_deterministic(run_dir, tmp_path):
    model = str(run_dir / "out" / "model.npz")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["validate", model, "-n", "50", "--seed", "3", "-o", str(a)]) == 0
    assert cli.main(["validate", model, "-n", "50", "--seed", "3", "-o", str(b)]) == 0
    assert a.read_text() == b.read_text() and len(a.read_text().splitlines()) == 51


def test_export_vtk(run_dir, tmp_path):
    assert cli.main(["export-vtk", str(run_dir / "out" / "model.npz"), "-o", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("snap_*.vtk"))) == 3


def test_exit_codes(tmp_path, run_dir):
    bad = tmp_path / "bad.ini"
    bad.write_text("[greedy]\nbogus = 1\n")
    assert cli.main(["greedy", str(bad)]) == 2
    bad.write_text("[greedy]\nr_rbfe = 1.0\n")
    assert cli.main(["greedy", str(bad)]) == 2
    bad.write_text("[nosuch]\nx = 1\n")
    assert cli.main(["greedy", str(bad)]) == 2
    assert cli.main(["online", str(tmp_path / "missing.npz"), "0", "0"]) == 1
    assert cli.main(["validate", str(run_dir / "out" / "model.npz"), "-n", "0"]) == 2
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"garbage")
    assert cli.main(["online", str(junk), "0", "0"]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["online"])
    assert exc.value.code == 2


def test_unknown_key_message(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[greedy]\nbogus = 1\n")
    cli.main(["greedy", str(bad)])
    assert "unknown key 'bogus' in [greedy]" in capsys.readouterr().err


def test_config_defaults(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[greedy]\nalgorithm = balanced\ndof_max = 20000\nmu_1 = 0.5, -1\n")
    g = cli.greedy_config(cli.load_config(p))
    assert g.algorithm == "balanced" and g.dof_max == 20000 and g.mu_1 == (0.5, -1.0)
    assert g.train_size == 100_000 and g.r_rbfe == 2.0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pdrb", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "greedy" in out.stdout
