import json

import numpy as np
import pytest

from meshflow.cli import EXIT_CHECK_FAILED, EXIT_IO, EXIT_OK, EXIT_SOLVER, EXIT_USAGE, main
from meshflow.io import RunManifest, read_mesh, write_mesh, write_nodal
from meshflow.meshgen import criss_cross


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(text):
    start = text.index("{")
    return json.loads(text[start:])


def test_smooth_writes_outputs(tmp_path, capsys):
    code, out, _ = run(capsys, "smooth", "--n", "11", "--perturb", "0.3", "--seed", "7",
                       "--out", str(tmp_path), "--stats", str(tmp_path / "steps.jsonl"))
    assert code == EXIT_OK
    summary = last_json(out)
    assert summary["max_distance_over_h"] <= 0.05 and not summary["folded"]
    for name in ("initial.vtk", "final.vtk", "physical.node", "physical.ele", "manifest.json", "summary.json"):
        assert (tmp_path / name).exists()
    assert RunManifest.load(tmp_path / "manifest.json").seed == 7
    rows = (tmp_path / "steps.jsonl").read_text().splitlines()
    assert len(rows) == summary["steps"] + 1
    assert read_mesh(tmp_path / "physical").is_oriented()


def test_example_horseshoe(capsys):
    code, out, _ = run(capsys, "example", "horseshoe", "--metric", "identity", "--n", "3")
    assert code == EXIT_OK
    assert last_json(out)["min_volume_final"] > 0


def test_sliding_winslow_fold_exit_code(capsys):
    code, out, _ = run(capsys, "example", "horseshoe", "--metric", "identity", "--n", "5",
                       "--functional", "winslow", "--boundary", "sliding")
    assert code == EXIT_CHECK_FAILED
    assert last_json(out)["folded"]


@pytest.mark.parametrize("formulation", ["xi", "x"])
def test_gradcheck(capsys, formulation):
    code, out, _ = run(capsys, "gradcheck", "--d", "3", "--functional", "huang", "--formulation", formulation)
    row = json.loads(out)
    assert code == EXIT_OK and row["pass"] and row["max_relative_error"] <= row["tolerance"]


def test_adapt_from_files(tmp_path, capsys):
    m = criss_cross(6)
    base = write_mesh(m, tmp_path / "in")
    u = np.tanh(10 * (m.vertices[:, 0] - 0.5))
    write_nodal(u, tmp_path / "u.dat")
    code, out, _ = run(capsys, "adapt", "--mesh", str(base), "--metric", f"hessian:{tmp_path / 'u.dat'}",
                       "--out", str(tmp_path / "o"))
    assert code == EXIT_OK
    final = read_mesh(tmp_path / "o" / "physical")
    assert final.is_oriented()
    assert np.abs(final.vertices - m.vertices).max() > 1e-3


def test_bench(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--sizes", "7", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert json.loads((tmp_path / "bench.json").read_text())[0]["n"] == 7


def test_unknown_metric_is_usage_error(capsys):
    code, _, err = run(capsys, "adapt", "--n", "5", "--metric", "bogus")
    assert code == EXIT_USAGE and "bogus" in err


def test_missing_mesh_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "adapt", "--mesh", str(tmp_path / "missing"))
    assert code == EXIT_IO and err.startswith("error:")


def test_bad_mesh_is_solver_error(tmp_path, capsys):
    (tmp_path / "t.node").write_text("x 2 0 0\n")
    (tmp_path / "t.ele").write_text("0 3 0\n")
    code, _, err = run(capsys, "adapt", "--mesh", str(tmp_path / "t"))
    assert code == EXIT_SOLVER and "t.node:1" in err


def test_argparse_rejects_bad_choice(capsys):
    with pytest.raises(SystemExit) as info:
        main(["smooth", "--functional", "amsterdam"])
    assert info.value.code == 2


def test_thread_limit_env(monkeypatch, capsys):
    from threadpoolctl import threadpool_info

    seen = []
    import meshflow.cli as cli

    real = cli.cmd_gradcheck

    def spy(a):
        seen.append([p["num_threads"] for p in threadpool_info()])
        return real(a)

    monkeypatch.setitem(cli.COMMANDS, "gradcheck", spy)
    monkeypatch.setenv("MESHFLOW_THREADS", "1")
    code, _, _ = run(capsys, "gradcheck", "--d", "1")
    assert code == EXIT_OK
    assert all(n == 1 for n in seen[0])
