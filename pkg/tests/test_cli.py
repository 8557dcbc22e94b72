import csv
import json

import numpy as np
import pytest

from softgait.cli import main
from softgait.config import OUTPUT_ENV
from softgait.mesh import box_mesh, save_mesh
from softgait.reduce import ReducedModel

SMALL = {"version": 1, "mesh": {"box": {"cells": [4, 1, 1], "size": [1.0, 0.25, 0.25]}},
         "subspace": {"w": 2, "m": 2, "k": 1}, "clusters": {"passive": 2, "active": 1},
         "contact_samples": 6, "steps": 12,
         "cmaes": {"population": 6, "iterations": 4}}


def write_config(tmp_path, **changes):
    data = json.loads(json.dumps(SMALL))
    for key, value in changes.items():
        *parents, leaf = key.split(".")
        target = data
        for p in parents:
            target = target.setdefault(p, {})
        target[leaf] = value
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestPrecompute:
    def test_writes_model(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["precompute", str(cfg), "-o", str(tmp_path / "out")]) == 0
        model = ReducedModel.load(tmp_path / "out" / "model.sgm")
        assert model.m == 2 and len(model.contact_samples) == 6
        assert "rigid modes discarded: 6" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["precompute", str(cfg), "-o", str(tmp_path / "a")])
        main(["precompute", str(cfg), "-o", str(tmp_path / "b")])
        assert (tmp_path / "a/model.sgm").read_bytes() == (tmp_path / "b/model.sgm").read_bytes()

    def test_mesh_file(self, tmp_path):
        save_mesh(box_mesh((3, 1, 1), (0.6, 0.2, 0.2)), tmp_path / "bar.mesh")
        cfg = write_config(tmp_path, mesh={"path": "bar.mesh"})
        assert main(["precompute", str(cfg), "-o", str(tmp_path / "out")]) == 0

    def test_output_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env_out"))
        assert main(["precompute", str(write_config(tmp_path))]) == 0
        assert (tmp_path / "env_out" / "model.sgm").is_file()

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, **{"subspace.w": 0})
        assert main(["precompute", str(cfg), "-o", str(tmp_path)]) == 2
        assert "subspace.w" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path):
        assert main(["precompute", str(write_config(tmp_path, colour="red"))]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["precompute", str(tmp_path / "nope.json")]) == 2

    def test_eigen_failure_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, **{"subspace.w": 50})
        assert main(["precompute", str(cfg), "-o", str(tmp_path / "out")]) == 3


class TestSimulate:
    def test_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        main(["precompute", str(cfg), "-o", str(out)])
        assert main(["simulate", str(cfg), "-o", str(out), "--steps", "9"]) == 0
        rows = read_csv(out / "stats.csv")
        assert len(rows) == 9
        assert [int(r["step"]) for r in rows] == list(range(1, 10))
        assert set(rows[0]) >= {"time", "com_x", "com_y", "com_z", "j_disp", "j_align"}
        assert (out / "trajectory.sgt").is_file()

    def test_missing_model(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["simulate", str(cfg), "-o", str(tmp_path / "empty")]) == 2
        assert "precompute" in capsys.readouterr().err

    def test_bad_params_file(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        main(["precompute", str(cfg), "-o", str(out)])
        bad = tmp_path / "p.json"
        bad.write_text(json.dumps({"A": [[1.0]], "T": [[1.0]], "theta": [[0.0]]}))
        assert main(["simulate", str(cfg), "-o", str(out), "--params", str(bad)]) == 2


class TestOptimize:
    def test_optimize_then_simulate(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["optimize", str(cfg), "-o", str(out)]) == 0
        best = json.loads((out / "best_params.json").read_text())
        assert np.isfinite(best["J"])
        history = read_csv(out / "history.csv")
        assert len(history) == 4
        best_J = [float(r["best_J"]) for r in history]
        assert best_J == sorted(best_J, reverse=True)
        assert best_J[-1] == pytest.approx(best["J"], rel=1e-9)
        assert main(["simulate", str(cfg), "-o", str(out),
                     "--params", str(out / "best_params.json")]) == 0
        # the final running objective reproduces the optimizer's best value
        final = read_csv(out / "stats.csv")[-1]
        assert float(final["j_disp"]) * float(final["j_align"]) == pytest.approx(best["J"],
                                                                                rel=1e-6)

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["optimize", str(cfg), "-o", str(tmp_path / "full"), "--iterations", "4"])
        main(["optimize", str(cfg), "-o", str(tmp_path / "part"), "--iterations", "2",
              "--checkpoint-every", "1"])
        main(["optimize", str(cfg), "-o", str(tmp_path / "part"), "--iterations", "4",
              "--resume"])
        full = json.loads((tmp_path / "full/best_params.json").read_text())
        part = json.loads((tmp_path / "part/best_params.json").read_text())
        assert full == part

    def test_frozen_amplitude(self, tmp_path):
        cfg = write_config(tmp_path, frozen={"A": 0.0})
        out = tmp_path / "out"
        assert main(["optimize", str(cfg), "-o", str(out)]) == 0
        history = read_csv(out / "history.csv")
        assert len({r["best_J"] for r in history}) == 1


class TestModesAndBench:
    def test_modes_export(self, tmp_path):
        cfg = write_config(tmp_path, **{"subspace.m": 3})
        out = tmp_path / "out"
        assert main(["modes", str(cfg), "-o", str(out)]) == 0
        rows = read_csv(out / "eigenvalues.csv")
        lam = [float(r["eigenvalue"]) for r in rows]
        assert len(lam) == 3 and lam == sorted(lam) and lam[0] > 0
        n_vertices = 5 * 2 * 2
        for name in ("rest.obj", "mode_00.obj", "mode_02.obj"):
            lines = (out / name).read_text().splitlines()
            assert sum(line.startswith("v ") for line in lines) == n_vertices

    def test_bench(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["bench", str(cfg), "--steps", "5", "--warmup", "1"]) == 0
        assert "per step" in capsys.readouterr().out
