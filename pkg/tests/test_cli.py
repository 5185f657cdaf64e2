import json
from pathlib import Path

import numpy as np
import pytest

from invarc import cli
from invarc.integrator import Trajectory

SPEC_DIR = Path(__file__).parent.parent / "specs"


def run(argv):
    return cli.main([str(a) for a in argv])


class TestCompileCommand:
    def test_writes_ir_dump(self, tmp_path):
        assert run(["compile", "--spec", SPEC_DIR / "sir.ivc", "--out", tmp_path]) == 0
        dump = (tmp_path / "ir.txt").read_text()
        assert "unit-sphere" in dump and "skew-symmetric-generator" in dump

    def test_byte_stable_across_runs(self, tmp_path):
        run(["compile", "--spec", SPEC_DIR / "nox.ivc", "--out", tmp_path / "a"])
        run(["compile", "--spec", SPEC_DIR / "nox.ivc", "--out", tmp_path / "b"])
        assert (tmp_path / "a/ir.txt").read_bytes() == (tmp_path / "b/ir.txt").read_bytes()

    def test_malformed_spec_exits_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.ivc"
        bad.write_text(
            "system s { state a, b, c ; reference none ; }\n"
            "invariant stoichiometric matrix [[1,0],[0,1]]\n"
        )
        assert run(["compile", "--spec", bad]) == 2
        err = capsys.readouterr().err
        assert ":2:" in err

    def test_usage_error_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            run(["compile"])
        assert exc.value.code == 1


class TestSimulateCommand:
    def test_simplex_diagnostic_column(self, tmp_path):
        assert run([
            "simulate", "--spec", SPEC_DIR / "sir.ivc", "--seed", 5,
            "--steps", 400, "--h", 0.01, "--out", tmp_path,
        ]) == 0
        traj = Trajectory.from_csv(tmp_path / "trajectory.csv", dim=3)
        assert abs(traj.states.sum(axis=1) - 1.0).max() <= 1e-9
        assert traj.diagnostics["sum_err"].max() <= 1e-9

    def test_seed_reproducible(self, tmp_path):
        for sub in ("a", "b"):
            run([
                "simulate", "--spec", SPEC_DIR / "sir.ivc", "--seed", 9,
                "--steps", 50, "--h", 0.01, "--out", tmp_path / sub,
            ])
        assert (tmp_path / "a/trajectory.csv").read_bytes() == (tmp_path / "b/trajectory.csv").read_bytes()

    def test_cone_simulation_from_boundary_stays_feasible(self, tmp_path):
        assert run([
            "simulate", "--spec", SPEC_DIR / "lorentz_spiral.ivc", "--seed", 2,
            "--ic", "1.0,1.0,0.0", "--steps", 500, "--h", 0.02, "--out", tmp_path,
        ]) == 0
        traj = Trajectory.from_csv(tmp_path / "trajectory.csv", dim=3)
        assert traj.diagnostics["cone_violation"].max() <= 1e-7


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_sir")
    code = run([
        "train", "--spec", SPEC_DIR / "sir.ivc", "--seed", 1, "--epochs", 2,
        "--n-traj", 3, "--batch-size", 64, "--window-stride", 8, "--out", out,
    ])
    assert code == 0
    return out


class TestTrainCommand:
    def test_log_schema(self, tiny_run):
        lines = [json.loads(l) for l in (tiny_run / "log.jsonl").read_text().splitlines()]
        assert len(lines) == 2
        for rec in lines:
            assert {"epoch", "lr", "loss", "skipped", "violation", "elapsed_s"} <= set(rec)

    def test_checkpoint_manifest(self, tiny_run):
        manifest = json.loads((tiny_run / "checkpoint/manifest.json").read_text())
        assert all(set(e) == {"name", "offset", "length"} for e in manifest)

    def test_dataset_manifest_reproducibility_fields(self, tiny_run):
        manifest = json.loads((tiny_run / "data/manifest.json").read_text())
        assert {"system", "seed", "n_traj", "t_end", "points", "params"} <= set(manifest)

    def test_resume_bit_continues(self, tmp_path):
        full = tmp_path / "full"
        run(["train", "--spec", SPEC_DIR / "sir.ivc", "--seed", 4, "--epochs", 4,
             "--n-traj", 2, "--window-stride", 8, "--out", full])
        part = tmp_path / "part"
        run(["train", "--spec", SPEC_DIR / "sir.ivc", "--seed", 4, "--epochs", 4,
             "--stop-epoch", 2, "--n-traj", 2, "--window-stride", 8, "--out", part])
        run(["train", "--spec", SPEC_DIR / "sir.ivc", "--seed", 4, "--epochs", 4,
             "--n-traj", 2, "--window-stride", 8, "--out", part, "--resume"])
        a = np.loadtxt(full / "checkpoint/params.txt")
        b = np.loadtxt(part / "checkpoint/params.txt")
        assert np.array_equal(a, b)


class TestEvalAndReport:
    def test_eval_report_sections_and_keys(self, tiny_run, tmp_path):
        out = tmp_path / "eval"
        assert run(["eval", "--run", tiny_run, "--horizon-mult", 2, "--n-eval", 2, "--out", out]) == 0
        text = (out / "report.txt").read_text()
        assert "[horizon 2]" in text
        for key in ("mse_train", "mse_extrap", "mse_total", "violation.simplex", "deviation.total"):
            assert key in text

    def test_three_multiplier_sections(self, tiny_run, tmp_path):
        out = tmp_path / "eval3"
        run(["eval", "--run", tiny_run, "--horizon-mult", 2, 5, 10, "--n-eval", 1, "--out", out])
        text = (out / "report.txt").read_text()
        for mult in (2, 5, 10):
            assert f"[horizon {mult}]" in text

    def test_report_aggregation_has_if_column(self, tiny_run, tmp_path):
        e1 = tmp_path / "e1"
        run(["eval", "--run", tiny_run, "--horizon-mult", 2, "--n-eval", 1, "--out", e1])
        # fake a second run label by rewriting the model field
        e2 = tmp_path / "e2"
        e2.mkdir()
        text = (e1 / "report.txt").read_text().replace("model = compiled", "model = none")
        (e2 / "report.txt").write_text(text)
        out_csv = tmp_path / "cmp.csv"
        assert run(["report", e1, e2, "--out", out_csv]) == 0
        lines = (out_csv).read_text().splitlines()
        assert lines[0] == "metric,horizon,compiled,none,IF"
        assert any(ln.startswith("mse_total,2,") for ln in lines)

    def test_missing_run_is_clear_error(self, tmp_path, capsys):
        assert run(["report", tmp_path / "nope"]) == 1
        assert "missing report" in capsys.readouterr().err
