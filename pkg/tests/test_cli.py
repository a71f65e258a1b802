import json

import numpy as np
import pytest

from conformal_rigidity import cli


def run(args):
    return cli.main(args)


def load(path):
    return json.loads(path.read_text())


def strip_timestamp(text: str) -> str:
    data = json.loads(text)
    data.pop("generated_at", None)
    return json.dumps(data, sort_keys=True)


def basis_json(matrix) -> str:
    cols = np.asarray(matrix, dtype=float).T.tolist()
    return json.dumps({"n": len(cols), "columns": cols})


def test_exactness_small_run(tmp_path):
    out = tmp_path / "ex.json"
    code = run(["exactness", "--n", "2", "--trials", "3", "--seed", "7",
                "--out", str(out)])
    assert code == 0
    rep = load(out)
    assert rep["schema_version"] == 1
    assert rep["command"] == "exactness"
    assert rep["aggregate"]["pass"] is True
    assert len(rep["trials"]) == 3
    assert rep["aggregate"]["transversality"]["sum_spans"] is True


def test_exactness_with_explicit_basis(tmp_path):
    out = tmp_path / "ex.json"
    code = run(["exactness", "--n", "2", "--basis",
                basis_json(np.eye(2)), "--out", str(out)])
    assert code == 0
    rep = load(out)
    assert len(rep["trials"]) == 1


def test_exactness_basis_file(tmp_path):
    basis_file = tmp_path / "basis.json"
    basis_file.write_text(basis_json([[1.0, 0.2], [0.0, 1.0]]))
    out = tmp_path / "ex.json"
    assert run(["exactness", "--n", "2", "--basis", str(basis_file),
                "--out", str(out)]) == 0


def test_malformed_basis_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["exactness", "--n", "2", "--basis", str(bad)]) == 2
    assert "malformed basis JSON" in capsys.readouterr().err


def test_invalid_config_exits_2():
    assert run(["exactness", "--n", "1"]) == 2
    assert run(["simulate", "--n", "2", "--trials", "0"]) == 2
    assert run(["exactness", "--n", "2", "--tol", "-1e-9"]) == 2
    assert run(["simulate", "--n", "2", "--fd-step", "0"]) == 2


def test_exactness_n6_performance(tmp_path):
    import time

    out = tmp_path / "ex6.json"
    start = time.perf_counter()
    code = run(["exactness", "--n", "6", "--trials", "5", "--out", str(out)])
    elapsed = time.perf_counter() - start
    assert code == 0
    assert load(out)["aggregate"]["pass"] is True
    assert elapsed < 60.0


def test_determinism_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    args = ["exactness", "--n", "2", "--trials", "2", "--seed", "3"]
    assert run(args + ["--out", str(out1)]) == 0
    assert run(args + ["--out", str(out2)]) == 0
    assert strip_timestamp(out1.read_text()) == strip_timestamp(out2.read_text())


class TestClassify:
    def test_scalar_multiple_is_conjugate(self, tmp_path):
        out = tmp_path / "c.json"
        code = run(["classify", "--basis", basis_json(np.eye(2)),
                    "--basis2", basis_json(3.0 * np.eye(2)),
                    "--out", str(out)])
        assert code == 0
        rep = load(out)
        assert rep["aggregate"]["conjugate"] is True
        assert rep["trials"][0]["c"] == pytest.approx(3.0)

    def test_rotation_is_conjugate_with_unit_scale(self, tmp_path):
        th = np.pi / 6
        R = [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
        out = tmp_path / "c.json"
        assert run(["classify", "--basis", basis_json(np.eye(2)),
                    "--basis2", basis_json(R), "--out", str(out)]) == 0
        rep = load(out)
        assert rep["aggregate"]["conjugate"] is True
        assert rep["trials"][0]["c"] == pytest.approx(1.0)

    def test_diagonal_stretch_not_conjugate(self, tmp_path):
        out = tmp_path / "c.json"
        assert run(["classify", "--basis", basis_json(np.eye(2)),
                    "--basis2", basis_json(np.diag([1.0, 2.0])),
                    "--out", str(out)]) == 0
        assert load(out)["aggregate"]["conjugate"] is False

    def test_singular_basis_exits_2(self):
        singular = json.dumps({"n": 2, "columns": [[1.0, 2.0], [2.0, 4.0]]})
        assert run(["classify", "--basis", singular,
                    "--basis2", basis_json(np.eye(2))]) == 2


class TestSimulate:
    def test_eps_zero_trial(self, tmp_path):
        out = tmp_path / "s.json"
        code = run(["simulate", "--n", "2", "--k", "2", "--trials", "1",
                    "--eps", "0", "--grid", "9", "--out", str(out)])
        assert code == 0
        rep = load(out)
        assert rep["aggregate"]["pass"] is True
        trial = rep["trials"][0]
        assert trial["conjugacy"]["max_residual"] <= 1e-10
        assert trial["fixed_point_error"] <= 1e-10

    def test_small_perturbed_run(self, tmp_path):
        out = tmp_path / "s.json"
        code = run(["simulate", "--n", "2", "--k", "2", "--trials", "2",
                    "--eps", "0.05", "--seed", "11", "--grid", "11",
                    "--out", str(out)])
        assert code == 0
        rep = load(out)
        assert rep["aggregate"]["pass"] is True
        assert rep["aggregate"]["max_residual"] <= 1e-5

    def test_oversized_eps_exits_2(self):
        assert run(["simulate", "--n", "2", "--eps", "0.5"]) == 2


class TestJets:
    def test_default_suite_passes(self, tmp_path):
        out = tmp_path / "j.json"
        code = run(["jets", "--n", "2", "--k", "2", "--trials", "10",
                    "--out", str(out)])
        assert code == 0
        rep = load(out)
        suite = rep["trials"][0]
        assert suite["bracket_identity_error"] <= 1e-10
        assert suite["fd_checked"] is True
        assert suite["fd_agreement_error"] <= 1e-6

    def test_large_fd_step_degrades_gracefully(self, tmp_path):
        out = tmp_path / "j.json"
        code = run(["jets", "--n", "2", "--trials", "5",
                    "--fd-step", "1e-2", "--out", str(out)])
        assert code == 0  # reported, not failed, above the knee
        suite = load(out)["trials"][0]
        assert suite["fd_checked"] is False


class TestRelations:
    def test_standard_action(self, tmp_path):
        out = tmp_path / "r.json"
        code = run(["relations", "--n", "2", "--k", "3", "--samples", "50",
                    "--out", str(out)])
        assert code == 0
        rep = load(out)
        assert rep["aggregate"]["max_residual"] <= 1e-12

    def test_perturbed_action(self, tmp_path):
        out = tmp_path / "r.json"
        code = run(["relations", "--n", "2", "--k", "2", "--samples", "30",
                    "--eps", "0.05", "--out", str(out)])
        assert code == 0
        assert load(out)["aggregate"]["max_residual"] <= 1e-10
