import json

import pytest

from conftest import fixture_path
from triscp.cli import main


def _solve(tmp_path, name="tiny_t1", *extra):
    out = tmp_path / "out"
    code = main(
        ["solve", "--input", str(fixture_path(name)), "--out-dir", str(out), *extra]
    )
    return code, out


def test_solve_writes_all_artifacts(tmp_path, capsys):
    code, out = _solve(tmp_path)
    assert code == 0
    for artifact in ("solution.json", "iterations.jsonl", "report.json", "iterations.csv"):
        assert (out / artifact).exists()
    doc = json.loads((out / "solution.json").read_text())
    assert doc["format"] == "triscp-solution-v1"
    assert doc["converged"] is True
    lines = (out / "iterations.jsonl").read_text().splitlines()
    assert len(lines) == doc["iterations"]
    assert json.loads(lines[0])["k"] == 1
    csv = (out / "iterations.csv").read_text().splitlines()
    assert csv[0] == "iteration,objective,dv,delta2"
    assert len(csv) == doc["iterations"] + 1
    summary = capsys.readouterr().out
    assert "converged=True" in summary
    report = json.loads((out / "report.json").read_text())
    assert report["optimality_gap_pct"] is not None  # tiny instance: reference computed
    assert report["optimality_gap_pct"] < 0.1


def test_solve_artifacts_are_byte_identical(tmp_path):
    _, out1 = _solve(tmp_path / "a", "desk04")
    _, out2 = _solve(tmp_path / "b", "desk04")
    for artifact in ("solution.json", "iterations.jsonl"):
        assert (out1 / artifact).read_bytes() == (out2 / artifact).read_bytes()


def test_solve_jsonl_log_streams_records(tmp_path, capsys):
    code, _ = _solve(tmp_path, "tiny_t1", "--log", "jsonl")
    assert code == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    ks = [json.loads(l)["k"] for l in lines]
    assert ks == list(range(1, len(ks) + 1))


def test_solve_exit_2_when_budget_too_small(tmp_path, capsys):
    code, out = _solve(tmp_path, "tiny_t1", "--max-iter", "2")
    assert code == 2
    doc = json.loads((out / "solution.json").read_text())
    assert doc["converged"] is False
    assert len((out / "iterations.jsonl").read_text().splitlines()) == 2
    assert "did not converge" in capsys.readouterr().err


def test_solve_missing_input_is_usage_error(tmp_path, capsys):
    code = main(["solve", "--input", str(tmp_path / "none.json")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_solve_malformed_feeder_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1}')
    code = main(["solve", "--input", str(bad)])
    assert code == 1
    assert "missing field" in capsys.readouterr().err


def test_solve_unknown_backend_is_usage_error(tmp_path, capsys):
    code, _ = _solve(tmp_path, "tiny_t1", "--backend", "bogus")
    assert code == 1
    assert "unknown conic backend" in capsys.readouterr().err


def test_solve_infeasible_band_exit_1(tmp_path, capsys):
    doc = json.loads(fixture_path("tiny_t1").read_text())
    for bus in doc["buses"]:
        bus["vmin_pu"] = 0.999
    feeder = tmp_path / "tight.json"
    feeder.write_text(json.dumps(doc))
    code = main(["solve", "--input", str(feeder), "--out-dir", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_verify_round_trip(tmp_path, capsys):
    code, out = _solve(tmp_path)
    assert code == 0
    code = main(
        [
            "verify",
            "--input",
            str(fixture_path("tiny_t1")),
            "--solution",
            str(out / "solution.json"),
            "--out-dir",
            str(tmp_path / "v"),
        ]
    )
    assert code == 0
    assert (tmp_path / "v" / "report.json").exists()
    assert "verified=True" in capsys.readouterr().out


def test_verify_flags_tampered_solution(tmp_path, capsys):
    code, out = _solve(tmp_path)
    assert code == 0
    doc = json.loads((out / "solution.json").read_text())
    doc["nodes"][0]["v_re"] += 5e-3
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(doc))
    code = main(
        [
            "verify",
            "--input",
            str(fixture_path("tiny_t1")),
            "--solution",
            str(tampered),
            "--out-dir",
            str(tmp_path / "v"),
        ]
    )
    assert code == 2
    assert "verified=False" in capsys.readouterr().out


def test_verify_rejects_foreign_format(tmp_path, capsys):
    bogus = tmp_path / "sol.json"
    bogus.write_text('{"format": "something-else"}')
    code = main(
        ["verify", "--input", str(fixture_path("tiny_t1")), "--solution", str(bogus)]
    )
    assert code == 1
    assert "unrecognized solution format" in capsys.readouterr().err


def test_powerflow_command(tmp_path, capsys):
    out = tmp_path / "pf"
    code = main(["powerflow", "--input", str(fixture_path("desk04")), "--out-dir", str(out)])
    assert code == 0
    doc = json.loads((out / "powerflow.json").read_text())
    assert doc["converged"] is True
    assert len(doc["nodes"]) == 12  # 4 buses x 3 phases
    assert "converged=True" in capsys.readouterr().out


def test_generate_deterministic_and_solvable(tmp_path, capsys):
    f1 = tmp_path / "f1.json"
    f2 = tmp_path / "f2.json"
    assert main(["generate", "--buses", "5", "--seed", "11", "--out", str(f1)]) == 0
    assert main(["generate", "--buses", "5", "--seed", "11", "--out", str(f2)]) == 0
    assert f1.read_bytes() == f2.read_bytes()
    capsys.readouterr()
    code = main(["solve", "--input", str(f1), "--out-dir", str(tmp_path / "out")])
    assert code == 0


def test_generate_randomize_respects_envelope(tmp_path):
    f = tmp_path / "r.json"
    code = main(
        [
            "generate",
            "--buses",
            "8",
            "--seed",
            "3",
            "--randomize",
            "--p-lo-kw",
            "0.2",
            "--p-hi-kw",
            "0.8",
            "--pf-lo",
            "0.92",
            "--pf-hi",
            "0.98",
            "--out",
            str(f),
        ]
    )
    assert code == 0
    doc = json.loads(f.read_text())
    assert doc["loads"]
    for load in doc["loads"]:
        p, q = load["p_kw"], load["q_kvar"]
        assert 0.2 - 1e-9 <= p <= 0.8 + 1e-9
        pf = p / (p**2 + q**2) ** 0.5
        assert 0.92 - 1e-9 <= pf <= 0.98 + 1e-9


def test_generate_rejects_impossible_ties(capsys, tmp_path):
    code = main(
        ["generate", "--buses", "2", "--ties", "1", "--out", str(tmp_path / "x.json")]
    )
    assert code == 1
    assert "tie-lines" in capsys.readouterr().err
