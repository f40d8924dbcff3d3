import json
import subprocess
import sys

import pytest

from coalescing_walks.cli import main
from coalescing_walks.engine import TrajectoryRecord
from coalescing_walks.suites import SUITES


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_suite_list(capsys):
    code, out, _ = run(["verify", "list"], capsys)
    assert code == 0
    assert out.split() == list(SUITES)
    assert len(SUITES) == 6


def test_simulate_writes_records_and_manifest(tmp_path, capsys):
    out = tmp_path / "recs.jsonl"
    code, _, _ = run(["simulate", "--d", "2", "--N", "8", "--replicas", "10", "--seed", "4", "--out", str(out)], capsys)
    assert code == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 10
    recs = [TrajectoryRecord.from_json(line) for line in lines]
    assert all(1 in r.tau for r in recs)
    manifest = json.loads((tmp_path / "recs.jsonl.manifest.json").read_text())
    assert manifest["config"]["seed"] == 4
    assert {"numpy", "scipy", "numba", "python"} <= set(manifest["versions"])
    assert "wall_clock_seconds" in manifest


def test_simulate_is_byte_identical_and_rerunnable_from_manifest(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.jsonl", "b.jsonl", "c.jsonl"))
    args = ["simulate", "--d", "3", "--N", "4", "--replicas", "5", "--workers", "2"]
    run(args + ["--out", str(a)], capsys)
    run(args + ["--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    run(["simulate", "--config", str(a) + ".manifest.json", "--out", str(c)], capsys)
    assert a.read_bytes() == c.read_bytes()


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"d": 2, "N": 6, "replicas": 3, "initial": "pair", "delta": [2, 1]}))
    code, out, _ = run(["simulate", "--config", str(cfg), "--replicas", "2"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["n0"] == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--replicas", "0"],
        ["simulate", "--N", "2"],
        ["simulate", "--stop", "reach_count"],
        ["simulate", "--d", "2", "--N", "8", "--initial", "scattered", "--n", "3"],
        ["estimate", "vd", "--d", "2"],
        ["verify", "no_such_suite"],
        ["verify", "exponentiality", "--replicas", "10"],
        ["oracle", "adjacency_sum", "--d", "2", "--N", "8", "--n", "3"],
    ],
)
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2
    assert "error" in err


def test_argparse_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "nothing"])
    assert exc.value.code == 2


def test_event_cap_exit_code(capsys):
    code, _, err = run(["simulate", "--d", "2", "--N", "8", "--replicas", "1", "--max-events", "5"], capsys)
    assert code == 3
    assert "event cap" in err


def test_estimate_theta_exact(capsys):
    code, out, _ = run(["estimate", "theta", "--d", "2", "--N", "8", "--method", "exact"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["method"] == "exact_solve"
    assert rep["theta"] == pytest.approx(48.549719887955185)
    assert "speed 2" in rep["note"]


def test_estimate_theta_monte_carlo_deterministic(capsys):
    argv = ["estimate", "theta", "--d", "2", "--N", "6", "--method", "monte_carlo", "--replicas", "300", "--seed", "9"]
    _, first, _ = run(argv, capsys)
    _, second, _ = run(argv, capsys)
    assert first == second
    assert json.loads(first)["se"] > 0


def test_estimate_vd_small(capsys):
    code, out, _ = run(["estimate", "vd", "--d", "3", "--replicas", "20000", "--seed", "1"], capsys)
    rep = json.loads(out)
    assert code == 0 and 0.6 < rep["value"] < 0.72


def test_oracle_commands(capsys):
    _, out, _ = run(["oracle", "theta", "--d", "2", "--N", "4"], capsys)
    rec = json.loads(out)
    assert rec["operation"] == "theta" and rec["value"] == pytest.approx(103 / 12)
    assert rec["residual"] <= 1e-10
    _, out, _ = run(["oracle", "pair_law", "--d", "3", "--N", "6", "--times", "0", "10"], capsys)
    assert json.loads(out)["value"] == pytest.approx([1.0, 0.7116789294992577], abs=1e-8)
    _, out, _ = run(["oracle", "meeting", "--d", "2", "--N", "4", "--delta", "1", "0"], capsys)
    assert json.loads(out)["value"] > 0


def test_verify_exactness_passes(tmp_path, capsys):
    out = tmp_path / "exact.csv"
    code, _, _ = run(["verify", "exactness", "--out", str(out)], capsys)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0].startswith("suite,criterion,check")
    assert all(",pass," in r for r in rows[1:])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "coalescing_walks", "verify", "list"],
                         capture_output=True, text=True, check=True)
    assert "martingale" in res.stdout
