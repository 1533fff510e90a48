import io
import json

import pytest

from oplab.cli import CSV_COLUMNS, run_cli


def run(argv):
    out = io.StringIO()
    code = run_cli(argv, out=out)
    return code, out.getvalue()


def test_theta_trivial():
    code, text = run(["theta", "--epsilon", "0", "--k", "0", "--n-trunc", "64", "--trials", "100", "--seed", "7"])
    assert code == 0
    doc = json.loads(text)
    assert doc["results"]["theta"]["estimate"] == 1.0
    assert doc["seed"] == 7 and "numpy" in doc["versions"]


def test_oracle_survival_prints_fifteen_digits():
    code, text = run(["oracle", "survival", "--epsilon", "0.5", "--n", "2"])
    assert code == 0 and text.strip() == "0.750000000000000"
    code, text = run(["oracle", "pmf", "--epsilon", "0.5", "--n", "2", "--sites", "0"])
    assert text.split() == ["0", "0.250000000000000", "1", "0.750000000000000"]
    code, text = run(["oracle", "survival", "--epsilon", "0.3", "--n", "2", "--exact"])
    assert text.strip() == "0.910000000000000"


def test_oracle_capacity_error_is_surfaced(capsys):
    code, _ = run(["oracle", "survival", "--epsilon", "0.3", "--n", "30"])
    assert code == 3 and "exceeds" in capsys.readouterr().err


def test_csv_is_byte_identical_across_runs_and_workers(tmp_path):
    base = ["eq2", "--epsilon", "0.3", "--k-list", "0..3", "--n-trunc", "32", "--trials", "700", "--seed", "3"]
    paths = []
    for i, w in enumerate(["1", "4"]):
        c, j = tmp_path / f"{i}.csv", tmp_path / f"{i}.json"
        assert run(base + ["--workers", w, "--csv", str(c), "--json", str(j)])[0] == 0
        paths.append((c, j))
    (c0, j0), (c1, j1) = paths
    assert c0.read_bytes() == c1.read_bytes() and j0.read_bytes() == j1.read_bytes()
    header = c0.read_text().splitlines()[0].split(",")
    assert header == CSV_COLUMNS


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.yaml"
    assert run(["theta", "--epsilon", "0.2", "--trials", "50", "--n-trunc", "8", "--write-config", str(cfg)])[0] == 0
    code, text = run(["theta", "--config", str(cfg), "--trials", "60"])
    doc = json.loads(text)
    assert doc["params"]["epsilon"] == 0.2 and doc["results"]["theta"]["trials"] == 60


def test_bad_config_names_key(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("trails: 10\n")
    assert run(["theta", "--config", str(cfg)])[0] == 2
    assert "trails" in capsys.readouterr().err
    cfg.write_text("command: eq2\n")
    assert run(["theta", "--config", str(cfg)])[0] == 2


def test_contract_errors_exit_nonzero(capsys):
    assert run(["theta", "--trials", "0"])[0] == 2
    with pytest.raises(SystemExit):
        run(["no-such-command"])


@pytest.mark.parametrize("argv", [
    ["simulate", "--epsilon", "0.3", "--n-list", "1,2,4", "--trials", "200"],
    ["eqstr", "--n-list", "2,4", "--trials", "100"],
    ["corollary2", "--n", "8", "--trials", "100"],
    ["prop3", "--n-list", "8,16", "--sizes", "4,8", "--size-n", "16", "--trials", "100"],
    ["edgespeed", "--values", "0.8,1.0", "--n-list", "8,16", "--trials", "100"],
    ["prop4f", "--n-list", "8", "--sizes", "4,8", "--trials", "100"],
    ["duality", "--n", "2", "--k", "1", "--trials", "100", "--permutations", "50"],
])
def test_subcommands_run_and_are_deterministic(argv, tmp_path):
    outs = []
    for i in range(2):
        c = tmp_path / f"{i}.csv"
        code, text = run(argv + ["--seed", "5", "--csv", str(c)])
        assert code == 0
        outs.append((text, c.read_bytes()))
    assert outs[0] == outs[1]


def test_selftest_passes_and_fault_fails():
    code, text = run(["selftest", "--trials", "100", "--n", "32", "--oracle-trials", "5000"])
    assert code == 0 and text.count("PASS") == 5
    code2, text2 = run(["selftest", "--trials", "100", "--n", "32", "--oracle-trials", "5000"])
    assert text == text2
    code, text = run(["selftest", "--trials", "50", "--n", "16", "--eps-list", "0.1", "--inject-fault"])
    assert code == 1 and "FAIL full-line identity" in text and "first at seed=" in text
