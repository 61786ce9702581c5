import json
import os

import pytest

from brbpay.bench.cli import EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, load_config, main


def files(d):
    return sorted(os.listdir(d))


def test_run_writes_report(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", "--n", "4", "--brb", "sig", "--payments", "50", "--seed", "3",
                 "--out", str(out), "--plot", "--trace"])
    assert code == EXIT_OK
    assert files(out) == ["findings.json", "messages.csv", "replicas.csv", "summary.csv",
                          "timeline.csv", "timeline.png", "trace.jsonl"]
    assert "seed=3 ok" in capsys.readouterr().out


def test_same_seed_same_report(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--brb", "echo", "--payments", "40", "--seed", "9",
                     "--out", str(tmp_path / name), "--trace"]) == EXIT_OK
    for f in files(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_violation_exit_code(tmp_path):
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({
        "byzantine_replicas": {"0": ["equivocate"], "1": ["equivocate"]},
        "byzantine_clients": {"0": "double-spend", "1": "double-spend"},
        "beyond_f": True}))
    out = tmp_path / "o"
    code = main(["run", "--brb", "echo", "--payments", "40", "--seed", "3",
                 "--fault-plan", str(plan), "--out", str(out)])
    assert code == EXIT_VIOLATION
    body = json.loads((out / "violations.json").read_text())
    assert body["violations"]


def test_bad_usage(tmp_path, capsys):
    assert main(["run", "--n", "5", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["run", "--brb", "echo", "--shards", "2", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "--brb", "pbft"])


def test_config_file_and_repeat(tmp_path):
    cfg = tmp_path / "bench.toml"
    cfg.write_text(
        'seed = 5\n'
        '[topology]\nn = 4\nbrb = "echo"\n'
        '[workload]\nkind = "uniform"\npayments = 30\n'
        '[faults]\ncrashes = {"3" = 100.0}\n')
    flat = load_config(str(cfg))
    assert flat["n"] == 4 and flat["brb"] == "echo" and flat["seed"] == 5
    assert flat["faults"] == {"crashes": {"3": 100.0}}
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--repeat", "2", "--out", str(out)]) == EXIT_OK
    assert files(out) == ["seed-5", "seed-6"]


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[topology]\nreplicas = 4\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


def test_smallbank_workload(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--workload", "smallbank", "--shards", "2", "--clients", "8",
                 "--payments", "80", "--out", str(out)]) == EXIT_OK
    header = (out / "summary.csv").read_text().splitlines()[0]
    assert "shard1_settles_per_sim_second" in header


def test_scenario_by_name(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "--scenario", "partial-payment", "--out", str(out)]) == EXIT_OK
    found = json.loads((out / "findings.json").read_text())
    assert found["name"] == "partial-payment" and found["ok"]


def test_list_scenarios(capsys):
    assert main(["scenarios"]) == EXIT_OK
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["equivocation", "join", "partial-payment", "robust-async", "robust-crash",
                     "sharded-smallbank"]


def test_fault_plan_beyond_f_is_usage_error(tmp_path, capsys):
    plan = tmp_path / "plan.toml"
    plan.write_text('crashes = { "3" = 10.0 }\nbyzantine_replicas = { "0" = ["silent"] }\n')
    assert main(["run", "--fault-plan", str(plan), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "exceeds f=1" in capsys.readouterr().err
