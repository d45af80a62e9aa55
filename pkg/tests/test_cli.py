import json

import pytest

from burstwall.cli import EXIT_CONFIG, EXIT_CONSISTENCY, EXIT_DATA, EXIT_OK, main

SMALL = ["--set", "synth.n_benign_flows=60", "--set", "synth.n_attack_flows=6", "--set", "iforest.psi=32",
         "--set", "autoencoder.epochs=20", "--set", "distill.k=10"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = d / "data"
    assert main(["synth", "--out", str(data), "--seed", "3"] + SMALL) == EXIT_OK
    train = str(data / "train.jsonl")
    assert main(["train-ae", "--trace", train, "--out", str(d / "teacher.json")] + SMALL) == EXIT_OK
    assert main(["train-iforest", "--trace", train, "--out", str(d / "forest.json")] + SMALL) == EXIT_OK
    assert main(["distill", "--model", str(d / "teacher.json"), "--model", str(d / "forest.json"),
                 "--trace", train, "--out", str(d / "distilled.json")] + SMALL) == EXIT_OK
    assert main(["compile-rules", "--model", str(d / "distilled.json"), "--trace", train,
                 "--out", str(d / "rules.json")] + SMALL) == EXIT_OK
    return d


def test_artifacts_and_manifests(workdir):
    for name in ("teacher.json", "forest.json", "distilled.json", "rules.json"):
        assert (workdir / name).exists()
        man = json.loads((workdir / f"{name}.manifest.json").read_text())
        assert man["seed"] == 0 and "numpy" in man["versions"]
        assert all(len(h) == 64 for h in man["inputs"].values())
    man = json.loads((workdir / "rules.json.manifest.json").read_text())
    assert man["rule_consistency"] >= 0.99
    assert (workdir / "rules.json.bl.tsv").exists()


def test_replay_and_evaluate(workdir):
    out = workdir / "run"
    rc = main(["replay", "--rules", str(workdir / "rules.json"), "--model", str(workdir / "distilled.json"),
               "--trace", str(workdir / "data" / "eval.jsonl"), "--out", str(out), "--strategy", "both"] + SMALL)
    assert rc == EXIT_OK
    for name in ("verdicts.jsonl", "stats.json", "digests.jsonl", "blacklist.jsonl", "strategies.json",
                 "manifest.json"):
        assert (out / name).exists()
    assert main(["evaluate", "--log", str(out / "verdicts.jsonl"), "--out", str(workdir / "m.json")]) == EXIT_OK
    rep = json.loads((workdir / "m.json").read_text())
    n = sum(1 for _ in open(out / "verdicts.jsonl"))
    assert rep["n_packets"] == n


def test_compare_strategies(workdir):
    rc = main(["compare-strategies", "--rules", str(workdir / "rules.json"),
               "--trace", str(workdir / "data" / "eval.jsonl"), "--out", str(workdir / "s.json")])
    assert rc == EXIT_OK
    rep = json.loads((workdir / "s.json").read_text())
    assert rep["resubmit_fraction"] == 1.0 and rep["reduction"] >= 0.8


def test_profile(workdir):
    data = workdir / "data"
    rc = main(["profile", "--trace", str(data / "train.jsonl"), "--trace", str(data / "eval.jsonl"),
               "--out", str(workdir / "p.tsv"), "--set", "profiler.t=2,3", "--set", "profiler.psi=16",
               "--set", "profiler.k=5"] + SMALL)
    assert rc == EXIT_OK
    assert len((workdir / "p.tsv").read_text().splitlines()) == 3


def test_config_errors_exit_2(workdir, tmp_path):
    train = str(workdir / "data" / "train.jsonl")
    assert main(["train-iforest", "--trace", train, "--out", str(tmp_path / "f.json"),
                 "--set", "iforest.nope=1"]) == EXIT_CONFIG
    bad = tmp_path / "bad.ini"
    bad.write_text("[iforest]\nt = many\n")
    assert main(["train-iforest", "--trace", train, "--out", str(tmp_path / "f.json"),
                 "--config", str(bad)]) == EXIT_CONFIG


def test_data_errors_exit_3(workdir, tmp_path):
    assert main(["train-ae", "--trace", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "t.json")]) == EXIT_DATA
    # a rule file is not a model
    assert main(["compile-rules", "--model", str(workdir / "rules.json"), "--trace",
                 str(workdir / "data" / "train.jsonl"), "--out", str(tmp_path / "r.json")]) == EXIT_DATA
    assert main(["replay", "--trace", str(workdir / "data" / "eval.jsonl"), "--out", str(tmp_path)]) == EXIT_DATA


def test_schema_mismatch_exit_3(workdir, tmp_path):
    train = str(workdir / "data" / "train.jsonl")
    other = ["--set", "features.bl=mean_size:11,max_size:11"]
    assert main(["train-ae", "--trace", train, "--out", str(tmp_path / "t2.json")] + SMALL + other) == EXIT_OK
    rc = main(["distill", "--model", str(tmp_path / "t2.json"), "--model", str(workdir / "forest.json"),
               "--trace", train, "--out", str(tmp_path / "d.json")] + SMALL)
    assert rc == EXIT_DATA


def test_consistency_failure_exits_4(workdir, tmp_path):
    # agreement can never exceed 1, so this threshold always trips the check
    rc = main(["compile-rules", "--model", str(workdir / "distilled.json"), "--trace",
               str(workdir / "data" / "train.jsonl"), "--out", str(tmp_path / "r.json"),
               "--min-consistency", "1.01"] + SMALL)
    assert rc == EXIT_CONSISTENCY
