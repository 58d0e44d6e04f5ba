import csv
import hashlib
import subprocess
import sys

import pytest

from traceoracle.cli import main, read_config_file, CliError
from traceoracle.trace_io import load_traces

TINY = ["--d-v", "4", "--d-t", "6", "--hidden", "4", "--epochs", "2", "--batch", "8", "--lr", "0.01"]


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("gen", "--subject", "fsm-proto", "--inputs", 16, "--budget", 400, "--seed", 3, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--traces", corpus / "traces.jsonl", "--fraction", 0.5, "--seed", 3,
               "--out", out, *TINY) == 0
    return out


def test_gen_outputs(corpus):
    traces = load_traces(corpus / "traces.jsonl")
    manifest = rows(corpus / "manifest.csv")
    assert len(traces) == len(manifest) > 16
    assert [t.trace_id for t in traces] == [r["trace_id"] for r in manifest]
    echo = (corpus / "config.txt").read_text().splitlines()
    assert echo[0] == "command = gen" and "subject = fsm-proto" in echo and "seed = 3" in echo


def test_train_outputs(trained):
    for name in ("checkpoint.json", "loss.csv", "report.csv", "verdicts.csv", "split.csv", "config.txt"):
        assert (trained / name).exists()
    [report] = rows(trained / "report.csv")
    assert {"precision", "recall", "specificity", "f1"} <= report.keys()
    assert len(rows(trained / "loss.csv")) == int(report["epochs"])
    assert not list(trained.glob("*.part"))


def test_eval_labelled_and_unlabelled(corpus, trained, tmp_path):
    assert run("eval", "--traces", corpus / "traces.jsonl", "--checkpoint", trained / "checkpoint.json",
               "--out", tmp_path / "a") == 0
    assert (tmp_path / "a" / "report.csv").exists()
    verdicts = rows(tmp_path / "a" / "verdicts.csv")
    assert all(r["verdict"] in ("pass", "fail") for r in verdicts)

    text = (corpus / "traces.jsonl").read_text().splitlines()
    import json
    stripped = [json.dumps({k: v for k, v in json.loads(l).items() if k != "label"}) for l in text]
    (tmp_path / "u.jsonl").write_text("\n".join(stripped) + "\n")
    assert run("eval", "--traces", tmp_path / "u.jsonl", "--checkpoint", trained / "checkpoint.json",
               "--out", tmp_path / "b") == 0
    assert not (tmp_path / "b" / "report.csv").exists()
    assert [r["p_fail"] for r in rows(tmp_path / "b" / "verdicts.csv")] == [r["p_fail"] for r in verdicts]


def test_eval_threshold_override(corpus, trained, tmp_path):
    run("eval", "--traces", corpus / "traces.jsonl", "--checkpoint", trained / "checkpoint.json",
        "--threshold", 1e-9, "--out", tmp_path)
    assert {r["verdict"] for r in rows(tmp_path / "verdicts.csv")} == {"fail"}


def test_sweep_ablate_cross_baseline(corpus, tmp_path):
    traces = corpus / "traces.jsonl"
    assert run("sweep", "--traces", traces, "--fractions", "30,50", "--out", tmp_path / "s", *TINY) == 0
    assert [r["fraction"] for r in rows(tmp_path / "s" / "sweep.csv")] == ["0.3", "0.5"]
    assert run("ablate", "--traces", traces, "--drop", "arguments,globals", "--fraction", 0.5,
               "--out", tmp_path / "a", *TINY) == 0
    assert [r["ablation"] for r in rows(tmp_path / "a" / "ablation.csv")] == ["ARGUMENTS", "GLOBAL_STATE"]
    assert run("cross", "--traces", traces, "--traces-b", traces, "--fraction", 0.5,
               "--out", tmp_path / "c", *TINY) == 0
    assert [r["subject"] for r in rows(tmp_path / "c" / "cross.csv")] == ["fsm-proto"]
    assert run("baseline", "--traces", traces, "--out", tmp_path / "b") == 0
    assert len(rows(tmp_path / "b" / "baseline.csv")) == 15


def test_config_file_precedence(corpus, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny model\nd_v = 4\nd-t = 6\nhidden = 4\nepochs = 1\nfraction = 0.25\n")
    assert run("train", "--config", cfg, "--traces", corpus / "traces.jsonl", "--fraction", 0.5,
               "--out", tmp_path / "o") == 0
    echo = (tmp_path / "o" / "config.txt").read_text().splitlines()
    assert "fraction = 0.5" in echo and "d_v = 4" in echo and "epochs = 1" in echo


def test_echo_reproduces_run(corpus, trained, tmp_path):
    assert run("train", "--config", trained / "config.txt", "--out", tmp_path) == 0
    assert (tmp_path / "checkpoint.json").read_bytes() == (trained / "checkpoint.json").read_bytes()


@pytest.mark.parametrize("text,match", [("nonsense\n", "expected key = value"),
                                        ("colour = red\n", "unknown setting")])
def test_config_file_errors(tmp_path, text, match):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    with pytest.raises(CliError, match=match):
        read_config_file(cfg)


def test_unknown_subject(tmp_path, capsys):
    assert run("gen", "--subject", "nope", "--out", tmp_path) == 2
    assert "unknown subject" in capsys.readouterr().err


def test_malformed_trace_file(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": \n')
    assert run("train", "--traces", bad, "--out", tmp_path / "o") == 2
    assert "line 1" in capsys.readouterr().err


def test_missing_required_flags(tmp_path, capsys):
    assert run("train", "--out", tmp_path) == 2
    assert run("eval", "--traces", "x", "--out", tmp_path) == 2
    assert run("ablate", "--traces", "nowhere.jsonl", "--out", tmp_path) == 2


def test_byte_identical_reruns(tmp_path):
    for tag in ("a", "b"):
        d = tmp_path / tag
        run("gen", "--subject", "refcount-box", "--inputs", 10, "--budget", 200, "--seed", 5, "--out", d)
        run("train", "--traces", d / "traces.jsonl", "--fraction", 0.5, "--seed", 5, "--out", d, *TINY)
        run("eval", "--traces", d / "traces.jsonl", "--checkpoint", d / "checkpoint.json",
            "--out", d / "eval")
    for name in ("traces.jsonl", "manifest.csv", "checkpoint.json", "report.csv", "loss.csv",
                 "eval/verdicts.csv", "eval/report.csv"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name), name


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "traceoracle", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "baseline" in proc.stdout
