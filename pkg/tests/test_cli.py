import json

import numpy as np
import pytest
from click.testing import CliRunner

from subjadapt.cli import main
from subjadapt.dataio import load_dataset
from subjadapt.synthgen import shift_probe

SMALL_GEN = ["--subjects", "3", "--classes", "3", "--per-class", "12", "--channels", "3",
             "--timesteps", "480"]
FAST = ["--epochs", "2", "--deterministic"]


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "d.eegs"
    result = invoke("gen", *SMALL_GEN, "--seed", 1, "--out", path)
    assert result.exit_code == 0, result.output
    return path


def test_gen_defaults_and_repeatability(tmp_path):
    a, b = tmp_path / "a.eegs", tmp_path / "b.eegs"
    assert invoke("gen", "--out", a).exit_code == 0
    assert invoke("gen", "--out", b).exit_code == 0
    assert a.read_bytes() == b.read_bytes()
    header, _ = load_dataset(a)
    assert header.n_samples == 4 * 5 * 30


def test_gen_without_shift_or_noise(tmp_path):
    out = tmp_path / "flat.eegs"
    result = invoke("gen", *SMALL_GEN, "--shift", 0, "--noise", 0, "--out", out)
    assert result.exit_code == 0
    assert shift_probe(load_dataset(out)[1])["mean"] < 1e-5


def test_gen_usage_errors(tmp_path):
    assert invoke("gen", "--shift", -1, "--out", tmp_path / "x").exit_code == 2
    assert invoke("gen", "--out", tmp_path / "missing" / "x.eegs").exit_code == 2
    assert invoke("gen", "--bogus", 1, "--out", tmp_path / "x").exit_code == 2
    assert invoke("gen").exit_code == 2


def test_train_writes_checkpoint_and_metrics(data, tmp_path):
    ckpt, metrics = tmp_path / "m.madp", tmp_path / "m.jsonl"
    result = invoke("train", "--data", data, *FAST, "--out", ckpt, "--metrics", metrics)
    assert result.exit_code == 0, result.output
    assert ckpt.read_bytes()[:4] == b"MADP"
    run = json.loads(metrics.read_text())
    assert run["mode"] == "ours" and run["config"]["lam"] == 1.0
    assert "config" in result.output  # resolved configuration echoed

    again = tmp_path / "again.jsonl"
    invoke("train", "--data", data, *FAST, "--metrics", again)
    assert again.read_bytes() == metrics.read_bytes()

    result = invoke("eval", "--checkpoint", ckpt, "--data", data, "--split", "test")
    assert result.exit_code == 0
    scores = json.loads(result.output.strip().splitlines()[-1])
    assert scores["top1"] == run["test_top1"]


def test_lambda_zero_matches_vanilla(data, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    invoke("train", "--data", data, *FAST, "--mode", "ours", "--lambda", 0, "--metrics", a)
    invoke("train", "--data", data, *FAST, "--mode", "vanilla", "--metrics", b)
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    for key in ("val_top1", "val_top3", "test_top1", "test_top3", "best_epoch"):
        assert ra[key] == rb[key]
    assert [h[:2] for h in ra["history"]] == [h[:2] for h in rb["history"]]


def test_domain_errors_exit_one(data, tmp_path):
    result = invoke("train", "--data", data, *FAST, "--k", 20)
    assert result.exit_code == 1
    assert "CapacityError" in result.output
    assert invoke("train", "--data", tmp_path / "nope.eegs").exit_code == 1
    bad = tmp_path / "bad.eegs"
    bad.write_bytes(b"XXXX" + bytes(40))
    assert invoke("train", "--data", bad).exit_code == 1
    assert invoke("eval", "--checkpoint", bad, "--data", data).exit_code == 1


def test_sweep_k_rows(data, tmp_path):
    out = tmp_path / "sweep.csv"
    result = invoke("sweep-k", "--data", data, "--epochs", 1, "--runs", 1, "--out", out,
                    "--deterministic")
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 5 * 3
    assert {line.split(",")[1] for line in lines[1:]} == {"1", "2", "3", "4", "5"}


def test_ablate_rows(data, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        result = invoke("ablate", "--data", data, "--epochs", 1, "--runs", 2, "--k", 1, "--k", 2,
                        "--out", out, "--deterministic")
        assert result.exit_code == 0, result.output
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert [line.split(",")[:2] for line in lines[1:]] == \
        [["after_f", "1"], ["after_g", "1"], ["after_f", "2"], ["after_g", "2"]]
    assert all(len(line.split(",")) == 8 for line in lines)


def test_report_one_row_per_mode(data, tmp_path):
    files = []
    for seed in range(5):
        for mode in ("vanilla", "ours"):
            path = tmp_path / f"{mode}{seed}.jsonl"
            invoke("train", "--data", data, "--epochs", 1, "--mode", mode, "--seed", seed,
                   "--metrics", path)
            files.append(path)
    result = invoke("report", *files)
    assert result.exit_code == 0
    lines = result.output.strip().splitlines()
    assert lines[0].startswith("mode,k,target,split")
    assert [line.split(",")[0] for line in lines[1:]] == ["vanilla", "ours"]
    assert invoke("report", tmp_path / "none.jsonl").exit_code == 1


def test_import(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(4):
        np.savetxt(tmp_path / f"r{i}.txt", rng.normal(size=(2, 5)))
        rows.append(f"{i % 2} {i // 2} r{i}.txt")
    (tmp_path / "manifest").write_text("\n".join(rows))
    result = invoke("import", "--manifest", tmp_path / "manifest", "--out", tmp_path / "o.eegs")
    assert result.exit_code == 0, result.output
    assert load_dataset(tmp_path / "o.eegs")[0].n_samples == 4
    assert invoke("import", "--manifest", tmp_path / "nope", "--out", tmp_path / "o2").exit_code == 1


def test_gradcheck_command():
    result = invoke("gradcheck", "--trials", 2)
    assert result.exit_code == 0, result.output
    assert result.output.count("PASS") == 3
