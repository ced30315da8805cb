import json

import numpy as np
import pytest
from click.testing import CliRunner

from prompt_trainer.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def test_end_to_end_workflow(runner, tmp_path):
    corpus = tmp_path / "corpus"
    res = runner.invoke(main, ["make-corpus", str(corpus), "--count", "48"])
    assert res.exit_code == 0, res.output

    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"tokens": 2, "epochs": 1, "batch_size": 16}))
    ckpt = tmp_path / "enc.pt"
    res = runner.invoke(main, [
        "train", "--config", str(cfg), "--corpus", str(corpus),
        "--out", str(ckpt), "--log", str(tmp_path / "log.json")])
    assert res.exit_code == 0, res.output
    assert "backbone unchanged: True" in res.output
    assert ckpt.exists()

    out = tmp_path / "emb.aqde"
    res = runner.invoke(main, [
        "export", "--checkpoint", str(ckpt), "--images", str(corpus),
        "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "exported 48" in res.output

    res = runner.invoke(main, [
        "eval", "--checkpoint", str(ckpt), "--corpus", str(corpus)])
    assert res.exit_code == 0, res.output
    assert "adversarial-pair similarity" in res.output


def test_sweep_emits_rows(runner, tmp_path):
    corpus = tmp_path / "corpus"
    runner.invoke(main, ["make-corpus", str(corpus), "--count", "48"])
    out = tmp_path / "sweep.csv"
    res = runner.invoke(main, [
        "sweep", "--corpus", str(corpus), "--tokens", "0,2",
        "--epochs", "1", "--out", str(out)])
    assert res.exit_code == 0, res.output
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "tokens,benign_pair_similarity,adversarial_pair_similarity"
    assert len(lines) == 3
    ks = [int(l.split(",")[0]) for l in lines[1:]]
    assert ks == [0, 2]
