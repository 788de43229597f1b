# SPDX-License-Identifier: Apache-2.0
import json
import math

import pytest

import prefixbridge as pb


def test_version():
    assert pb.__version__ == "0.1.0"
    code, out, _ = pb.run(["--version"])
    assert code == 0
    assert "0.1.0" in out


def test_usage_error_exit_code():
    code, _, err = pb.run(["bogus"])
    assert code == 2
    assert err


def test_corpus_bleu_identical_and_brevity():
    same = pb.corpus_bleu([("a b c d", "a b c d")])
    assert same["bleu4"] == pytest.approx(1.0)
    short = pb.corpus_bleu([("a b c", "a b c d")])
    assert short["bp"] == pytest.approx(math.exp(1 - 4 / 3), abs=1e-9)
    assert short["bleu4"] == 0.0
    with pytest.raises(pb.InvalidInputError):
        pb.corpus_bleu([])


def test_text_helpers():
    assert pb.fnv1a64("") == 0xCBF29CE484222325
    assert pb.preprocess_report("  Heart SIZE, is normal.\n") == "heart size is normal."
    assert pb.split_tokens("heart size  is normal.") == ["heart", "size", "is", "normal."]
    with pytest.raises(pb.Error):
        pb.preprocess_report("!!!")
    assert len(pb.finding_names()) > 0


def test_pipeline_and_model(tmp_path):
    small = [
        "--lm.d_model=16", "--lm.n_layers=1", "--lm.n_heads=2", "--lm.max_seq=32",
        "--mapper.d_model=16", "--mapper.n_heads=2", "--mapper.clip_dim=16",
        "--pretrain.batch_size=8", "--train.batch_size=8",
    ]
    data, lm, model = (str(tmp_path / n) for n in ("data", "lm", "model"))
    assert pb.run(["synth", "--out", data, "--train", "24", "--val", "4", "--test", "4", *small])[0] == 0
    assert pb.run(["pretrain-lm", "--data", data, "--out", lm, "--epochs", "1", *small])[0] == 0
    assert pb.run(["train", "--data", data, "--lm", lm, "--out", model, "--train.epochs=1", *small])[0] == 0

    m = pb.Model.load(str(tmp_path / "model" / "model.ckpt"))
    assert m.clip_dim == 16
    assert 0 < m.trainable_params("prefix") < m.trainable_params("finetune")

    with open(tmp_path / "data" / "test.jsonl") as f:
        record = json.loads(f.readline())
    text, score = m.generate(record["embedding"], beam=2, max_len=20)
    assert isinstance(text, str)
    assert score <= 0.0
    with pytest.raises(pb.DimensionError):
        m.generate([0.1, 0.2], max_len=20)
    with pytest.raises(pb.FormatError):
        (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
        pb.Model.load(str(tmp_path / "junk.ckpt"))
