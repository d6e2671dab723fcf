import math
import random

import pytest

import mmnsum


def test_text_pipeline():
    assert mmnsum.normalize_text("Visit r/Python NOW 42") == mmnsum.normalize_text(mmnsum.normalize_text("Visit r/Python NOW 42"))
    assert mmnsum.tokenize("don't stop") == ["do", "n't", "stop"]
    assert mmnsum.trim_summary_prefix("tifu by eating soup") == "eating soup"


def test_vocabulary_round_trip(tmp_path):
    vocab = mmnsum.Vocabulary.build([["a", "b", "a"], ["c", "a"]])
    assert len(vocab) == 4 + 3
    ids = vocab.encode(["a", "c", "zzz"])
    assert ids[2] == mmnsum.UNK_ID
    assert vocab.decode(ids[:2]) == ["a", "c"]
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert mmnsum.Vocabulary.load(path).tokens() == vocab.tokens()


def brute_lcs(a, b):
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        it = iter(b)
        if all(tok in it for tok in sub):
            best = max(best, len(sub))
    return best


def test_rouge_matches_brute_force():
    rng = random.Random(5)
    for _ in range(50):
        a = [rng.choice("abcd") for _ in range(rng.randint(1, 8))]
        b = [rng.choice("abcd") for _ in range(rng.randint(1, 8))]
        lcs = brute_lcs(a, b)
        p, r = lcs / len(a), lcs / len(b)
        f = 0.0 if lcs == 0 else 2 * p * r / (p + r)
        assert mmnsum.rouge_l(a, b)["f1"] == pytest.approx(f, abs=1e-12)
        overlap = sum(min(a.count(t), b.count(t)) for t in set(a))
        p1, r1 = overlap / len(a), overlap / len(b)
        f1 = 0.0 if overlap == 0 else 2 * p1 * r1 / (p1 + r1)
        assert mmnsum.rouge_n(a, b, 1)["f1"] == pytest.approx(f1, abs=1e-12)


def test_novel_ratio_and_report():
    assert mmnsum.novel_ngram_ratio(["a", "b"], ["a", "z"], 1) == 0.5
    with pytest.raises(ValueError):
        mmnsum.novel_ngram_ratio(["a"], ["a"], 2)
    report = mmnsum.bias_report([(["x", "y", "."], ["x", "y"])], abstractive_rl=10.0, bins=4)
    assert report["documents"] == 1
    assert "abstractive_over_lead" in report
    assert "abstractive_over_lead" not in mmnsum.bias_report([(["x", "."], ["x"])])


def test_constants():
    assert [mmnsum.lr_schedule(e) for e in (0, 3, 4, 7, 100)] == pytest.approx([1e-3, 1e-3, 1e-4, 1e-4, 1e-4])
    q = mmnsum.smoothed_target(0, 0.1, 64)
    assert sum(q) == pytest.approx(1 - 0.1 / 64, abs=1e-9)
    assert mmnsum.profile("tifu-short")["model"]["label_smoothing"] == 0.1
    assert mmnsum.profile("xsum")["train"]["grad_clip"] == 0.8
    cfg = mmnsum.profile("tifu-long")["model"]
    assert mmnsum.receptive_field(cfg, 8) == 511
    assert mmnsum.label_smoothing_floor(0.0, 10) == 0.0


def test_model_train_decode_and_checkpoint(tmp_path):
    config = dict(mmnsum.profile("tifu-short")["model"], d_emb=16, vocab_size=20, encoder_layers=3,
                  decoder_layers=2, memory_layers=[1, 3], max_document_len=8)
    model = mmnsum.Model(config, seed=3)
    pairs = [([5, 6, 7, 8], [9, 10, mmnsum.EOS_ID]), ([11, 12, 13], [14, mmnsum.EOS_ID])]
    losses = model.train(pairs, {"lr_init": 0.003, "lr_floor": 0.003, "batch_size": 1, "grad_clip": 1.0, "max_epochs": 60})
    assert losses[-1] < losses[0]
    assert all(math.isfinite(v) for v in losses)
    assert model.greedy_decode([5, 6, 7, 8], 5) == [9, 10]
    assert model.perplexity(pairs) >= 1.0

    path = tmp_path / "m.ckpt"
    model.save(path)
    again = mmnsum.Model.load(path)
    assert again.config == model.config
    assert again.greedy_decode([11, 12, 13], 5) == model.greedy_decode([11, 12, 13], 5)
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(mmnsum.CheckpointError):
        mmnsum.Model.load(tmp_path / "bad.ckpt")


def test_overfit_smoke():
    result = mmnsum.overfit_smoke()
    assert result["passed"]
    assert result["exact"] >= 15
    assert result["final_loss"] <= result["loss_target"]
    assert result["parameters"] <= 500_000


def test_gradcheck_and_causality():
    rows = mmnsum.gradcheck_suite()
    assert rows and all(r["passed"] for r in rows), [r for r in rows if not r["passed"]]
    assert mmnsum.causality_suite(10)["passed"]


def test_cli_entry(tmp_path):
    code, out, err = mmnsum.run_cli(["--version"])
    assert code == 0 and "0.1.0" in out
    code, _, err = mmnsum.run_cli(["audit", str(tmp_path / "missing.jsonl")])
    assert code == 2
