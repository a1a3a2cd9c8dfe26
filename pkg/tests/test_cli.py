import json

import pytest

from attrewrite import cli
from attrewrite.model import AttributeRewriter
from attrewrite.train import Trainer

TINY = ["--emb-dim", "8", "--hidden-dim", "8", "--attn-dim", "8", "--batch-size", "4"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    d = tmp_path_factory.mktemp("assets")
    assert cli.main(["synth", "--n", "200", "--n-test", "20", "--seed", "1", "--out", str(d)]) == 0
    assert cli.main(["learn-bpe", "--corpus", str(d / "train.tsv"), "--schema", str(d / "schema.json"),
                     "--merges", "50", "--out", str(d)]) == 0
    return d


def train_args(d, out, *extra):
    return ["train", "--corpus", d / "train.tsv", "--schema", d / "schema.json", "--bpe", d / "bpe.txt",
            "--vocab", d / "vocab.txt", *TINY, *extra, "--out", out]


@pytest.fixture(scope="module")
def trained(assets, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main([str(a) for a in train_args(assets, out, "--steps", "4")]) == 0
    return out / "ckpt_0000004.bin"


def test_synth_writes_corpus_files(assets):
    for name in ("schema.json", "train.tsv", "test.tsv", "bpe.txt", "vocab.txt", "manifest.json"):
        assert (assets / name).is_file()
    assert len((assets / "test.tsv").read_text().splitlines()) == 20


def test_pipeline_is_reproducible(assets, tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = run(train_args(assets, tmp_path / name, "--steps", "3"), capsys)
        assert code == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb and ma["outputs"]["ckpt_0000003.bin"]
    assert (tmp_path / "a" / "log.csv").read_bytes() == (tmp_path / "b" / "log.csv").read_bytes()


def test_rewrite_with_copying_model_returns_input(trained, tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(AttributeRewriter, "rewrite", lambda self, seqs, targets, max_len=None: list(seqs))
    src = tmp_path / "in.txt"
    src.write_text("the food was great .\nawful service .\n")
    code, out, _ = run(["rewrite", "--checkpoint", trained, "--set", "sentiment=negative", "--input", src],
                       capsys)
    assert code == 0
    assert out.splitlines() == ["the food was great .", "awful service ."]


def test_rewrite_writes_manifest(trained, tmp_path, capsys):
    src = tmp_path / "in.txt"
    src.write_text("the food was great .\n")
    code, _, _ = run(["rewrite", "--checkpoint", trained, "--set", "sentiment=positive", "--input", src,
                      "--output", tmp_path / "o.txt", "--out", tmp_path / "m"], capsys)
    assert code == 0 and len((tmp_path / "o.txt").read_text().splitlines()) == 1
    assert json.loads((tmp_path / "m" / "manifest.json").read_text())["command"] == "rewrite"


@pytest.mark.parametrize("setting", ["sentiment=lukewarm", "mood=happy"])
def test_unknown_attribute_exits_2(trained, tmp_path, capsys, setting):
    src = tmp_path / "in.txt"
    src.write_text("ok .\n")
    code, _, err = run(["rewrite", "--checkpoint", trained, "--set", setting, "--input", src], capsys)
    assert code == 2 and error_of(err)["exit"] == 2


def test_asset_mismatch_exits_3(trained, tmp_path, capsys):
    (tmp_path / "bpe.txt").write_text("x y\n")
    code, _, err = run(["rewrite", "--checkpoint", trained, "--set", "sentiment=positive",
                        "--bpe", tmp_path / "bpe.txt", "--input", tmp_path / "bpe.txt"], capsys)
    assert code == 3 and error_of(err)["error"] == "asset_mismatch"


def test_numeric_failure_exits_4_with_last_good(assets, tmp_path, capsys, monkeypatch):
    real = Trainer.train_step

    def flaky(self):
        if self.step == 3:
            raise FloatingPointError("non-finite loss at step 4")
        return real(self)

    monkeypatch.setattr(Trainer, "train_step", flaky)
    code, _, err = run(train_args(assets, tmp_path, "--steps", "6", "--checkpoint-every", "2"), capsys)
    body = error_of(err)
    assert code == 4 and body["last_good"].endswith("ckpt_0000002.bin")


def test_missing_file_exits_1(tmp_path, capsys):
    code, _, err = run(["learn-bpe", "--corpus", tmp_path / "nope.tsv", "--schema", tmp_path / "s.json",
                        "--out", tmp_path], capsys)
    assert code == 1 and error_of(err)["error"] == "missing_file"


def test_eval_bleu_of_identical_files_is_100(assets, tmp_path, capsys):
    f = tmp_path / "c.txt"
    f.write_text("the food was great .\nawful !\n")
    code, _, _ = run(["eval", "--candidates", f, "--references", f, "--out", tmp_path], capsys)
    assert code == 0
    assert (tmp_path / "report.csv").read_text().splitlines() == ["metric,value", "bleu,100.000000"]


def test_eval_and_tradeoff_on_checkpoint(assets, trained, tmp_path, capsys):
    common = ["--train", assets / "train.tsv", "--test", assets / "test.tsv"]
    code, out, _ = run(["eval", "--checkpoint", trained, *common, "--lm-order", "2", "--limit", "5",
                        "--out", tmp_path / "e"], capsys)
    assert code == 0 and "sentiment" in out
    rep = json.loads((tmp_path / "e" / "report.json").read_text())
    assert 0.0 <= rep["scores"]["sentiment"]["accuracy"] <= 1.0
    code, _, _ = run(["tradeoff", "--checkpoint", trained, "--checkpoint", trained, *common, "--limit", "5",
                      "--out", tmp_path / "t"], capsys)
    assert code == 0
    assert (tmp_path / "t" / "tradeoff.csv").read_text().startswith("label,position,accuracy,self_bleu")


def test_probe_needs_discriminator_and_reports_bounded_scores(assets, trained, tmp_path, capsys):
    common = ["--train", assets / "train.tsv", "--test", assets / "test.tsv"]
    code, _, err = run(["probe", "--checkpoint", trained, *common, "--out", tmp_path / "p0"], capsys)
    assert code == 1 and "discriminator" in error_of(err)["message"]
    code, ckpt, _ = run(train_args(assets, tmp_path / "adv", "--steps", "3", "--lambda-adv", "1.0"), capsys)
    assert code == 0
    code, out, _ = run(["probe", "--checkpoint", ckpt.strip(), *common, "--out", tmp_path / "p1"], capsys)
    assert code == 0
    header, row = (tmp_path / "p1" / "probe.csv").read_text().splitlines()
    values = dict(zip(header.split(","), map(float, row.split(","))))
    assert values["lambda_adv"] == 1.0
    assert all(0.0 <= values[k] <= 1.0 for k in header.split(",")[1:])


def test_resume_continues_run(assets, tmp_path, capsys):
    code, _, _ = run(train_args(assets, tmp_path / "full", "--steps", "4", "--checkpoint-every", "2"), capsys)
    assert code == 0
    code, _, _ = run(train_args(assets, tmp_path / "res", "--steps", "4", "--resume",
                                tmp_path / "full" / "ckpt_0000002.bin"), capsys)
    assert code == 0
    assert (tmp_path / "full" / "ckpt_0000004.bin").read_bytes() == (tmp_path / "res" / "ckpt_0000004.bin").read_bytes()
