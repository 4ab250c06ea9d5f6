import json

import numpy as np
import pytest

from mlmforge.benchmarks import make_fixture
from mlmforge.cli import build_run_config, main
from mlmforge.errors import ConfigError


def run(*argv):
    return main(list(argv))


def write_posts(path, n=24):
    rng = np.random.default_rng(0)
    words = ["rain", "sleep", "quiet", "tired", "morning", "night", "heavy", "slow"]
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            text = " ".join(words[int(j)] for j in rng.integers(0, 8, size=6)) + "."
            fh.write(json.dumps({"id": str(i), "subforum": "toy", "body": text}) + "\n")


FAST_TRAIN = [
    "--set", "train.max_steps=8",
    "--set", "train.batch_size=8",
    "--set", "train.lr_encoder=0.001",
    "--set", "train.eval_every=4",
    "--set", "model.n_layers=1",
    "--set", "model.hidden=16",
    "--set", "model.n_heads=2",
    "--set", "model.ffn=32",
    "--set", "model.max_positions=32",
    "--set", "model.dropout=0.0",
    "--set", "vocab.target_size=128",
    "--set", "vocab.min_freq=1",
]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """prep-corpus -> build-vocab -> pretrain, shared by the tests below."""
    root = tmp_path_factory.mktemp("pipeline")
    posts = root / "posts.jsonl"
    write_posts(posts)
    assert run("prep-corpus", "--input", str(posts), "--run-dir", str(root / "prep")) == 0
    corpus = root / "prep" / "corpus.txt"
    assert run("build-vocab", "--corpus", str(corpus), "--run-dir", str(root / "vocab"),
               "--set", "vocab.target_size=128", "--set", "vocab.min_freq=1") == 0
    vocab = root / "vocab" / "vocab.txt"
    assert run("pretrain", "--corpus", str(corpus), "--vocab", str(vocab),
               "--val-corpus", str(corpus), "--run-dir", str(root / "pt"),
               *FAST_TRAIN) == 0
    return root, corpus, vocab


class TestPipeline:
    def test_prep_outputs(self, pipeline):
        root, corpus, _ = pipeline
        assert corpus.is_file()
        stats = json.loads((root / "prep" / "stats.json").read_text())
        assert stats["n_sentences"] > 0
        assert (root / "prep" / "config.json").is_file()

    def test_pretrain_outputs(self, pipeline):
        root, _, _ = pipeline
        assert (root / "pt" / "ckpt" / "last.ckpt").is_file()
        assert (root / "pt" / "ckpt" / "best.ckpt").is_file()
        log = (root / "pt" / "logs" / "pretrain.jsonl").read_text().splitlines()
        assert len(log) == 8 + 2  # train records + validation at steps 4, 8

    def test_continue_then_finetune_then_evaluate_then_report(self, pipeline, tmp_path):
        root, corpus, vocab = pipeline
        last = root / "pt" / "ckpt" / "last.ckpt"
        assert run("continue-pretrain", "--from", str(last), "--corpus", str(corpus),
                   "--vocab", str(vocab), "--run-dir", str(tmp_path / "ct"),
                   *FAST_TRAIN, "--set", "train.max_steps=12") == 0

        manifest = make_fixture("Dreaddit", tmp_path / "data", seed=0)
        ckpt = tmp_path / "ct" / "ckpt" / "last.ckpt"
        assert run("finetune", "--from", str(ckpt), "--dataset", str(manifest),
                   "--vocab", str(vocab), "--run-dir", str(tmp_path / "ft"),
                   *FAST_TRAIN, "--set", "train.epochs=1",
                   "--set", "train.lr_head=0.003") == 0
        ft_ckpt = tmp_path / "ft" / "ckpt" / "best.ckpt"
        assert ft_ckpt.is_file()

        assert run("evaluate", "--from", str(ft_ckpt), "--dataset", str(manifest),
                   "--vocab", str(vocab), "--split", "test",
                   "--model-name", "toy-model", "--run-dir", str(tmp_path / "ev"),
                   *FAST_TRAIN) == 0
        results = list((tmp_path / "ev" / "results").glob("*.json"))
        assert len(results) == 1

        assert run("report", str(results[0]), "--run-dir", str(tmp_path / "rep")) == 0
        md = (tmp_path / "rep" / "report.md").read_text()
        assert "toy-model" in md
        assert "**" in md
        assert (tmp_path / "rep" / "report.json").is_file()

    def test_rerun_is_bitwise_identical(self, pipeline, tmp_path):
        root, corpus, vocab = pipeline
        for d in ("r1", "r2"):
            assert run("pretrain", "--corpus", str(corpus), "--vocab", str(vocab),
                       "--val-corpus", str(corpus), "--run-dir", str(tmp_path / d),
                       *FAST_TRAIN) == 0
        for rel in ("ckpt/last.ckpt", "ckpt/best.ckpt", "logs/pretrain.jsonl",
                    "config.json"):
            a = (tmp_path / "r1" / rel).read_bytes()
            b = (tmp_path / "r2" / rel).read_bytes()
            assert a == b, rel


class TestErrors:
    def test_vocab_hash_mismatch_is_ckpt_error(self, pipeline, tmp_path, capsys):
        root, corpus, vocab = pipeline
        other_vocab = tmp_path / "other.txt"
        other_vocab.write_text(vocab.read_text() + "extraextra\n", encoding="utf-8")
        code = run("continue-pretrain", "--from", str(root / "pt" / "ckpt" / "last.ckpt"),
                   "--corpus", str(corpus), "--vocab", str(other_vocab),
                   "--run-dir", str(tmp_path / "bad"), *FAST_TRAIN,
                   "--set", "train.max_steps=9")
        assert code != 0
        err = capsys.readouterr().err
        assert err.startswith("CKPT/")
        assert "\n" not in err.strip()

    def test_unknown_config_key_is_config_error(self, tmp_path, capsys):
        posts = tmp_path / "p.jsonl"
        write_posts(posts, n=3)
        code = run("prep-corpus", "--input", str(posts),
                   "--run-dir", str(tmp_path / "run"), "--set", "corpus.bogus=1")
        assert code != 0
        assert capsys.readouterr().err.startswith("CONFIG/")

    def test_unknown_key_in_config_file(self, tmp_path, capsys):
        posts = tmp_path / "p.jsonl"
        write_posts(posts, n=3)
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"no.such.key": 1}', encoding="utf-8")
        code = run("prep-corpus", "--input", str(posts),
                   "--run-dir", str(tmp_path / "run"), "--config", str(cfg))
        assert code != 0
        assert capsys.readouterr().err.startswith("CONFIG/")

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        code = run("prep-corpus", "--input", str(tmp_path / "absent.jsonl"),
                   "--run-dir", str(tmp_path / "run"))
        assert code != 0
        assert capsys.readouterr().err.startswith("DATA/")

    def test_locked_run_dir_rejected(self, tmp_path, capsys):
        posts = tmp_path / "p.jsonl"
        write_posts(posts, n=3)
        run_dir = tmp_path / "locked"
        run_dir.mkdir()
        (run_dir / ".lock").write_text("12345\n")
        code = run("prep-corpus", "--input", str(posts), "--run-dir", str(run_dir))
        assert code != 0
        assert capsys.readouterr().err.startswith("CONFIG/")

    def test_mixed_aggregation_report_rejected(self, tmp_path, capsys):
        r1 = {"model": "a", "dataset": "d", "split": "test", "aggregation": "weighted",
              "recall": 50.0, "f1": 50.0}
        r2 = dict(r1, model="b", aggregation="macro")
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        p1.write_text(json.dumps(r1)), p2.write_text(json.dumps(r2))
        code = run("report", str(p1), str(p2), "--run-dir", str(tmp_path / "rep"))
        assert code != 0
        assert capsys.readouterr().err.startswith("CONFIG/")


class TestThreadsEnv:
    def test_invalid_value_is_config_error(self, monkeypatch):
        from mlmforge.cli import n_threads
        monkeypatch.setenv("MLMFORGE_THREADS", "many")
        with pytest.raises(ConfigError):
            n_threads()
        monkeypatch.setenv("MLMFORGE_THREADS", "0")
        with pytest.raises(ConfigError):
            n_threads()

    def test_valid_value(self, monkeypatch):
        from mlmforge.cli import n_threads
        monkeypatch.setenv("MLMFORGE_THREADS", "4")
        assert n_threads() == 4
        monkeypatch.delenv("MLMFORGE_THREADS")
        assert n_threads() == 1


class TestRunConfig:
    def test_defaults_then_file_then_overrides(self, tmp_path):
        cfg_file = tmp_path / "c.json"
        cfg_file.write_text(json.dumps({"train.max_steps": 50}), encoding="utf-8")
        cfg = build_run_config(str(cfg_file), ["train.max_steps=60", "corpus.dedup=false"])
        assert cfg["train.max_steps"] == 60
        assert cfg["corpus.dedup"] is False
        assert cfg["train.lr_head"] == 3e-5

    def test_type_coercion_errors(self):
        with pytest.raises(ConfigError):
            build_run_config(None, ["train.max_steps=soon"])
        with pytest.raises(ConfigError):
            build_run_config(None, ["corpus.dedup=7"])

    def test_echoed_config_reproduces_run(self, pipeline, tmp_path):
        root, corpus, vocab = pipeline
        echoed = root / "pt" / "config.json"
        assert run("pretrain", "--corpus", str(corpus), "--vocab", str(vocab),
                   "--val-corpus", str(corpus), "--run-dir", str(tmp_path / "again"),
                   "--config", str(echoed)) == 0
        a = (root / "pt" / "ckpt" / "last.ckpt").read_bytes()
        b = (tmp_path / "again" / "ckpt" / "last.ckpt").read_bytes()
        assert a == b
