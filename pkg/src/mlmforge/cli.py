"""Command-line entry point: corpus prep, vocab training, (continued)
pretraining, fine-tuning, evaluation, and report rendering.

Every command works inside a run directory (config.json echo, ckpt/, logs/,
results/) guarded by a lock file, and is reproducible bit-for-bit from the
echoed config. Errors exit nonzero with a single-line, machine-parsable
message prefixed by its category (CONFIG/, DATA/, CKPT/).
"""

import argparse
import json
import os
import sys
from pathlib import Path


from . import benchmarks, corpus, evaluation, tokenizer
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import ModelConfig, init_params
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ForgeError,
)
from .training import TrainConfig, finetune, pretrain, write_log

THREADS_ENV = "MLMFORGE_THREADS"

CONFIG_DEFAULTS: dict[str, object] = {
    "corpus.dedup": True,
    "vocab.target_size": 8192,
    "vocab.min_freq": 2,
    "model.n_layers": 4,
    "model.hidden": 128,
    "model.n_heads": 4,
    "model.ffn": 512,
    "model.max_positions": 128,
    "model.n_segments": 2,
    "model.dropout": 0.1,
    "train.batch_size": 16,
    "train.max_steps": 1000,
    "train.eval_every": 1000,
    "train.lr_encoder": 1e-5,
    "train.lr_head": 3e-5,
    "train.seed": 0,
    "train.masking_mode": "dynamic",
    "train.mask_ratio": 0.15,
    "train.epochs": 10,
    "split.validation_fraction": 0.2,
    "split.seed": 0,
    "split.stratified": True,
    "eval.batch_size": 32,
    "eval.aggregation": "weighted",
}


def _coerce(key: str, raw: object) -> object:
    default = CONFIG_DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if isinstance(raw, str) and raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        raise ConfigError(f"config key {key} expects a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(raw, bool) or not isinstance(raw, (int, str)):
            raise ConfigError(f"config key {key} expects an integer, got {raw!r}")
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key} expects an integer, got {raw!r}") from None
    if isinstance(default, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float, str)):
            raise ConfigError(f"config key {key} expects a number, got {raw!r}")
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key} expects a number, got {raw!r}") from None
    return str(raw)


def build_run_config(config_path: str | None, overrides: list[str]) -> dict:
    """Defaults, then a JSON file of flat dotted keys, then --set overrides.
    Unknown keys are configuration errors."""
    cfg = dict(CONFIG_DEFAULTS)
    if config_path:
        p = Path(config_path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid config JSON ({exc.msg})") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: config must be a flat JSON object")
        for key, value in loaded.items():
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"unknown config key: {key}")
            cfg[key] = _coerce(key, value)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg[key] = _coerce(key, value)
    return cfg


def model_config_from(cfg: dict, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        n_layers=cfg["model.n_layers"],
        hidden=cfg["model.hidden"],
        n_heads=cfg["model.n_heads"],
        ffn=cfg["model.ffn"],
        vocab_size=vocab_size,
        max_positions=cfg["model.max_positions"],
        n_segments=cfg["model.n_segments"],
        dropout=cfg["model.dropout"],
    )


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg["train.batch_size"],
        max_steps=cfg["train.max_steps"],
        eval_every=cfg["train.eval_every"],
        lr_encoder=cfg["train.lr_encoder"],
        lr_head=cfg["train.lr_head"],
        seed=cfg["train.seed"],
        masking_mode=cfg["train.masking_mode"],
        mask_ratio=cfg["train.mask_ratio"],
        epochs=cfg["train.epochs"],
    )


def n_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


class RunDir:
    """Run directory with the fixed layout and a concurrency lock."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._lock = self.path / ".lock"
        self._locked = False

    def __enter__(self) -> "RunDir":
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"run directory {self.path} is locked by another run "
                f"(remove {self._lock} if stale)"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()) + "\n")
        self._locked = True
        return self

    def __exit__(self, *exc):
        if self._locked:
            self._lock.unlink(missing_ok=True)
            self._locked = False
        return False

    def echo_config(self, cfg: dict) -> None:
        with open(self.path / "config.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(cfg, sort_keys=True, indent=2) + "\n")

    def subdir(self, name: str) -> Path:
        d = self.path / name
        d.mkdir(exist_ok=True)
        return d


def _require_file(path, category_hint: str = "input") -> Path:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{category_hint} file not found: {p}")
    return p


def _load_vocab(path) -> tokenizer.Vocab:
    return tokenizer.Vocab.load(_require_file(path, "vocabulary"))


def _encode_corpus(vocab, sentences, max_len):
    return [tokenizer.encode(vocab, s, max_len) for s in sentences]


# --- commands -------------------------------------------------------------------


def cmd_prep_corpus(args, cfg) -> None:
    posts_path = _require_file(args.input, "posts")
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        warnings: list[str] = []
        posts = corpus.ingest(posts_path, warnings=warnings)
        built = corpus.segment(posts, dedup=cfg["corpus.dedup"])
        corpus.write_sentences(built, run.path / "corpus.txt")
        stats = corpus.corpus_stats(built).as_dict()
        stats["n_malformed_lines"] = len(warnings)
        with open(run.path / "stats.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(stats, sort_keys=True, indent=2) + "\n")
        print(f"wrote {stats['n_sentences']} sentences to {run.path / 'corpus.txt'}")


def cmd_build_vocab(args, cfg) -> None:
    sentences = corpus.read_sentences(_require_file(args.corpus, "corpus"))
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        vocab = tokenizer.train_vocab(
            sentences, target_size=cfg["vocab.target_size"], min_freq=cfg["vocab.min_freq"]
        )
        vocab.save(run.path / "vocab.txt")
        print(f"wrote {len(vocab)} tokens to {run.path / 'vocab.txt'} "
              f"(hash {vocab.content_hash()[:12]})")


def _run_pretrain(args, cfg, start_store=None, require_hash=None) -> None:
    vocab = _load_vocab(args.vocab)
    sentences = corpus.read_sentences(_require_file(args.corpus, "corpus"))
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        train_cfg = train_config_from(cfg)
        if start_store is None:
            config = model_config_from(cfg, len(vocab))
            params = init_params(config, train_cfg.seed)
        else:
            params, config = start_store
        corpus_ids = _encode_corpus(vocab, sentences.sentences, config.max_positions)
        val_ids = None
        if args.val_corpus:
            val_sentences = corpus.read_sentences(_require_file(args.val_corpus, "corpus"))
            val_ids = _encode_corpus(vocab, val_sentences.sentences, config.max_positions)
        result = pretrain(corpus_ids, params, config, train_cfg, val_ids)
        ckpt_dir = run.subdir("ckpt")
        logs_dir = run.subdir("logs")
        vocab_hash = vocab.content_hash()
        save_checkpoint(result.params, config, ckpt_dir / "last.ckpt", vocab_hash)
        if result.best_params is not None:
            save_checkpoint(result.best_params, config, ckpt_dir / "best.ckpt", vocab_hash)
        write_log(result.log, logs_dir / "pretrain.jsonl")
        last = result.log[-1]["value"] if result.log else float("nan")
        print(f"trained to step {result.params.step_count}, last train mlm_loss {last:.4f}")


def cmd_pretrain(args, cfg) -> None:
    _run_pretrain(args, cfg)


def cmd_continue_pretrain(args, cfg) -> None:
    vocab = _load_vocab(args.vocab)
    ckpt_path = Path(args.from_ckpt)
    store, manifest = load_checkpoint(ckpt_path, expected_vocab_hash=vocab.content_hash())
    config = ModelConfig.from_dict(manifest["model_config"])
    _run_pretrain(args, cfg, start_store=(store, config))


def cmd_finetune(args, cfg) -> None:
    vocab = _load_vocab(args.vocab)
    params, manifest = load_checkpoint(Path(args.from_ckpt),
                                       expected_vocab_hash=vocab.content_hash())
    config = ModelConfig.from_dict(manifest["model_config"])
    dataset = benchmarks.load_manifest_dataset(_require_file(args.dataset, "dataset manifest"))
    if not dataset.splits.get("validation"):
        spec = benchmarks.SplitSpec(
            validation_fraction=cfg["split.validation_fraction"],
            seed=cfg["split.seed"],
            stratified=cfg["split.stratified"],
        )
        dataset = benchmarks.holdout_split(dataset, spec)
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        train_cfg = train_config_from(cfg)
        result = finetune(dataset, params, config, train_cfg, vocab)
        ckpt_dir = run.subdir("ckpt")
        logs_dir = run.subdir("logs")
        extra = {
            "n_classes": dataset.n_classes(),
            "labels": sorted(dataset.label_map, key=dataset.label_map.get),
            "dataset": dataset.name,
        }
        save_checkpoint(result.params, config, ckpt_dir / "best.ckpt",
                        vocab.content_hash(), extra=extra)
        write_log(result.log, logs_dir / "finetune.jsonl")
        print(f"best validation f1 {result.best_val_f1:.2f} at epoch {result.best_epoch}")


def cmd_evaluate(args, cfg) -> None:
    vocab = _load_vocab(args.vocab)
    params, manifest = load_checkpoint(Path(args.from_ckpt),
                                       expected_vocab_hash=vocab.content_hash())
    config = ModelConfig.from_dict(manifest["model_config"])
    dataset = benchmarks.load_manifest_dataset(_require_file(args.dataset, "dataset manifest"))
    if args.split == "validation" and not dataset.splits.get("validation"):
        spec = benchmarks.SplitSpec(
            validation_fraction=cfg["split.validation_fraction"],
            seed=cfg["split.seed"],
            stratified=cfg["split.stratified"],
        )
        dataset = benchmarks.holdout_split(dataset, spec)
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        table = evaluation.evaluate_model(
            params, config, dataset, args.split, vocab,
            batch_size=cfg["eval.batch_size"], threads=n_threads(),
        )
        record = evaluation.results_record(
            args.model_name, dataset.name, args.split, table,
            aggregation=cfg["eval.aggregation"],
        )
        results_dir = run.subdir("results")
        safe = "".join(c if c.isalnum() or c in "-_." else "_"
                       for c in f"{args.model_name}__{dataset.name}__{args.split}")
        out = results_dir / f"{safe}.json"
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(record, sort_keys=True, indent=2) + "\n")
        print(f"{args.model_name} on {dataset.name}/{args.split}: "
              f"recall {record['recall']:.2f}, f1 {record['f1']:.2f} -> {out}")


def cmd_report(args, cfg) -> None:
    records = []
    for path in args.results:
        p = _require_file(path, "results")
        try:
            rec = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{p}: invalid results JSON ({exc.msg})") from exc
        for key in ("model", "dataset", "aggregation", "recall", "f1"):
            if key not in rec:
                raise DataError(f"{p}: results file missing field {key!r}")
        records.append(rec)
    aggs = {r["aggregation"] for r in records}
    if len(aggs) > 1:
        raise ConfigError(f"results mix aggregations {sorted(aggs)}; report needs one")
    report = evaluation.EvalReport(aggregation=aggs.pop())
    for r in records:
        report.add(r["model"], r["dataset"], r["recall"], r["f1"])
    with RunDir(args.run_dir) as run:
        run.echo_config(cfg)
        md = evaluation.render_report(report, "markdown")
        js = evaluation.render_report(report, "json")
        (run.path / "report.md").write_text(md, encoding="utf-8")
        (run.path / "report.json").write_text(js, encoding="utf-8")
        print(f"wrote {run.path / 'report.md'}")


# --- argument parsing -------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", required=True, help="output directory for this run")
    p.add_argument("--config", help="JSON config file with flat dotted keys")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmforge",
        description="Desk-scale MLM pretraining, domain-adaptive continuation, "
                    "fine-tuning, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep-corpus", help="clean and segment raw posts into sentences")
    p.add_argument("--input", required=True, help="JSONL posts file with a 'body' field")
    _add_common(p)
    p.set_defaults(func=cmd_prep_corpus)

    p = sub.add_parser("build-vocab", help="train a WordPiece vocabulary")
    p.add_argument("--corpus", required=True, help="sentence-per-line corpus file")
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="MLM-pretrain a fresh encoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--val-corpus", help="held-out sentences for periodic evaluation")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("continue-pretrain",
                       help="resume MLM pretraining from a checkpoint on a new corpus")
    p.add_argument("--from", dest="from_ckpt", required=True, metavar="CKPT")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--val-corpus")
    _add_common(p)
    p.set_defaults(func=cmd_continue_pretrain)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on a labeled dataset")
    p.add_argument("--from", dest="from_ckpt", required=True, metavar="CKPT")
    p.add_argument("--dataset", required=True, help="dataset manifest JSON")
    p.add_argument("--vocab", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a fine-tuned checkpoint on a split")
    p.add_argument("--from", dest="from_ckpt", required=True, metavar="CKPT")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.add_argument("--model-name", default="model")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="merge results files into a comparison table")
    p.add_argument("results", nargs="+", help="results JSON files from evaluate")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


_CATEGORIES = (
    (ConfigError, "CONFIG/", 2),
    (DataError, "DATA/", 3),
    (CheckpointError, "CKPT/", 4),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_run_config(args.config, args.overrides)
        args.func(args, cfg)
    except ForgeError as exc:
        msg = " ".join(str(exc).split())
        for klass, prefix, code in _CATEGORIES:
            if isinstance(exc, klass):
                print(f"{prefix}{msg}", file=sys.stderr)
                return code
        print(f"ERROR/{msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"DATA/{' '.join(str(exc).split())}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
