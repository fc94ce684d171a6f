"""Command-line front end: corpus generation, training, decoding,
evaluation, and the strategy/position/task-subset ablation harness.

Exit codes: 0 ok, 1 usage, 2 runtime, 3 numerical failure. Relative
output paths resolve under $POLYTASK_OUT_ROOT when it is set.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch
import yaml

from .activation import ActivationPosition, ActivationStrategy
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import TokenVocab, build_vocab
from .data import (Corpus, GenConfig, corpus_hash, gen_corpus, load_corpus,
                   save_corpus, SPLITS)
from .decode import beam_decode
from .metrics import MetricReport, evaluate_utterances, write_report
from .model import ModelConfig, TransducerModel
from .tasks import NUM_AUX_TASKS, TaskSet
from .train import NumericalError, RunManifest, TrainConfig, train_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; we reserve that for runtime
        raise UsageError(message)


def resolve_out(path: str | Path) -> Path:
    p = Path(path)
    root = os.environ.get("POLYTASK_OUT_ROOT")
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _load_yaml(path: str | Path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise UsageError(f"config {p} is not valid YAML: {e}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise UsageError(f"config {p} must be a mapping")
    return doc


def _filtered_kwargs(section: dict, cls, *, reject: Sequence[str] = (), where: str = "") -> dict:
    allowed = {f.name for f in dataclasses.fields(cls)} - set(reject)
    unknown = set(section) - allowed
    if unknown:
        raise UsageError(f"unknown {where} config keys: {sorted(unknown)} (allowed: {sorted(allowed)})")
    return dict(section)


def load_gen_config(path: str | Path) -> GenConfig:
    doc = _load_yaml(path)
    kwargs = _filtered_kwargs(doc, GenConfig, where="generation")
    try:
        return GenConfig.from_dict(kwargs)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad generation config: {e}") from None


def load_train_configs(path: str | Path, vocab_size: int) -> tuple[ModelConfig, TrainConfig]:
    doc = _load_yaml(path)
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise UsageError(f"unknown top-level config sections: {sorted(unknown)} (expected model/train)")
    model_kwargs = _filtered_kwargs(doc.get("model", {}) or {}, ModelConfig,
                                    reject=("vocab_size",), where="model")
    train_kwargs = _filtered_kwargs(doc.get("train", {}) or {}, TrainConfig, where="train")
    if "feature_strides" in model_kwargs:
        model_kwargs["feature_strides"] = tuple(model_kwargs["feature_strides"])
    try:
        return ModelConfig(vocab_size=vocab_size, **model_kwargs), TrainConfig(**train_kwargs)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad train config: {e}") from None


def parse_tasks(spec: Optional[str], num_aux: int) -> TaskSet:
    """Comma-separated task names -> TaskSet; ASR is implicit."""
    if not spec:
        return TaskSet.all_tasks(num_aux)
    try:
        tasks = TaskSet.from_names(n for n in spec.split(",") if n.strip())
        tasks.combination_index(num_aux)  # reject tasks the model was not built for
    except ValueError as e:
        raise UsageError(str(e)) from None
    return tasks


def _load_corpus(path: str | Path) -> Corpus:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {p}")
    return load_corpus(p)


def _split_utts(corpus: Corpus, split: str):
    utts = corpus.by_split(split)
    if not utts:
        raise ValueError(f"split {split!r} is empty")
    return utts


def decode_utterances(model: TransducerModel, utts, tasks: TaskSet, beam: int,
                      max_symbols_per_frame: int = 8) -> list[list[int]]:
    out = []
    for utt in utts:
        enc = model.encode(torch.from_numpy(utt.frames), tasks)
        hyps = beam_decode(enc, model, beam, max_symbols_per_frame)
        out.append(list(hyps[0].tokens) if hyps else [])
    return out


def write_hypotheses(path: Path, utts, token_seqs: Sequence[Sequence[int]], vocab: TokenVocab) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt, toks in zip(utts, token_seqs):
            f.write(f"{utt.utt_id}\t{' '.join(vocab.to_strings(toks))}\n")


def read_hypotheses(path: Path, vocab: TokenVocab) -> dict[str, list[int]]:
    if not path.is_file():
        raise FileNotFoundError(f"hypothesis file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise ValueError(f"hypothesis file {path} is empty")
    hyps: dict[str, list[int]] = {}
    for ln, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        utt_id, _, rest = line.partition("\t")
        try:
            hyps[utt_id] = vocab.to_ids(rest.split())
        except KeyError as e:
            raise ValueError(f"{path}:{ln}: unknown token {e.args[0]!r}") from None
    return hyps


def cmd_gen_data(args) -> int:
    cfg = load_gen_config(args.config)
    out = resolve_out(args.out)
    corpus = gen_corpus(cfg)
    save_corpus(corpus, out)
    digest = corpus_hash(out)
    (out / "gen_manifest.json").write_text(
        json.dumps({"corpus_hash": digest, "gen_config": cfg.to_dict()}, indent=2) + "\n",
        encoding="utf-8")
    print(f"wrote {len(corpus)} utterances to {out} (hash {digest[:16]})")
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = _load_corpus(args.corpus)
    vocab = build_vocab(corpus.codec)
    model_cfg, train_cfg = load_train_configs(args.config, vocab.num_labels)
    out = resolve_out(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, manifest = train_model(model_cfg, train_cfg, corpus,
                                  corpus_hash=corpus_hash(args.corpus),
                                  include_partial=train_cfg.use_partial, log=print)
    save_checkpoint(out / "checkpoint.bin", model)
    manifest.save(out / "run_manifest.json")
    print(f"best epoch {manifest.best_epoch}; checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_decode(args) -> int:
    if args.beam < 1:
        raise UsageError("--beam must be >= 1")
    model = load_checkpoint(args.checkpoint)
    corpus = _load_corpus(args.corpus)
    vocab = build_vocab(corpus.codec)
    tasks = parse_tasks(args.tasks, model.cfg.num_aux_tasks)
    utts = _split_utts(corpus, args.split)
    token_seqs = decode_utterances(model, utts, tasks, args.beam)
    out = resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_hypotheses(out, utts, token_seqs, vocab)
    print(f"decoded {len(utts)} utterances ({'+'.join(tasks.names())}, beam {args.beam}) -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    corpus = _load_corpus(args.corpus)
    vocab = build_vocab(corpus.codec)
    utts = _split_utts(corpus, args.split)
    active = parse_tasks(args.tasks, NUM_AUX_TASKS)
    hyp_map = read_hypotheses(resolve_out(args.hyp), vocab)
    missing = [u.utt_id for u in utts if u.utt_id not in hyp_map]
    if missing:
        raise ValueError(f"hypotheses missing for {len(missing)} utterances (first: {missing[0]})")
    report = evaluate_utterances(utts, [hyp_map[u.utt_id] for u in utts], active, vocab)
    print(report.format_table())
    prefix = resolve_out(args.out_prefix) if args.out_prefix else resolve_out(args.hyp).with_suffix("")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, Path(f"{prefix}.report.txt"), Path(f"{prefix}.metrics.kv"))
    return EXIT_OK


def _grid():
    for strategy in ActivationStrategy:
        for position in ActivationPosition:
            yield strategy, position


def _fmt(value: Optional[float], scale: float = 1.0) -> str:
    return "--" if value is None else f"{value * scale:.2f}"


def format_grid_table(rows: list[dict]) -> str:
    header = f"{'configuration':<58} {'WER%':>7} {'SCD F1':>7} {'EP F1':>7} {'NER F1':>7} {'LID%':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        name = f"{r['strategy']} @ {r['position']}"
        lines.append(f"{name:<58} {_fmt(r['wer'], 100):>7} {_fmt(r['scd_f1']):>7} "
                     f"{_fmt(r['endpoint_f1']):>7} {_fmt(r['ner_f1']):>7} {_fmt(r['lid_acc'], 100):>7}")
    return "\n".join(lines)


def format_subset_table(strategy: str, position: str, rows: list[dict], num_aux: int) -> str:
    title = f"task-subset sweep: {strategy} @ {position}"
    header = f"{'activated tasks':<28} {'WER%':>7} {'SCD F1':>7} {'EP F1':>7} {'NER F1':>7} {'LID%':>7} {'ITT':>5}"
    lines = [title, "=" * len(header), header, "-" * len(header)]
    for n_aux in range(num_aux + 1):
        group = [r for r in rows if r["n_aux"] == n_aux]
        if not group:
            continue
        label = "primary task only" if n_aux == 0 else f"{n_aux} auxiliary task{'s' if n_aux > 1 else ''}"
        lines.append(f"[{label}]")
        for r in group:
            itt = "--" if n_aux == num_aux else str(r["itt"])
            lines.append(f"  {r['tasks']:<26} {_fmt(r['wer'], 100):>7} {_fmt(r['scd_f1']):>7} "
                         f"{_fmt(r['endpoint_f1']):>7} {_fmt(r['ner_f1']):>7} {_fmt(r['lid_acc'], 100):>7} {itt:>5}")
    return "\n".join(lines)


def _report_row(report: MetricReport) -> dict:
    return {
        "wer": report.wer,
        "scd_f1": report.scd.f1 if report.scd else None,
        "endpoint_f1": report.endpoint.f1 if report.endpoint else None,
        "ner_f1": report.ner.f1 if report.ner else None,
        "lid_acc": report.lid_acc,
        "itt": report.itt,
    }


def cmd_ablate(args) -> int:
    corpus = _load_corpus(args.corpus)
    vocab = build_vocab(corpus.codec)
    model_cfg, train_cfg = load_train_configs(args.config, vocab.num_labels)
    num_aux = model_cfg.num_aux_tasks
    out = resolve_out(args.out)
    planned = list(_grid())
    if args.dry_run:
        print(f"planned runs ({len(planned)} train jobs + per-strategy {1 << num_aux}-subset sweeps):")
        for s, p in planned:
            print(f"  train+eval {s.value} @ {p.value}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    digest = corpus_hash(args.corpus)
    test_utts = _split_utts(corpus, "test")
    grid_rows = []
    best_by_strategy: dict[str, tuple[float, str, Path]] = {}
    for strategy, position in planned:
        run_name = f"{strategy.value}__{position.value}"
        run_dir = out / "runs" / run_name
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = dataclasses.replace(model_cfg, strategy=strategy, position=position)
        print(f"== training {run_name}")
        model, manifest = train_model(cfg, train_cfg, corpus, corpus_hash=digest,
                                      include_partial=train_cfg.use_partial, log=print)
        save_checkpoint(run_dir / "checkpoint.bin", model)
        manifest.save(run_dir / "run_manifest.json")
        all_tasks = TaskSet.all_tasks(num_aux)
        token_seqs = decode_utterances(model, test_utts, all_tasks, args.beam)
        write_hypotheses(run_dir / "hyps_test.txt", test_utts, token_seqs, vocab)
        report = evaluate_utterances(test_utts, token_seqs, all_tasks, vocab)
        write_report(report, run_dir / "test.report.txt", run_dir / "test.metrics.kv")
        grid_rows.append({"strategy": strategy.value, "position": position.value,
                          **_report_row(report)})
        best_dev = min((e.dev_wer for e in manifest.epochs if e.dev_wer is not None),
                       default=float("inf"))
        cur = best_by_strategy.get(strategy.value)
        if cur is None or best_dev < cur[0]:
            best_by_strategy[strategy.value] = (best_dev, position.value, run_dir / "checkpoint.bin")
    grid_text = format_grid_table(grid_rows)
    (out / "grid_report.txt").write_text(grid_text + "\n", encoding="utf-8")
    print(grid_text)
    subset_tables = {}
    for strategy, (_, position, ckpt_path) in sorted(best_by_strategy.items()):
        model = load_checkpoint(ckpt_path)
        rows = []
        for idx in range(1 << num_aux):
            tasks = TaskSet.from_combination_index(idx, num_aux)
            token_seqs = decode_utterances(model, test_utts, tasks, args.beam)
            report = evaluate_utterances(test_utts, token_seqs, tasks, vocab)
            rows.append({"tasks": "+".join(tasks.names()), "n_aux": len(tasks.aux()),
                         "combination_index": idx, **_report_row(report)})
        rows.sort(key=lambda r: (r["n_aux"], r["combination_index"]))
        table = format_subset_table(strategy, position, rows, num_aux)
        (out / f"subsets_{strategy}.txt").write_text(table + "\n", encoding="utf-8")
        print(table)
        subset_tables[strategy] = {"position": position, "rows": rows}
    (out / "ablation_summary.json").write_text(
        json.dumps({"grid": grid_rows, "subsets": subset_tables}, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polytask",
                     description="Token-based multitask speech transducer with dynamic task activation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic mixed-annotation corpus")
    p.add_argument("--config", required=True, help="generation config (YAML)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a transducer on a corpus")
    p.add_argument("--config", required=True, help="model/train config (YAML)")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a corpus split with chosen tasks active")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--tasks", default=None, help="comma-separated task names; ASR implicit; default all")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--out", required=True, help="hypothesis file (id TAB tokens)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score a hypothesis file against a corpus split")
    p.add_argument("--hyp", required=True, help="hypothesis file from decode")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--tasks", default=None, help="tasks to score; default all")
    p.add_argument("--out-prefix", default=None, help="report file prefix (default: next to --hyp)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="strategy x position grid plus task-subset sweeps")
    p.add_argument("--config", required=True, help="model/train config (YAML)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--dry-run", action="store_true", help="list planned runs without training")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
