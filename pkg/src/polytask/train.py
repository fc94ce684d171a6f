"""Training loop: Adam with warmup + inverse-sqrt decay, per-epoch dev
WER tracking, best-epoch selection by macro dev WER (ties -> earliest)."""
from __future__ import annotations

import json
import math
import subprocess
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__
from .codec import TokenVocab, build_vocab
from .data import (Batch, CombinationPolicy, Corpus, make_batch,
                   SPLIT_DEV, SPLIT_TRAIN_FULL, SPLIT_TRAIN_PARTIAL)
from .decode import greedy_decode
from .metrics import evaluate_utterances
from .model import ModelConfig, TransducerModel
from .rnnt import rnnt_loss_batch
from .tasks import TaskSet


class NumericalError(RuntimeError):
    """Loss or gradients stopped being finite."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 100
    grad_clip: float = 5.0
    seed: int = 0
    policy: CombinationPolicy = CombinationPolicy.UNIFORM_RANDOM_SUBSET
    use_partial: bool = True
    partial_mix_weight: float = 1.0  # sampling weight of train-partial relative to train-full
    eval_every: int = 1
    max_symbols_per_frame: int = 8

    def __post_init__(self) -> None:
        self.policy = CombinationPolicy(self.policy)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.partial_mix_weight <= 0:
            raise ValueError("partial_mix_weight must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["policy"] = self.policy.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_wer: Optional[float]


@dataclass
class RunManifest:
    train_config: dict
    model_config: dict
    corpus_hash: str
    source_rev: str
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "train_config": self.train_config,
            "model_config": self.model_config,
            "corpus_hash": self.corpus_hash,
            "source_rev": self.source_rev,
            "epochs": [asdict(e) for e in self.epochs],
            "best_epoch": self.best_epoch,
            "wall_seconds": self.wall_seconds,
        }

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "RunManifest":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        m = cls(train_config=d["train_config"], model_config=d["model_config"],
                corpus_hash=d["corpus_hash"], source_rev=d["source_rev"],
                best_epoch=d["best_epoch"], wall_seconds=d.get("wall_seconds", 0.0))
        m.epochs = [EpochStats(**e) for e in d["epochs"]]
        return m


def source_revision() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0:
            return rev.stdout.strip()
    except OSError:
        pass
    return f"polytask-{__version__}"


def lr_at(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup to base_lr, then inverse-sqrt decay."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


def dev_wer_macro(model: TransducerModel, dev_utts: Sequence, vocab: TokenVocab,
                  max_symbols_per_frame: int = 8) -> float:
    """Greedy-decode the dev split with all tasks active; macro WER over languages."""
    model.eval()
    active = TaskSet.all_tasks(model.cfg.num_aux_tasks)
    hyps = []
    for utt in dev_utts:
        enc = model.encode(torch.from_numpy(utt.frames), active)
        hyps.append(greedy_decode(enc, model, max_symbols_per_frame))
    report = evaluate_utterances(dev_utts, hyps, active, vocab)
    model.train()
    return report.wer_macro


def _epoch_order(n_full: int, n_partial: int, weight: float,
                 rng: np.random.Generator) -> np.ndarray:
    n = n_full + n_partial
    if weight == 1.0:
        return rng.permutation(n)
    w = np.concatenate([np.ones(n_full), np.full(n_partial, weight)])
    return rng.choice(n, size=n, replace=False, p=w / w.sum())


def train_model(model_cfg: ModelConfig, train_cfg: TrainConfig, corpus: Corpus,
                corpus_hash: str = "", include_partial: bool = True,
                log=None) -> tuple[TransducerModel, RunManifest]:
    """Train on the train splits, select the best epoch by macro dev WER.

    Returns the model restored to its best-epoch weights. Raises
    NumericalError as soon as a non-finite loss appears.
    """
    start = time.monotonic()
    vocab = build_vocab(corpus.codec)
    if model_cfg.vocab_size != vocab.num_labels:
        raise ValueError(f"model vocab_size {model_cfg.vocab_size} != corpus vocabulary {vocab.num_labels}")
    model = TransducerModel(model_cfg)
    model.train()
    full_idx = corpus.indices_of(SPLIT_TRAIN_FULL)
    partial_idx = corpus.indices_of(SPLIT_TRAIN_PARTIAL) if include_partial else []
    train_idx = np.array(full_idx + partial_idx, dtype=np.int64)
    if len(train_idx) == 0:
        raise ValueError("corpus has no training utterances")
    dev_utts = corpus.by_split(SPLIT_DEV)
    policy_rng = np.random.default_rng([train_cfg.seed, 11])
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr,
                           betas=(train_cfg.beta1, train_cfg.beta2), eps=train_cfg.adam_eps)
    manifest = RunManifest(train_config=train_cfg.to_dict(), model_config=model_cfg.to_dict(),
                           corpus_hash=corpus_hash, source_rev=source_revision())
    best = (math.inf, -1)
    best_state: Optional[dict] = None
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order_rng = np.random.default_rng([train_cfg.seed, 17, epoch])
        order = train_idx[_epoch_order(len(full_idx), len(partial_idx),
                                       train_cfg.partial_mix_weight, order_rng)]
        loss_sum, n_seen = 0.0, 0
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size].tolist()
            batch = make_batch(corpus, idx, train_cfg.policy, policy_rng, vocab)
            step += 1
            for group in opt.param_groups:
                group["lr"] = lr_at(step, train_cfg.lr, train_cfg.warmup_steps)
            enc, enc_lens = model.encode_batch(batch.frames, batch.frame_lens, batch.task_sets)
            losses = rnnt_loss_batch(enc, enc_lens, batch.targets, batch.target_lens, model)
            loss = losses.mean()
            if not bool(torch.isfinite(loss)):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            loss_sum += float(losses.sum())
            n_seen += len(idx)
        train_loss = loss_sum / n_seen
        evaluate = epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs
        dev = dev_wer_macro(model, dev_utts, vocab, train_cfg.max_symbols_per_frame) if (evaluate and dev_utts) else None
        manifest.epochs.append(EpochStats(epoch, train_loss, dev))
        if dev is not None and dev < best[0]:
            best = (dev, epoch)
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if log:
            dev_txt = f" dev_wer={dev:.4f}" if dev is not None else ""
            log(f"epoch {epoch:3d}: train_loss={train_loss:.4f}{dev_txt}")
    if best_state is not None:
        model.load_state_dict(best_state)
        manifest.best_epoch = best[1]
    else:
        manifest.best_epoch = train_cfg.epochs
    manifest.wall_seconds = time.monotonic() - start
    model.eval()
    return model, manifest
