"""Toy neural transducer with task-conditioned acoustic embeddings.

Four networks: a strided convolutional feature encoder, a recurrent
context encoder, a recurrent prediction network over emitted tokens, and
an additive joint network producing logits over tokens plus blank (blank
is the last logit index, equal to ``vocab_size``). Activation banks are
applied after the feature encoder, after the context encoder, or both.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import torch
from torch import Tensor, nn

from .activation import ActivationBank, ActivationPosition, ActivationStrategy, apply_activation
from .tasks import TaskSet


@dataclass
class ModelConfig:
    vocab_size: int  # emittable tokens, excluding blank
    d_in: int = 16
    d: int = 32
    feature_strides: tuple[int, ...] = (2, 2)
    feature_kernel: int = 3
    context_layers: int = 2
    pred_hidden: int = 32
    pred_dropout: float = 0.3  # regularizes the prediction path toward acoustic grounding
    strategy: ActivationStrategy = ActivationStrategy.PER_COMBINATION
    position: ActivationPosition = ActivationPosition.AFTER_FEATURE_ENCODER
    num_aux_tasks: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        self.strategy = ActivationStrategy(self.strategy)
        self.position = ActivationPosition(self.position)
        self.feature_strides = tuple(int(s) for s in self.feature_strides)
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.d < 1 or self.d_in < 1:
            raise ValueError("embedding dimensions must be >= 1")
        if any(s < 1 for s in self.feature_strides):
            raise ValueError("feature strides must be >= 1")
        if self.feature_kernel % 2 != 1:
            raise ValueError("feature kernel must be odd (same-ish padding)")

    @property
    def downsampling(self) -> int:
        return math.prod(self.feature_strides)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["position"] = self.position.value
        d["feature_strides"] = list(self.feature_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "feature_strides": tuple(d["feature_strides"])})


class TransducerModel(nn.Module):
    """Transducer with activation banks; parameters named and enumerable."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        convs: list[nn.Module] = []
        ch = cfg.d_in
        for stride in cfg.feature_strides:
            convs.append(nn.Conv1d(ch, cfg.d, cfg.feature_kernel, stride=stride,
                                   padding=cfg.feature_kernel // 2))
            ch = cfg.d
        self.feature_convs = nn.ModuleList(convs)
        self.context_rnn = nn.GRU(cfg.d, cfg.d, num_layers=cfg.context_layers, batch_first=True)
        # Row vocab_size of the embedding is the start-of-sequence state;
        # blank shares that integer id but never enters the prediction net.
        self.pred_embed = nn.Embedding(cfg.vocab_size + 1, cfg.pred_hidden)
        self.pred_rnn = nn.GRU(cfg.pred_hidden, cfg.pred_hidden, batch_first=True)
        self.pred_drop = nn.Dropout(cfg.pred_dropout)
        self.pred_proj = nn.Linear(cfg.pred_hidden, cfg.d)
        self.joint_enc = nn.Linear(cfg.d, cfg.d, bias=False)
        self.joint_pred = nn.Linear(cfg.d, cfg.d, bias=False)
        self.joint_out = nn.Linear(cfg.d, cfg.vocab_size + 1)
        self.bank_feature: Optional[ActivationBank] = None
        self.bank_encoder: Optional[ActivationBank] = None
        if cfg.position.wants_feature_bank:
            self.bank_feature = ActivationBank(cfg.strategy, cfg.num_aux_tasks, cfg.d, seed=cfg.seed + 1)
        if cfg.position.wants_encoder_bank:
            self.bank_encoder = ActivationBank(cfg.strategy, cfg.num_aux_tasks, cfg.d, seed=cfg.seed + 2)
        # deterministic (no-dropout) mode by default; the trainer opts in to train()
        self.eval()

    @property
    def blank_id(self) -> int:
        return self.cfg.vocab_size

    @property
    def sos_id(self) -> int:
        return self.cfg.vocab_size

    def out_len(self, t_in: int) -> int:
        t = t_in
        for s in self.cfg.feature_strides:
            t = (t - 1) // s + 1
        return t

    def feature_encode(self, frames: Tensor, lengths: Optional[Tensor] = None) -> Tensor:
        """Strided conv stack: (T_in, d_in) -> (T, d) or batched with leading B.

        T = ceil(T_in / s) for the configured total downsampling s. When
        ``lengths`` is given, positions past each utterance's valid length
        are zeroed after every layer, so padded batches reproduce the
        unpadded per-utterance outputs exactly.
        """
        squeeze = frames.dim() == 2
        if squeeze:
            frames = frames.unsqueeze(0)
        min_len = int(lengths.min()) if lengths is not None else frames.shape[1]
        if min_len < self.cfg.downsampling:
            raise ValueError(f"need at least {self.cfg.downsampling} input frames, got {min_len}")
        x = frames.transpose(1, 2)
        for conv, stride in zip(self.feature_convs, self.cfg.feature_strides):
            x = torch.relu(conv(x))
            if lengths is not None:
                lengths = (lengths - 1) // stride + 1
                keep = torch.arange(x.shape[2], device=x.device)[None, :] < lengths[:, None]
                x = x * keep.unsqueeze(1)
        x = x.transpose(1, 2)
        return x.squeeze(0) if squeeze else x

    def context_encode(self, x: Tensor) -> Tensor:
        """Recurrent context encoder, shape-preserving over time.

        The residual keeps a direct path from the feature encoder to the
        joint; without it the joint takes far longer to become
        acoustically grounded on cold starts.
        """
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        out, _ = self.context_rnn(x)
        out = out + x
        return out.squeeze(0) if squeeze else out

    def _condition(self, x: Tensor, bank: Optional[ActivationBank], task_sets: Sequence[TaskSet]) -> Tensor:
        if bank is None:
            return x
        v = bank.vectors_for(task_sets).to(x.dtype)
        if x.dim() == 2:
            return apply_activation(x, v[0])
        return apply_activation(x, v)

    def encode(self, frames: Tensor, tasks: TaskSet | Sequence[TaskSet]) -> Tensor:
        """Full acoustic pipeline with activation applied at the configured position."""
        task_sets = [tasks] if isinstance(tasks, TaskSet) else list(tasks)
        x = self.feature_encode(frames)
        x = self._condition(x, self.bank_feature, task_sets)
        h = self.context_encode(x)
        return self._condition(h, self.bank_encoder, task_sets)

    def encode_batch(self, frames: Tensor, lengths: Tensor,
                     task_sets: Sequence[TaskSet]) -> tuple[Tensor, Tensor]:
        """Padded-batch pipeline; returns encoder outputs and their lengths."""
        x = self.feature_encode(frames, lengths)
        x = self._condition(x, self.bank_feature, task_sets)
        h = self.context_encode(x)
        h = self._condition(h, self.bank_encoder, task_sets)
        out_lens = lengths.clone()
        for stride in self.cfg.feature_strides:
            out_lens = (out_lens - 1) // stride + 1
        return h, out_lens

    def _check_prefix(self, prefix: Tensor) -> None:
        if prefix.numel() and (prefix.max() >= self.cfg.vocab_size or prefix.min() < 0):
            raise ValueError("prediction-net prefixes must not contain blank or out-of-range ids")

    def predict(self, prefix: Tensor | Sequence[int]) -> Tensor:
        """Prediction-net states for all prefixes of ``prefix``: (U+1, d).

        Row 0 is the empty-prefix start state; row u conditions on
        prefix[:u]. Blank must not appear in the prefix.
        """
        if not isinstance(prefix, Tensor):
            prefix = torch.tensor(list(prefix), dtype=torch.long)
        self._check_prefix(prefix)
        return self.predict_batch(prefix.unsqueeze(0))[0]

    def predict_batch(self, targets: Tensor) -> Tensor:
        """Batched prediction states: targets (B, U) -> (B, U+1, d)."""
        b = targets.shape[0]
        sos = torch.full((b, 1), self.sos_id, dtype=torch.long, device=targets.device)
        seq = torch.cat([sos, targets.long()], dim=1)
        emb = self.pred_embed(seq)
        out, _ = self.pred_rnn(emb)
        return self.pred_proj(self.pred_drop(out))

    def predict_start(self) -> tuple[Tensor, Tensor]:
        """Empty-prefix state for step-wise decoding: (g (d,), rnn state)."""
        emb = self.pred_embed(torch.tensor([[self.sos_id]]))
        out, state = self.pred_rnn(emb)
        return self.pred_proj(self.pred_drop(out))[0, 0], state

    def predict_step(self, token: int, state: Tensor) -> tuple[Tensor, Tensor]:
        """Advance the prediction net by one emitted token."""
        if not 0 <= token < self.cfg.vocab_size:
            raise ValueError(f"token {token} out of range (blank may not be fed back)")
        emb = self.pred_embed(torch.tensor([[token]]))
        out, state = self.pred_rnn(emb, state)
        return self.pred_proj(self.pred_drop(out))[0, 0], state

    def joint(self, h: Tensor, g: Tensor) -> Tensor:
        """Joint logits over vocab_size + 1 tokens (blank last).

        Pre-activation is additive in (h, g); inputs broadcast, so lattice
        shapes like h (B,T,1,d) with g (B,1,U+1,d) are supported.
        """
        z = self.joint_enc(h) + self.joint_pred(g)
        return self.joint_out(torch.tanh(z))

    def joint_lattice(self, enc: Tensor, pred: Tensor) -> Tensor:
        """All-pairs joint logits: enc (B,T,d) x pred (B,U+1,d) -> (B,T,U+1,V+1)."""
        return self.joint(enc.unsqueeze(2), pred.unsqueeze(1))

    def parameter_manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        """Deterministic (name, shape) enumeration of every parameter."""
        return [(name, tuple(p.shape)) for name, p in self.named_parameters()]
