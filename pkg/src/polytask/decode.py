"""Greedy and beam decoding over an encoded utterance."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor
from torch.nn import functional as F

from .model import TransducerModel

DEFAULT_MAX_SYMBOLS_PER_FRAME = 8


@dataclass(frozen=True)
class Hypothesis:
    """Blank-free token sequence with its log-probability score."""

    tokens: tuple[int, ...]
    score: float


def _logaddexp(a: float, b: float) -> float:
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def greedy_decode(enc: Tensor, model: TransducerModel,
                  max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME) -> list[int]:
    """Emit the per-frame argmax token until blank or the per-frame cap."""
    if max_symbols_per_frame < 1:
        raise ValueError("max_symbols_per_frame must be >= 1")
    tokens: list[int] = []
    with torch.no_grad():
        g, state = model.predict_start()
        for t in range(enc.shape[0]):
            for _ in range(max_symbols_per_frame):
                k = int(model.joint(enc[t], g).argmax())
                if k == model.blank_id:
                    break
                tokens.append(k)
                g, state = model.predict_step(k, state)
    return tokens


@dataclass
class _Beam:
    tokens: tuple[int, ...]
    score: float
    g: Tensor
    state: Tensor


def _merge(pool: dict[tuple[int, ...], _Beam], cand: _Beam) -> None:
    old = pool.get(cand.tokens)
    if old is None:
        pool[cand.tokens] = cand
    else:
        # Same token sequence reached along another alignment: sum the mass.
        old.score = _logaddexp(old.score, cand.score)


def _ranked(pool: dict[tuple[int, ...], _Beam]) -> list[_Beam]:
    return sorted(pool.values(), key=lambda h: (-h.score, h.tokens))


def beam_decode(enc: Tensor, model: TransducerModel, beam_size: int,
                max_symbols_per_frame: int = DEFAULT_MAX_SYMBOLS_PER_FRAME) -> list[Hypothesis]:
    """Beam search over emission sequences, merging identical sequences.

    Returns up to ``beam_size`` hypotheses sorted by descending score;
    scores are log-probabilities summed over the alignments the beam
    tracked, so they never exceed 0.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    with torch.no_grad():
        g0, s0 = model.predict_start()
        beams = {(): _Beam((), 0.0, g0, s0)}
        for t in range(enc.shape[0]):
            ht = enc[t]
            next_frame: dict[tuple[int, ...], _Beam] = {}
            frontier = beams
            for step in range(max_symbols_per_frame + 1):
                expansions: dict[tuple[int, ...], _Beam] = {}
                for hyp in frontier.values():
                    logp = F.log_softmax(model.joint(ht, hyp.g), dim=-1)
                    _merge(next_frame, _Beam(hyp.tokens, hyp.score + float(logp[model.blank_id]),
                                             hyp.g, hyp.state))
                    if step == max_symbols_per_frame:
                        continue
                    top = torch.topk(logp[:model.blank_id], k=min(beam_size, model.blank_id))
                    for val, tok in zip(top.values.tolist(), top.indices.tolist()):
                        g, state = model.predict_step(tok, hyp.state)
                        _merge(expansions, _Beam(hyp.tokens + (tok,), hyp.score + val, g, state))
                frontier = {h.tokens: h for h in _ranked(expansions)[:beam_size]}
                if not frontier:
                    break
                # Expansion scores only decrease; once the best pending
                # expansion cannot displace the kept frame-final set, stop.
                if len(next_frame) >= beam_size:
                    bar = _ranked(next_frame)[beam_size - 1].score
                    if max(h.score for h in frontier.values()) <= bar:
                        break
            beams = {h.tokens: h for h in _ranked(next_frame)[:beam_size]}
    return [Hypothesis(h.tokens, h.score) for h in _ranked(beams)]
