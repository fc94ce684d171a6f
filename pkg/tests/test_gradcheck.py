from __future__ import annotations

import numpy as np
import pytest
import torch
from torch import nn

from polytask.activation import ActivationPosition, ActivationStrategy
from polytask.data import CombinationPolicy, GenConfig, gen_corpus, make_batch
from polytask.codec import build_vocab
from polytask.gradcheck import grad_check
from polytask.model import ModelConfig, TransducerModel
from polytask.rnnt import rnnt_loss_batch


class Quadratic(nn.Module):
    def __init__(self):
        super().__init__()
        self.w = nn.Parameter(torch.tensor([1.5, -0.5, 2.0], dtype=torch.float64))


def test_quadratic_loss_near_exact():
    m = Quadratic()
    target = torch.tensor([0.3, 1.1, -2.0], dtype=torch.float64)
    report = grad_check(m, lambda: ((m.w - target) ** 2).sum(), eps=1e-5, tolerance=1e-7)
    assert report.passed, report.summary()
    assert report.max_rel_err < 1e-7


def test_unused_parameter_has_zero_both_ways():
    class TwoParams(nn.Module):
        def __init__(self):
            super().__init__()
            self.used = nn.Parameter(torch.ones(2, dtype=torch.float64))
            self.unused = nn.Parameter(torch.ones(2, dtype=torch.float64))

    m = TwoParams()
    report = grad_check(m, lambda: (m.used ** 2).sum(), tolerance=1e-7)
    assert report.passed
    by_name = {t.name: t for t in report.tensors}
    assert by_name["unused"].max_rel_err == 0.0


@pytest.fixture(scope="module")
def tiny_corpus():
    cfg = GenConfig(n_train=8, n_dev=2, n_test=2, seed=1, lexicon_size=6,
                    turns_range=(1, 2), words_per_turn_range=(2, 3))
    corpus = gen_corpus(cfg)
    return corpus, build_vocab(corpus.codec)


def transducer_loss_closure(model, corpus, vocab, n_utts=2):
    rng = np.random.default_rng(0)
    batch = make_batch(corpus, list(range(n_utts)), CombinationPolicy.FROM_AVAILABLE_LABELS,
                       rng, vocab)
    frames = batch.frames.double()

    def closure():
        enc, enc_lens = model.encode_batch(frames, batch.frame_lens, batch.task_sets)
        return rnnt_loss_batch(enc, enc_lens, batch.targets, batch.target_lens, model).mean()

    return closure


@pytest.mark.parametrize("position", list(ActivationPosition))
@pytest.mark.parametrize("strategy", list(ActivationStrategy))
def test_full_model_gradients(tiny_corpus, strategy, position):
    corpus, vocab = tiny_corpus
    cfg = ModelConfig(vocab_size=vocab.num_labels, d_in=16, d=12, pred_hidden=10,
                      strategy=strategy, position=position, seed=3)
    model = TransducerModel(cfg).double()
    report = grad_check(model, transducer_loss_closure(model, corpus, vocab),
                        eps=1e-5, tolerance=1e-4, coords_per_tensor=3, seed=1)
    assert report.passed, "\n".join(f"{t.name}: {t.max_rel_err:.2e}" for t in report.failures())


def test_bank_vectors_match_finite_differences(tiny_corpus):
    corpus, vocab = tiny_corpus
    cfg = ModelConfig(vocab_size=vocab.num_labels, d_in=16, d=12, pred_hidden=10,
                      strategy=ActivationStrategy.PER_TASK_SUM,
                      position=ActivationPosition.BOTH, seed=4)
    model = TransducerModel(cfg).double()
    report = grad_check(model, transducer_loss_closure(model, corpus, vocab),
                        eps=1e-5, tolerance=1e-4, coords_per_tensor=10, seed=2)
    bank_checks = [t for t in report.tensors if "bank" in t.name]
    assert len(bank_checks) == 2
    for t in bank_checks:
        assert t.max_rel_err < 1e-4
