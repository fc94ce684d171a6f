from __future__ import annotations

import math
import random

import pytest
import torch

from polytask.model import ModelConfig, TransducerModel
from polytask.rnnt import (num_alignments, rnnt_loss, rnnt_loss_batch,
                           rnnt_loss_bruteforce, rnnt_loss_from_log_probs)


@pytest.fixture(scope="module")
def tiny_model():
    cfg = ModelConfig(vocab_size=5, d_in=4, d=6, feature_strides=(2,), pred_hidden=6,
                      num_aux_tasks=2, seed=7)
    return TransducerModel(cfg).double()


def uniform_log_probs(t, u, v):
    return torch.full((1, t, u + 1, v), math.log(1.0 / v), dtype=torch.float64)


class TestLatticeRecursion:
    def test_single_blank_path(self):
        # T=1, U=0: the only path is the terminating blank
        lp = torch.log(torch.tensor([[[[0.2, 0.3, 0.5]]]], dtype=torch.float64))
        loss = rnnt_loss_from_log_probs(lp, torch.zeros(1, 0, dtype=torch.long),
                                        torch.tensor([1]), torch.tensor([0]), blank=2)
        assert float(loss) == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_two_path_uniform_hand_value(self):
        # T=2, U=1, uniform over 3 symbols: 2 paths of probability (1/3)^3
        lp = uniform_log_probs(2, 1, 3)
        loss = rnnt_loss_from_log_probs(lp, torch.tensor([[0]]), torch.tensor([2]),
                                        torch.tensor([1]), blank=2)
        assert float(loss) == pytest.approx(-math.log(2 * (1 / 3) ** 3), abs=1e-12)
        assert float(loss) == pytest.approx(2.6027, abs=5e-5)

    def test_loss_is_nonnegative(self):
        rng = torch.Generator().manual_seed(0)
        for _ in range(20):
            t, u, v = 3, 2, 4
            lp = torch.log_softmax(torch.randn(1, t, u + 1, v, generator=rng,
                                               dtype=torch.float64), dim=-1)
            loss = rnnt_loss_from_log_probs(lp, torch.tensor([[0, 1]]), torch.tensor([t]),
                                            torch.tensor([u]), blank=v - 1)
            assert float(loss) >= 0.0

    def test_blank_in_target_rejected(self):
        lp = uniform_log_probs(2, 1, 3)
        with pytest.raises(ValueError):
            rnnt_loss_from_log_probs(lp, torch.tensor([[2]]), torch.tensor([2]),
                                     torch.tensor([1]), blank=2)

    def test_extreme_logits_stay_finite(self):
        for hi, lo in ((50.0, -50.0), (-50.0, 50.0)):
            logits = torch.full((1, 4, 4, 6), lo, dtype=torch.float64)
            logits[..., 0] = hi
            lp = torch.log_softmax(logits, dim=-1)
            loss = rnnt_loss_from_log_probs(lp, torch.tensor([[0, 1, 2]]), torch.tensor([4]),
                                            torch.tensor([3]), blank=5)
            assert torch.isfinite(loss).all()

    def test_gradient_finite_everywhere(self):
        logits = torch.randn(2, 3, 4, 6, dtype=torch.float64, requires_grad=True)
        lp = torch.log_softmax(logits * 40, dim=-1)
        loss = rnnt_loss_from_log_probs(lp, torch.tensor([[0, 1, 2], [3, 0, 0]]),
                                        torch.tensor([3, 2]), torch.tensor([3, 1]), blank=5)
        loss.sum().backward()
        assert torch.isfinite(logits.grad).all()


class TestAlignmentCounts:
    def test_one_by_one_single_path(self):
        assert num_alignments(1, 1) == 1

    def test_two_by_one_two_paths(self):
        assert num_alignments(2, 1) == 2

    def test_binomial_form(self):
        assert num_alignments(4, 3) == math.comb(6, 3)


class TestBruteForceOracle:
    def test_matches_dp_on_random_tiny_instances(self, tiny_model):
        random.seed(1)
        worst = 0.0
        for _ in range(100):
            t = random.randint(1, 4)
            u = random.randint(0, 3)
            enc = torch.randn(t, tiny_model.cfg.d, dtype=torch.float64)
            tgt = [random.randrange(tiny_model.cfg.vocab_size) for _ in range(u)]
            a = float(rnnt_loss(enc, tgt, tiny_model))
            b = float(rnnt_loss_bruteforce(enc, tgt, tiny_model))
            worst = max(worst, abs(a - b))
        assert worst < 1e-6

    def test_enumeration_cap_enforced(self, tiny_model):
        enc = torch.randn(40, tiny_model.cfg.d, dtype=torch.float64)
        tgt = [0] * 30  # C(69, 30) >> 1e6
        with pytest.raises(ValueError):
            rnnt_loss_bruteforce(enc, tgt, tiny_model)

    def test_blank_in_target_rejected(self, tiny_model):
        enc = torch.randn(2, tiny_model.cfg.d, dtype=torch.float64)
        with pytest.raises(ValueError):
            rnnt_loss(enc, [tiny_model.blank_id], tiny_model)


class TestBatchedLoss:
    def test_padding_never_alters_loss(self, tiny_model):
        random.seed(3)
        torch.manual_seed(3)
        lens_t = [5, 2, 4]
        lens_u = [3, 0, 2]
        encs = [torch.randn(t, tiny_model.cfg.d, dtype=torch.float64) for t in lens_t]
        tgts = [[random.randrange(tiny_model.cfg.vocab_size) for _ in range(u)] for u in lens_u]
        enc = torch.zeros(3, max(lens_t), tiny_model.cfg.d, dtype=torch.float64)
        tgt = torch.zeros(3, max(lens_u), dtype=torch.long)
        for i, (e, ts) in enumerate(zip(encs, tgts)):
            enc[i, :len(e)] = e
            tgt[i, :len(ts)] = torch.tensor(ts, dtype=torch.long)
        batched = rnnt_loss_batch(enc, torch.tensor(lens_t), tgt, torch.tensor(lens_u), tiny_model)
        for i in range(3):
            single = rnnt_loss(encs[i], tgts[i], tiny_model)
            assert float(batched[i]) == pytest.approx(float(single), abs=1e-6)

    def test_garbage_in_padding_is_ignored(self, tiny_model):
        torch.manual_seed(0)
        enc = torch.randn(1, 4, tiny_model.cfg.d, dtype=torch.float64)
        tgt = torch.tensor([[1, 2, 0]])
        base = rnnt_loss_batch(enc, torch.tensor([3]), tgt, torch.tensor([2]), tiny_model)
        enc2 = enc.clone()
        enc2[0, 3] = 123.0
        tgt2 = tgt.clone()
        tgt2[0, 2] = 4
        poked = rnnt_loss_batch(enc2, torch.tensor([3]), tgt2, torch.tensor([2]), tiny_model)
        assert float(base[0]) == pytest.approx(float(poked[0]), abs=1e-12)
