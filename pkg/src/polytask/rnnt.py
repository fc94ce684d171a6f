"""Full-lattice transducer loss and a brute-force enumeration oracle.

The loss marginalizes every monotonic alignment of U emissions and T
blanks (final blank included) over the (t, u) lattice:

    alpha(t, u) = logaddexp(alpha(t-1, u) + log p_blank(t-1, u),
                            alpha(t, u-1) + log p_label_u(t, u-1))
    loss = -(alpha(T-1, U) + log p_blank(T-1, U))        # 0-based frames

The recursion is evaluated along anti-diagonals so a whole batch advances
in T+U vectorized steps. Log-zero is a large negative finite constant so
gradients stay NaN-free everywhere.
"""
from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import Tensor
from torch.nn import functional as F

from .model import TransducerModel

LOG_ZERO = -1.0e4

MAX_BRUTEFORCE_PATHS = 1_000_000


def _diag_gather(m: Tensor, k: int) -> Tensor:
    """out[:, t] = m[:, t, k - t], LOG_ZERO where k - t is out of range.

    m is (B, T, U_dim); returns (B, T).
    """
    b, t_dim, u_dim = m.shape
    if u_dim == 0:
        return m.new_full((b, t_dim), LOG_ZERO)
    t_idx = torch.arange(t_dim, device=m.device)
    u_idx = k - t_idx
    valid = (u_idx >= 0) & (u_idx < u_dim)
    u_idx = u_idx.clamp(0, u_dim - 1)
    out = m.gather(2, u_idx.view(1, t_dim, 1).expand(b, t_dim, 1)).squeeze(2)
    return out.masked_fill(~valid.unsqueeze(0), LOG_ZERO)


def _shift_right(x: Tensor) -> Tensor:
    """Shift along dim 1, filling slot 0 with LOG_ZERO."""
    return torch.cat([x.new_full((x.shape[0], 1), LOG_ZERO), x[:, :-1]], dim=1)


def rnnt_loss_from_log_probs(log_probs: Tensor, targets: Tensor,
                             t_lens: Tensor, u_lens: Tensor, blank: int) -> Tensor:
    """Per-utterance negative log-likelihood from lattice log-probabilities.

    log_probs: (B, T, U+1, V+1) log-softmax outputs of the joint network,
    padded freely beyond each utterance's (t_lens, u_lens); padding cannot
    affect the result. Returns (B,) losses.
    """
    b, t_dim, u1_dim, _ = log_probs.shape
    u_dim = u1_dim - 1
    device = log_probs.device
    t_lens = torch.as_tensor(t_lens, dtype=torch.long, device=device)
    u_lens = torch.as_tensor(u_lens, dtype=torch.long, device=device)
    if bool((t_lens < 1).any()):
        raise ValueError("every utterance needs at least one encoder frame")
    if bool((u_lens > u_dim).any()):
        raise ValueError("u_lens exceed the target tensor width")
    lpb = log_probs[..., blank]  # (B, T, U+1)
    if u_dim > 0:
        if bool((targets[:, :u_dim].masked_select(
                torch.arange(u_dim, device=device)[None, :] < u_lens[:, None]) == blank).any()):
            raise ValueError("targets must not contain blank")
        idx = targets[:, :u_dim].clamp(min=0).long().view(b, 1, u_dim, 1).expand(b, t_dim, u_dim, 1)
        lpy = log_probs[:, :, :u_dim, :].gather(3, idx).squeeze(3)  # (B, T, U)
        pad_u = torch.arange(u_dim, device=device)[None, :] >= u_lens[:, None]
        lpy = lpy.masked_fill(pad_u[:, None, :], LOG_ZERO)
    else:
        lpy = log_probs.new_full((b, t_dim, 0), LOG_ZERO)

    t_idx = torch.arange(t_dim, device=device)
    diag = log_probs.new_full((b, t_dim), LOG_ZERO)
    diag[:, 0] = 0.0
    diags = [diag]
    for k in range(1, t_dim + u_dim):
        prev = diags[-1]
        blank_arrivals = _shift_right(prev + _diag_gather(lpb, k - 1))
        emit_arrivals = prev + _diag_gather(lpy, k - 1)
        diag = torch.logaddexp(blank_arrivals, emit_arrivals)
        u_here = k - t_idx
        invalid = (u_here < 0) | (u_here > u_dim)
        diag = diag.masked_fill(invalid.unsqueeze(0), LOG_ZERO)
        diags.append(diag)

    stacked = torch.stack(diags)  # (T+U, B, T)
    rows = torch.arange(b, device=device)
    last_t = t_lens - 1
    alpha_final = stacked[last_t + u_lens, rows, last_t]
    final_blank = lpb[rows, last_t, u_lens]
    return -(alpha_final + final_blank)


def rnnt_loss(enc: Tensor, targets: Sequence[int] | Tensor, model: TransducerModel) -> Tensor:
    """Transducer loss for one utterance: enc (T, d), targets of length U."""
    if not isinstance(targets, Tensor):
        targets = torch.tensor(list(targets), dtype=torch.long, device=enc.device)
    pred = model.predict(targets)  # validates blank-free targets
    log_probs = F.log_softmax(model.joint_lattice(enc.unsqueeze(0), pred.unsqueeze(0)), dim=-1)
    t_lens = torch.tensor([enc.shape[0]])
    u_lens = torch.tensor([targets.shape[0]])
    return rnnt_loss_from_log_probs(log_probs, targets.unsqueeze(0), t_lens, u_lens, model.blank_id)[0]


def rnnt_loss_batch(enc: Tensor, t_lens: Tensor, targets: Tensor, u_lens: Tensor,
                    model: TransducerModel) -> Tensor:
    """Per-utterance losses for a padded batch: enc (B, T, d), targets (B, U)."""
    pred = model.predict_batch(targets)
    log_probs = F.log_softmax(model.joint_lattice(enc, pred), dim=-1)
    return rnnt_loss_from_log_probs(log_probs, targets, t_lens, u_lens, model.blank_id)


def num_alignments(t: int, u: int) -> int:
    """Count of monotonic lattice paths: interleavings of T-1 free blanks and U emissions."""
    return math.comb(t - 1 + u, u)


def rnnt_loss_bruteforce(enc: Tensor, targets: Sequence[int] | Tensor, model: TransducerModel) -> Tensor:
    """Exact loss by enumerating every alignment; verification oracle.

    Each path interleaves emissions (at the current frame) with blanks
    (advancing the frame) and terminates with the mandatory blank once all
    frames are consumed and all targets emitted. Raises when the path
    count exceeds MAX_BRUTEFORCE_PATHS.
    """
    if not isinstance(targets, Tensor):
        targets = torch.tensor(list(targets), dtype=torch.long, device=enc.device)
    t_dim, u_dim = enc.shape[0], targets.shape[0]
    if num_alignments(t_dim, u_dim) > MAX_BRUTEFORCE_PATHS:
        raise ValueError(f"instance with T={t_dim}, U={u_dim} exceeds the enumeration cap")
    pred = model.predict(targets)
    log_probs = F.log_softmax(model.joint_lattice(enc.unsqueeze(0), pred.unsqueeze(0)), dim=-1)
    lp = log_probs[0].detach().to(torch.float64).cpu().numpy()
    tgt = targets.tolist()
    blank = model.blank_id
    path_logps: list[float] = []

    def walk(t: int, u: int, acc: float) -> None:
        if u < u_dim:
            walk(t, u + 1, acc + lp[t, u, tgt[u]])
        if t < t_dim - 1:
            walk(t + 1, u, acc + lp[t, u, blank])
        elif u == u_dim:
            path_logps.append(acc + lp[t, u, blank])  # terminating blank

    walk(0, 0, 0.0)
    total = path_logps[0]
    for x in path_logps[1:]:
        hi, lo = (total, x) if total >= x else (x, total)
        total = hi + math.log1p(math.exp(lo - hi))
    return torch.tensor(-total, dtype=torch.float64)
