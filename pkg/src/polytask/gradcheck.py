"""Finite-difference verification of analytic gradients.

Run with the model in double precision; the default tolerances assume it.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable

import torch
from torch import nn


@dataclass(frozen=True)
class TensorCheck:
    name: str
    coords_checked: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    tensors: list[TensorCheck]

    @property
    def max_rel_err(self) -> float:
        return max((t.max_rel_err for t in self.tensors), default=0.0)

    @property
    def passed(self) -> bool:
        return all(t.max_rel_err < self.tolerance for t in self.tensors)

    def failures(self) -> list[TensorCheck]:
        return [t for t in self.tensors if t.max_rel_err >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"grad check {status}: {len(self.tensors)} tensors, max rel err {self.max_rel_err:.3e}"


def grad_check(model: nn.Module, loss_fn: Callable[[], torch.Tensor], *,
               eps: float = 1e-5, tolerance: float = 1e-4, abs_tol: float = 1e-6,
               coords_per_tensor: int = 10, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    For every parameter tensor, at least ``coords_per_tensor`` coordinates
    (all of them for small tensors) are perturbed by +/- eps and the
    directional derivative is compared with the backward-pass gradient.
    Relative error is |a - f| / max(1e-8, |a| + |f|).

    Coordinates where |a - f| < abs_tol count as exact: the difference
    quotient of an O(loss) value in double precision cannot resolve
    gradients below roughly machine-eps * |loss| / eps, so for near-zero
    gradients the relative form would only amplify rounding noise.
    """
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in model.named_parameters()}
    rng = random.Random(seed)
    checks: list[TensorCheck] = []
    for name, param in model.named_parameters():
        flat = param.data.view(-1)
        n = flat.numel()
        coords = list(range(n)) if n <= coords_per_tensor else sorted(rng.sample(range(n), coords_per_tensor))
        worst = 0.0
        with torch.no_grad():
            for c in coords:
                orig = flat[c].item()
                flat[c] = orig + eps
                f_plus = float(loss_fn())
                flat[c] = orig - eps
                f_minus = float(loss_fn())
                flat[c] = orig
                fd = (f_plus - f_minus) / (2.0 * eps)
                a = float(grads[name].view(-1)[c])
                if abs(a - fd) < abs_tol:
                    continue
                rel = abs(a - fd) / max(1e-8, abs(a) + abs(fd))
                worst = max(worst, rel)
        checks.append(TensorCheck(name, len(coords), worst))
    model.zero_grad(set_to_none=True)
    return GradCheckReport(tolerance=tolerance, tensors=checks)
