"""Learnable task-activation vectors and their application to embeddings.

Two bank strategies are supported: one vector per auxiliary-task
combination (2^K vectors) or one vector per task summed over the active
tasks (K + 1 vectors, primary included). The composed vector is added
element-wise to every time step of the acoustic embedding.
"""
from __future__ import annotations

from enum import Enum
from typing import Sequence

import torch
from torch import Tensor, nn

from .tasks import TaskId, TaskSet

INIT_SCALE = 0.02  # keeps early training close to unconditioned behaviour


class ActivationStrategy(str, Enum):
    PER_COMBINATION = "per_combination"
    PER_TASK_SUM = "per_task_sum"


class ActivationPosition(str, Enum):
    AFTER_FEATURE_ENCODER = "after_feature_encoder"
    AFTER_FULL_ENCODER = "after_full_encoder"
    BOTH = "both"

    @property
    def wants_feature_bank(self) -> bool:
        return self in (ActivationPosition.AFTER_FEATURE_ENCODER, ActivationPosition.BOTH)

    @property
    def wants_encoder_bank(self) -> bool:
        return self in (ActivationPosition.AFTER_FULL_ENCODER, ActivationPosition.BOTH)


def bank_size(strategy: ActivationStrategy, num_aux: int) -> int:
    if strategy is ActivationStrategy.PER_COMBINATION:
        return 1 << num_aux
    return num_aux + 1


class ActivationBank(nn.Module):
    """Bank of learnable task vectors for one injection position.

    ``vectors`` is (n, d): indexed by combination index under
    PER_COMBINATION, by task id (row 0 = primary) under PER_TASK_SUM.
    """

    def __init__(self, strategy: ActivationStrategy, num_aux: int, dim: int, seed: int = 0):
        super().__init__()
        if num_aux < 0:
            raise ValueError("num_aux must be >= 0")
        if dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        self.strategy = ActivationStrategy(strategy)
        self.num_aux = num_aux
        self.dim = dim
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        init = torch.randn(bank_size(self.strategy, num_aux), dim, generator=gen) * INIT_SCALE
        self.vectors = nn.Parameter(init)

    @property
    def num_vectors(self) -> int:
        return self.vectors.shape[0]

    def vector_for(self, tasks: TaskSet) -> Tensor:
        """Compose the activation vector for one task set; shape (d,)."""
        return self.vectors_for([tasks])[0]

    def vectors_for(self, task_sets: Sequence[TaskSet]) -> Tensor:
        """Compose activation vectors for a batch of task sets; shape (B, d).

        Uses index_select so gradients reach exactly the rows that
        participate: the selected combination row, or the active tasks'
        rows under summation.
        """
        device = self.vectors.device
        if self.strategy is ActivationStrategy.PER_COMBINATION:
            idx = torch.tensor([ts.combination_index(self.num_aux) for ts in task_sets],
                               dtype=torch.long, device=device)
            return self.vectors.index_select(0, idx)
        rows = []
        for ts in task_sets:
            ts.combination_index(self.num_aux)  # validates task range
            idx = torch.tensor([int(t) for t in ts], dtype=torch.long, device=device)
            rows.append(self.vectors.index_select(0, idx).sum(dim=0))
        return torch.stack(rows)


def new_bank(strategy: ActivationStrategy, num_aux: int, dim: int, seed: int = 0) -> ActivationBank:
    """Create a bank with i.i.d. zero-mean init, deterministic given seed."""
    return ActivationBank(strategy, num_aux, dim, seed)


def combination_index(tasks: TaskSet, num_aux: int) -> int:
    """Bijective index of the auxiliary subset of ``tasks`` in [0, 2^K - 1]."""
    return tasks.combination_index(num_aux)


def activation_vector(bank: ActivationBank, tasks: TaskSet) -> Tensor:
    """The composed vector v for ``tasks`` under the bank's strategy."""
    return bank.vector_for(tasks)


def apply_activation(x: Tensor, v: Tensor) -> Tensor:
    """Add v to every time step: x may be (T, d) or (B, T, d), v (d,) or (B, d)."""
    if x.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: embeddings have d={x.shape[-1]}, vector has d={v.shape[-1]}")
    if v.dim() == 1:
        return x + v
    if v.dim() == 2 and x.dim() == 3:
        if v.shape[0] != x.shape[0]:
            raise ValueError(f"batch mismatch: {x.shape[0]} embeddings vs {v.shape[0]} vectors")
        return x + v.unsqueeze(1)
    raise ValueError(f"unsupported shapes: x {tuple(x.shape)}, v {tuple(v.shape)}")
