"""Task identifiers and task-set bitmasks.

ASR is the designated primary task and is active in every valid TaskSet.
Auxiliary tasks occupy bits 1..K in declaration order, so a TaskSet maps
bijectively onto an integer combination index over auxiliary subsets.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator


class TaskId(IntEnum):
    """Task identifiers; the enum value is the task's bit position."""

    ASR = 0
    SCD = 1
    ENDPOINT = 2
    NER = 3
    LID = 4


AUX_TASKS: tuple[TaskId, ...] = (TaskId.SCD, TaskId.ENDPOINT, TaskId.NER, TaskId.LID)
NUM_AUX_TASKS: int = len(AUX_TASKS)

_NAME_TO_TASK = {t.name.lower(): t for t in TaskId}


def task_from_name(name: str) -> TaskId:
    try:
        return _NAME_TO_TASK[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown task name: {name!r} (expected one of {sorted(_NAME_TO_TASK)})") from None


@dataclass(frozen=True)
class TaskSet:
    """Immutable set of active tasks encoded as a bitmask (bit 0 = ASR)."""

    mask: int

    def __post_init__(self) -> None:
        if self.mask & 1 == 0:
            raise ValueError("ASR must be active in every TaskSet")
        if self.mask >> len(TaskId):
            raise ValueError(f"mask {self.mask:#x} has bits beyond the known tasks")

    @classmethod
    def of(cls, *tasks: TaskId) -> "TaskSet":
        mask = 1  # ASR always active
        for t in tasks:
            mask |= 1 << TaskId(t)
        return cls(mask)

    @classmethod
    def from_iterable(cls, tasks: Iterable[TaskId]) -> "TaskSet":
        return cls.of(*tasks)

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "TaskSet":
        return cls.of(*(task_from_name(n) for n in names))

    @classmethod
    def asr_only(cls) -> "TaskSet":
        return cls(1)

    @classmethod
    def all_tasks(cls, num_aux: int = NUM_AUX_TASKS) -> "TaskSet":
        if not 0 <= num_aux <= NUM_AUX_TASKS:
            raise ValueError(f"num_aux must be in [0, {NUM_AUX_TASKS}]")
        return cls((1 << (num_aux + 1)) - 1)

    @classmethod
    def from_combination_index(cls, index: int, num_aux: int) -> "TaskSet":
        """Inverse of combination_index over auxiliary subsets."""
        if not 0 <= index < (1 << num_aux):
            raise ValueError(f"combination index {index} out of range for K={num_aux}")
        return cls((index << 1) | 1)

    def combination_index(self, num_aux: int) -> int:
        """Integer encoding of auxiliary membership bits, in [0, 2^K - 1]."""
        if self.mask >> (num_aux + 1):
            raise ValueError(f"TaskSet {self.names()} has tasks beyond K={num_aux}")
        return self.mask >> 1

    def __contains__(self, task: TaskId) -> bool:
        return bool(self.mask >> TaskId(task) & 1)

    def __iter__(self) -> Iterator[TaskId]:
        return (t for t in TaskId if t in self)

    def __or__(self, other: "TaskSet") -> "TaskSet":
        return TaskSet(self.mask | other.mask)

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def aux(self) -> tuple[TaskId, ...]:
        return tuple(t for t in AUX_TASKS if t in self)

    def names(self) -> tuple[str, ...]:
        return tuple(t.name.lower() for t in self)

    def is_subset(self, other: "TaskSet") -> bool:
        return self.mask & other.mask == self.mask

    def __repr__(self) -> str:
        return f"TaskSet({'+'.join(self.names())})"
