"""Competence-based phased batch scheduling."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .difficulty import DifficultyTable

logger = logging.getLogger(__name__)

DEFAULT_BATCH_TOKENS = 2000


class SchedulerError(RuntimeError):
    pass


@dataclass(frozen=True)
class CompetenceSchedule:
    c0: float = 0.01
    p: float = 2.0
    T: int = 10000

    def __post_init__(self):
        if not 0 < self.c0 <= 1:
            raise ValueError(f"c0 must be in (0, 1], got {self.c0}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    def __call__(self, t: float) -> float:
        return competence(t, self.c0, self.p, self.T)


def competence(t: float, c0: float, p: float, T: float) -> float:
    """min(1, (t/T * (1 - c0^p) + c0^p) ** (1/p))."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t >= T:
        return 1.0
    if t == 0:
        return c0
    c0p = c0 ** p
    return min(1.0, (t / T * (1.0 - c0p) + c0p) ** (1.0 / p))


def pack_batches(order: Sequence[int], lengths: Sequence[int], batch_tokens: int) -> List[List[int]]:
    """Greedy fill in the given order; a sentence longer than the cap goes alone."""
    batches: List[List[int]] = []
    cur: List[int] = []
    used = 0
    for idx in order:
        n = int(lengths[idx])
        if cur and used + n > batch_tokens:
            batches.append(cur)
            cur, used = [], 0
        cur.append(int(idx))
        used += n
    if cur:
        batches.append(cur)
    return batches


@dataclass
class Phase:
    index: int
    step: int
    competence_at_start: float
    eligible_indices: np.ndarray
    batches: List[List[int]]
    cursor: int = 0

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.batches)

    def state_dict(self) -> dict:
        return {"index": self.index, "step": self.step,
                "competence_at_start": self.competence_at_start,
                "eligible_indices": self.eligible_indices.tolist(),
                "batches": self.batches, "cursor": self.cursor}

    @classmethod
    def from_state(cls, state: dict) -> "Phase":
        return cls(state["index"], state["step"], state["competence_at_start"],
                   np.array(state["eligible_indices"], dtype=np.int64),
                   [list(b) for b in state["batches"]], state["cursor"])


def start_phase(t: int, table: DifficultyTable, lengths: Sequence[int],
                schedule: Optional[CompetenceSchedule], batch_tokens: int,
                seed, index: int = 0) -> Phase:
    """Select sentences with normalised difficulty <= c(t), pack and shuffle batches.

    ``schedule=None`` admits every sentence (plain shuffled loader).
    """
    c = 1.0 if schedule is None else schedule(t)
    eligible = np.flatnonzero(table.normalized <= c)
    if eligible.size == 0:
        raise SchedulerError(f"no sentence has difficulty <= {c:.6g} at step {t}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(eligible)
    batches = pack_batches(order, lengths, batch_tokens)
    perm = rng.permutation(len(batches))
    batches = [batches[i] for i in perm]
    return Phase(index, t, c, eligible, batches)


class CurriculumScheduler:
    """Serves batches phase by phase for one monolingual corpus.

    Competence is frozen for the lifetime of a phase; a new phase starts at
    the current step once every batch of the old one has been served.
    """

    def __init__(self, table: DifficultyTable, lengths: Sequence[int],
                 schedule: Optional[CompetenceSchedule] = None,
                 batch_tokens: int = DEFAULT_BATCH_TOKENS, seed: int = 0, name: str = "",
                 on_phase: Optional[Callable[[dict], None]] = None):
        if len(table) != len(lengths):
            raise ValueError("difficulty table and lengths differ in size")
        self.table = table
        self.lengths = np.asarray(lengths, dtype=np.int64)
        self.schedule = schedule
        self.batch_tokens = batch_tokens
        self.seed = seed
        self.name = name
        self.on_phase = on_phase
        self.phase: Optional[Phase] = None
        self.phases_started = 0

    def start_phase(self, t: int) -> Phase:
        seed = np.random.SeedSequence([self.seed, self.phases_started])
        self.phase = start_phase(t, self.table, self.lengths, self.schedule,
                                 self.batch_tokens, seed, self.phases_started)
        self.phases_started += 1
        event = {"step": t, "competence": self.phase.competence_at_start,
                 "eligible_count": int(self.phase.eligible_indices.size)}
        if self.name:
            event["stream"] = self.name
        logger.debug("phase %s", json.dumps(event))
        if self.on_phase is not None:
            self.on_phase(event)
        return self.phase

    def next_batch(self, t: int) -> List[int]:
        if self.phase is None or self.phase.exhausted:
            self.start_phase(t)
        batch = self.phase.batches[self.phase.cursor]
        self.phase.cursor += 1
        return batch

    @property
    def competence(self) -> float:
        return 1.0 if self.phase is None else self.phase.competence_at_start

    def state_dict(self) -> dict:
        return {"phases_started": self.phases_started,
                "phase": None if self.phase is None else self.phase.state_dict()}

    def load_state_dict(self, state: dict) -> None:
        self.phases_started = state["phases_started"]
        self.phase = None if state["phase"] is None else Phase.from_state(state["phase"])
