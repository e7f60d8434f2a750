import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unmt_curriculum.difficulty import DifficultyTable
from unmt_curriculum.scheduler import (
    CompetenceSchedule,
    CurriculumScheduler,
    SchedulerError,
    competence,
    pack_batches,
    start_phase,
)


def test_competence_boundaries():
    assert competence(0, 0.01, 2, 100) == 0.01
    assert competence(100, 0.01, 2, 100) == 1.0
    assert competence(1000, 0.01, 2, 100) == 1.0


def test_competence_half_horizon():
    expected = math.sqrt(0.5 * (1 - 0.0001) + 0.0001)
    assert competence(50, 0.01, 2, 100) == pytest.approx(expected, rel=1e-12)
    assert competence(50, 0.01, 2, 100) == pytest.approx(0.707142, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(c0=st.floats(0.001, 1.0), p=st.floats(1.0, 5.0), T=st.integers(1, 10**5),
       t1=st.integers(0, 2 * 10**5), t2=st.integers(0, 2 * 10**5))
def test_competence_monotone_and_bounded(c0, p, T, t1, t2):
    a, b = sorted((t1, t2))
    ca, cb = competence(a, c0, p, T), competence(b, c0, p, T)
    assert c0 - 1e-12 <= ca <= cb <= 1.0


def test_schedule_validation():
    with pytest.raises(ValueError):
        CompetenceSchedule(c0=0)
    with pytest.raises(ValueError):
        CompetenceSchedule(p=0.5)
    with pytest.raises(ValueError):
        CompetenceSchedule(T=0)
    with pytest.raises(ValueError):
        competence(-1, 0.1, 2, 10)


def table(values):
    return DifficultyTable("xling", np.array(values, float), np.array(values, float))


def test_threshold_inclusive():
    sched = CompetenceSchedule(c0=0.5, p=2, T=10)
    ph = start_phase(0, table([0.0, 0.5, 0.9]), [1, 1, 1], sched, 100, seed=0)
    assert sorted(ph.eligible_indices.tolist()) == [0, 1]


def test_full_competence_takes_everything():
    sched = CompetenceSchedule(c0=0.1, p=2, T=10)
    ph = start_phase(10, table([0.0, 0.5, 1.0]), [1, 1, 1], sched, 100, seed=0)
    assert sorted(ph.eligible_indices.tolist()) == [0, 1, 2]


def test_empty_eligible_set_errors():
    sched = CompetenceSchedule(c0=0.01, p=2, T=10)
    with pytest.raises(SchedulerError):
        start_phase(0, table([0.5, 1.0]), [1, 1], sched, 100, seed=0)


def test_pack_batches_singleton_oversize():
    assert pack_batches([0, 1, 2], [3, 10, 3], 5) == [[0], [1], [2]]
    assert pack_batches([0, 1, 2], [2, 2, 2], 4) == [[0, 1], [2]]


def test_phase_partition_and_caps():
    rng = np.random.default_rng(0)
    diffs = rng.uniform(0, 1, 200)
    lengths = rng.integers(1, 30, 200)
    sched = CompetenceSchedule(c0=0.3, p=2, T=100)
    ph = start_phase(20, table(diffs), lengths, sched, 50, seed=3)
    c = sched(20)
    served = [i for b in ph.batches for i in b]
    assert sorted(served) == sorted(np.flatnonzero(diffs <= c).tolist())
    assert len(served) == len(set(served))
    for b in ph.batches:
        assert sum(lengths[i] for i in b) <= 50 or len(b) == 1


def test_phase_is_seed_deterministic():
    rng = np.random.default_rng(1)
    diffs, lengths = rng.uniform(0, 1, 50), rng.integers(1, 9, 50)
    a = start_phase(0, table(diffs), lengths, None, 20, seed=7)
    b = start_phase(0, table(diffs), lengths, None, 20, seed=7)
    c = start_phase(0, table(diffs), lengths, None, 20, seed=8)
    assert a.batches == b.batches
    assert a.batches != c.batches


def test_fresh_phase_serves_each_batch_once():
    diffs = np.zeros(6)
    s = CurriculumScheduler(table(diffs), [2] * 6, None, batch_tokens=4, seed=0)
    s.start_phase(0)
    expected = [list(b) for b in s.phase.batches]
    assert len(expected) == 3
    got = [s.next_batch(0) for _ in range(3)]
    assert got == expected
    assert s.phases_started == 1
    s.next_batch(0)
    assert s.phases_started == 2


def test_rephase_past_T_covers_corpus():
    diffs = np.linspace(0, 1, 20)
    s = CurriculumScheduler(table(diffs), [1] * 20, CompetenceSchedule(0.1, 2, 10), 100, seed=0)
    first = s.next_batch(0)
    assert max(diffs[first]) <= 0.1
    second = s.next_batch(50)
    assert sorted(second) == list(range(20))


def test_scripted_run_respects_competence():
    rng = np.random.default_rng(2)
    diffs = rng.uniform(0, 1, 300)
    diffs[0] = 0.0
    sched = CompetenceSchedule(c0=0.25, p=2, T=100)
    s = CurriculumScheduler(table(diffs), rng.integers(1, 10, 300), sched, batch_tokens=40, seed=1)
    batch = s.next_batch(0)
    assert max(diffs[batch]) <= 0.25
    for t in range(1, 150):
        batch = s.next_batch(t)
        assert max(diffs[batch]) <= s.phase.competence_at_start
        assert s.phase.competence_at_start <= sched(t)


def test_c0_one_is_plain_loader():
    rng = np.random.default_rng(4)
    diffs, lengths = rng.uniform(0, 1, 40), rng.integers(1, 9, 40)
    a = CurriculumScheduler(table(diffs), lengths, CompetenceSchedule(1.0, 2, 10), 30, seed=5)
    b = CurriculumScheduler(table(diffs), lengths, None, 30, seed=5)
    assert [a.next_batch(t) for t in range(30)] == [b.next_batch(t) for t in range(30)]


def test_phase_events_and_state_roundtrip():
    events = []
    diffs = np.linspace(0, 1, 10)
    s = CurriculumScheduler(table(diffs), [1] * 10, CompetenceSchedule(0.5, 2, 10), 3, seed=0,
                            on_phase=events.append)
    for t in range(4):
        s.next_batch(t)
    assert events[0] == {"step": 0, "competence": 0.5, "eligible_count": 5}
    clone = CurriculumScheduler(table(diffs), [1] * 10, CompetenceSchedule(0.5, 2, 10), 3, seed=0)
    clone.load_state_dict(s.state_dict())
    assert [s.next_batch(t) for t in range(4, 12)] == [clone.next_batch(t) for t in range(4, 12)]
