import json

import numpy as np
import pytest
from scipy.stats import chi2

from ocl.core.errors import EmptyBatch, EmptyBuffer, NoClassInfo
from ocl.core.replay import (
    Batch,
    ReplayBuffer,
    concat_batches,
    distinct_classes,
    dump_jsonl,
    reservoir_update,
    sample,
)


def _ids(n):
    return Batch(np.arange(n, dtype=np.float64)[:, None], np.arange(n))


def _inclusion_counts(capacity, n, trials, seed):
    rng = np.random.default_rng(seed)
    counts = np.zeros(n)
    stream = _ids(n)
    for _ in range(trials):
        buf = ReplayBuffer(capacity)
        # offer in uneven chunks: batching must not matter
        reservoir_update(buf, Batch(stream.inputs[:3], stream.targets[:3]), rng)
        reservoir_update(buf, Batch(stream.inputs[3:], stream.targets[3:]), rng)
        counts[buf.targets[: buf.size]] += 1
    return counts


TRIALS = 100_000


@pytest.mark.parametrize("capacity,n", [(1, 5), (10, 30), (100, 150)])
def test_reservoir_inclusion_is_uniform(capacity, n):
    trials = TRIALS
    counts = _inclusion_counts(capacity, n, trials, seed=capacity)
    assert counts.sum() == capacity * trials
    expected = trials * capacity / n
    stat = float(np.sum((counts - expected) ** 2 / expected))
    p_value = chi2.sf(stat, df=n - 1)
    assert p_value > 0.01, f"chi2={stat:.1f} p={p_value:.2e}"


def test_buffer_fills_before_replacing():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(4)
    reservoir_update(buf, _ids(3), rng)
    assert len(buf) == 3 and buf.seen == 3
    assert list(buf.targets[:3]) == [0, 1, 2]
    reservoir_update(buf, _ids(10), rng)
    assert len(buf) == 4 and buf.seen == 13
    assert reservoir_update(buf, Batch(np.empty((0, 1)), np.empty(0)), rng) is buf


def test_sample_without_replacement_when_possible():
    rng = np.random.default_rng(1)
    buf = reservoir_update(ReplayBuffer(10), _ids(10), rng)
    drawn = sample(buf, 10, rng)
    assert sorted(drawn.targets) == list(range(10))
    assert len(sample(buf, 25, rng)) == 25
    with pytest.raises(EmptyBuffer):
        sample(ReplayBuffer(3), 1, rng)


def test_distinct_classes():
    rng = np.random.default_rng(2)
    buf = reservoir_update(ReplayBuffer(6), Batch(np.zeros((5, 2)), np.array([3, 3, 1, 7, 1])), rng)
    assert distinct_classes(buf) == 3
    assert distinct_classes(ReplayBuffer(2)) == 0
    with pytest.raises(NoClassInfo):
        distinct_classes(ReplayBuffer(2, track_classes=False))


def test_concat_marks_buffer_part():
    batch, mask = concat_batches(_ids(2), _ids(3))
    assert len(batch) == 5
    assert mask.tolist() == [False, False, True, True, True]
    batch, mask = concat_batches(_ids(2), None)
    assert not mask.any()
    with pytest.raises(EmptyBatch):
        concat_batches(None, None)


def test_capacity_must_be_positive():
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_dump_jsonl(tmp_path):
    buf = reservoir_update(ReplayBuffer(3), _ids(2), np.random.default_rng(3))
    path = tmp_path / "buffer.jsonl"
    dump_jsonl(buf, path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["slot"] for r in lines] == [0, 1]
    assert lines[1]["input"] == [1.0]
