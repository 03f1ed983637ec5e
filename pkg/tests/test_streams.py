import math

import numpy as np
import pytest

from ocl.core.errors import InsufficientClasses, NotSquareInput
from ocl.core.replay import Batch
from ocl.data.idx import load_mnist, mnist_available, read_idx, write_idx
from ocl.data.streams import (
    LabeledDataset,
    TaskSpec,
    gen_class_incremental,
    gen_linear_stream,
    gen_rotation_stream,
    rotate_images,
    stream_iter,
    truncate_tasks,
)
from ocl.data.synthetic import gaussian_blobs


def _blobs(n_classes=10, per_class=20, dim=16, seed=0):
    x, y = gaussian_blobs(n_classes, per_class, dim, seed)
    return LabeledDataset(x, y, name="blobs")


def test_linear_stream_shapes_and_determinism():
    a = gen_linear_stream(3, n_tasks=4, samples_per_task=50, eval_per_task=10, dim=5)
    b = gen_linear_stream(3, n_tasks=4, samples_per_task=50, eval_per_task=10, dim=5)
    assert len(a) == 4
    assert a[0].train.inputs.shape == (50, 5) and a[0].train.targets.shape == (50, 1)
    assert a[0].eval.inputs.shape == (10, 5)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.train.inputs, tb.train.inputs)
        assert np.array_equal(ta.w_true, tb.w_true)
    assert not np.allclose(a[0].w_true, a[1].w_true)


def test_linear_stream_targets_follow_true_weights():
    (task,) = gen_linear_stream(11, n_tasks=1, samples_per_task=5000, dim=10)
    x = task.train.inputs
    coef, *_ = np.linalg.lstsq(x, task.train.targets[:, 0], rcond=None)
    assert np.max(np.abs(coef - task.w_true)) < 0.1
    resid = task.train.targets[:, 0] - x @ task.w_true
    assert abs(resid.var() - 0.01) < 0.002


def test_class_incremental_splits_in_label_order():
    tasks = gen_class_incremental(_blobs(), 5, 2, seed=0)
    assert [t.class_set for t in tasks] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    for t in tasks:
        assert set(np.unique(t.train.targets)) == set(t.class_set)
        assert set(np.unique(t.eval.targets)) == set(t.class_set)
        assert len(t.train) + len(t.eval) == 40
        # 10% of 20 per class held out
        assert len(t.eval) == 4


def test_class_incremental_needs_enough_classes():
    with pytest.raises(InsufficientClasses):
        gen_class_incremental(_blobs(n_classes=4), 3, 2, seed=0)


def test_rotation_identity_and_half_turns():
    x, _ = gaussian_blobs(3, 4, 25, seed=1)
    assert np.array_equal(rotate_images(x, 0.0), x)
    assert np.array_equal(rotate_images(x, 360.0), x)
    twice = rotate_images(rotate_images(x, 180.0), 180.0)
    assert np.allclose(twice, x)
    assert not np.allclose(rotate_images(x, 90.0), x)
    with pytest.raises(NotSquareInput):
        rotate_images(np.ones((2, 10)), 30.0)


def test_rotation_stream_angles_and_labels():
    base = _blobs(dim=16)
    tasks = gen_rotation_stream(base, 4, 90.0, seed=2, per_task=50)
    assert [t.angle for t in tasks] == [0.0, 30.0, 60.0, 90.0]
    for t in tasks:
        assert len(t.train) == 50
        # same eval images under every rotation
        assert np.array_equal(t.eval.targets, tasks[0].eval.targets)
    train_rows = {row.tobytes() for row in tasks[0].train.inputs}
    assert not any(row.tobytes() in train_rows for row in tasks[0].eval.inputs)
    with pytest.raises(NotSquareInput):
        gen_rotation_stream(_blobs(dim=10), 2, 90.0, seed=0)


def test_stream_iter_single_pass():
    tasks = gen_class_incremental(_blobs(), 3, 2, seed=0)
    total = sum(len(t.train) for t in tasks)
    batches = list(stream_iter(tasks, 7, seed=5))
    assert len(batches) == math.ceil(total / 7)
    assert [b.global_step for b in batches] == list(range(len(batches)))
    assert sum(len(b) for b in batches) == total
    assert batches[0].is_first_of_task and batches[0].tasks_seen == 1
    assert batches[-1].tasks_seen == 3
    assert sum(b.is_first_of_task for b in batches) == 3
    seen = np.concatenate([b.targets for b in batches])
    expected = np.concatenate([t.train.targets for t in tasks])
    assert sorted(seen.tolist()) == sorted(expected.tolist())
    # tasks arrive in order
    assert np.all(np.diff(seen // 2) >= 0)


def test_stream_iter_flags_batches_that_close_a_task():
    tasks = [
        TaskSpec(
            task_id=t,
            train=Batch(np.full((5, 1), float(t)), np.full(5, t)),
            eval=Batch(np.zeros((1, 1)), np.zeros(1)),
        )
        for t in range(2)
    ]
    batches = list(stream_iter(tasks, 3, seed=0))
    # rows 0-2 | 3-5 | 6-8 | 9: the second batch holds the end of task 0
    assert [b.is_first_of_task for b in batches] == [True, True, False, False]
    assert [b.is_last_of_task for b in batches] == [False, True, False, True]
    assert [b.tasks_seen for b in batches] == [1, 2, 2, 2]


def test_stream_iter_deterministic():
    tasks = gen_class_incremental(_blobs(), 2, 2, seed=0)
    a = [b.inputs for b in stream_iter(tasks, 10, seed=9)]
    b = [b.inputs for b in stream_iter(tasks, 10, seed=9)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        next(stream_iter(tasks, 0, seed=0))


def test_truncate_tasks():
    tasks = gen_class_incremental(_blobs(), 5, 2, seed=0)
    assert len(truncate_tasks(tasks, 2)) == 2
    assert len(truncate_tasks(tasks, None)) == 5
    with pytest.raises(ValueError):
        truncate_tasks(tasks, 0)


def test_idx_roundtrip_and_mnist_layout(tmp_path):
    images = (np.arange(2 * 28 * 28) % 256).astype(np.uint8).reshape(2, 28, 28)
    labels = np.array([3, 7], dtype=np.uint8)
    write_idx(tmp_path / "train-images-idx3-ubyte.gz", images)
    write_idx(tmp_path / "train-labels-idx1-ubyte", labels)
    assert np.array_equal(read_idx(tmp_path / "train-images-idx3-ubyte.gz"), images)
    assert mnist_available(tmp_path)
    assert not mnist_available(None)
    x, y = load_mnist(tmp_path, "train")
    assert x.shape == (2, 784) and x.max() <= 1.0
    assert y.tolist() == [3, 7]


def test_idx_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"\x01\x02\x08\x01" + b"\x00" * 8)
    with pytest.raises(ValueError):
        read_idx(p)
