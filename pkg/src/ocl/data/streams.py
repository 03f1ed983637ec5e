# src/ocl/data/streams.py
"""
Nonstationary single-pass streams.

Three task sequences are provided:
  - a synthetic linear-regression sequence (convex setting),
  - class-incremental splits of a labelled dataset,
  - a domain-incremental rotation sequence built from square images.

`stream_iter` walks the tasks once, shuffling inside each task. Strategies
only ever see inputs and targets; `is_first_of_task` and `tasks_seen` are for
the runner (evaluation scope, diagnostics, trajectory checkpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import ortho_group

from ocl.core.errors import InsufficientClasses, NotSquareInput, ShapeMismatch
from ocl.core.replay import Batch


# --------- Types ---------
@dataclass(frozen=True, eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch(
                f"[streams] {self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass(frozen=True, eq=False)
class TaskSpec:
    task_id: int
    train: Batch
    eval: Batch
    class_set: tuple[int, ...] | None = None  # class-incremental
    angle: float | None = None  # domain-incremental
    w_true: np.ndarray | None = None  # linear regression


@dataclass(frozen=True, eq=False)
class StreamBatch:
    inputs: np.ndarray
    targets: np.ndarray
    global_step: int
    is_first_of_task: bool
    tasks_seen: int
    # holds the final example of some task
    is_last_of_task: bool = False

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def as_batch(self) -> Batch:
        return Batch(self.inputs, self.targets)


# --------- Linear regression ---------
def gen_linear_stream(
    seed: int,
    *,
    n_tasks: int = 10,
    samples_per_task: int = 1000,
    eval_per_task: int = 200,
    dim: int = 10,
    noise_var: float = 0.01,
    eig_range: tuple[float, float] = (0.1, 10.0),
) -> list[TaskSpec]:
    """
    Each task draws its own Gaussian input distribution (random rotation,
    log-uniform eigenvalues, standard-normal mean) and its own true weights;
    targets are ``x @ w_true + N(0, noise_var)``.
    """
    rng = np.random.default_rng(seed)
    lo, hi = np.log(eig_range[0]), np.log(eig_range[1])
    noise_sd = math.sqrt(noise_var)
    tasks = []
    for t in range(n_tasks):
        eig = np.exp(rng.uniform(lo, hi, size=dim))
        q = ortho_group.rvs(dim, random_state=rng)
        chol = q * np.sqrt(eig)  # q @ diag(sqrt(eig))
        mean = rng.standard_normal(dim)
        w_true = rng.standard_normal(dim)

        def draw(n: int) -> Batch:
            x = mean + rng.standard_normal((n, dim)) @ chol.T
            y = x @ w_true + noise_sd * rng.standard_normal(n)
            return Batch(x, y[:, None])

        tasks.append(TaskSpec(task_id=t, train=draw(samples_per_task), eval=draw(eval_per_task), w_true=w_true))
    return tasks


# --------- Class-incremental ---------
def _split_indices(
    idx: np.ndarray, eval_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.permutation(idx)
    n_eval = int(round(eval_fraction * idx.size))
    if idx.size >= 2:
        n_eval = min(max(n_eval, 1), idx.size - 1)
    else:
        n_eval = 0
    return np.sort(idx[n_eval:]), np.sort(idx[:n_eval])


def gen_class_incremental(
    dataset: LabeledDataset,
    n_tasks: int,
    classes_per_task: int,
    seed: int,
    *,
    eval_fraction: float = 0.1,
) -> list[TaskSpec]:
    """Classes in label order, `classes_per_task` per task, 90/10 split per class."""
    classes = dataset.classes
    need = n_tasks * classes_per_task
    if n_tasks < 1 or classes_per_task < 1 or need > classes.size:
        raise InsufficientClasses(
            f"[streams] {n_tasks} tasks x {classes_per_task} classes needs {need}, "
            f"dataset '{dataset.name}' has {classes.size}"
        )
    rng = np.random.default_rng(seed)
    tasks = []
    for t in range(n_tasks):
        class_set = tuple(int(c) for c in classes[t * classes_per_task : (t + 1) * classes_per_task])
        train_idx, eval_idx = [], []
        for c in class_set:
            tr, ev = _split_indices(np.flatnonzero(dataset.labels == c), eval_fraction, rng)
            train_idx.append(tr)
            eval_idx.append(ev)
        tr = np.concatenate(train_idx)
        ev = np.concatenate(eval_idx)
        tasks.append(
            TaskSpec(
                task_id=t,
                train=Batch(dataset.inputs[tr], dataset.labels[tr]),
                eval=Batch(dataset.inputs[ev], dataset.labels[ev]),
                class_set=class_set,
            )
        )
    return tasks


# --------- Domain-incremental rotation ---------
def square_side(dim: int) -> int:
    side = math.isqrt(dim)
    if side * side != dim:
        raise NotSquareInput(f"[streams] input dim {dim} is not a square image")
    return side


def rotate_images(inputs: np.ndarray, angle: float) -> np.ndarray:
    """Nearest-neighbour rotation of flattened square images, same shape out."""
    n, dim = inputs.shape
    side = square_side(dim)
    if angle % 360.0 == 0.0:
        return inputs.copy()
    imgs = inputs.reshape(n, side, side)
    out = ndimage.rotate(imgs, angle, axes=(1, 2), reshape=False, order=0, mode="constant", cval=0.0)
    return out.reshape(n, dim)


def gen_rotation_stream(
    base: LabeledDataset,
    n_tasks: int,
    max_angle: float,
    seed: int,
    *,
    per_task: int | None = None,
    eval_fraction: float = 0.1,
) -> list[TaskSpec]:
    """
    Task t rotates every image by ``t * max_angle / (n_tasks - 1)`` degrees.

    The base set is split once into train/eval so that no eval image (in any
    rotation) is trained on. `per_task` subsamples the train pool per task.
    """
    square_side(base.inputs.shape[1])
    if n_tasks < 1:
        raise ValueError(f"[streams] n_tasks must be >= 1, got {n_tasks}")
    rng = np.random.default_rng(seed)
    train_idx, eval_idx = _split_indices(np.arange(len(base)), eval_fraction, rng)
    step = max_angle / (n_tasks - 1) if n_tasks > 1 else 0.0
    tasks = []
    for t in range(n_tasks):
        angle = t * step
        tr = train_idx
        if per_task is not None and per_task < tr.size:
            tr = np.sort(rng.choice(tr, size=per_task, replace=False))
        tasks.append(
            TaskSpec(
                task_id=t,
                train=Batch(rotate_images(base.inputs[tr], angle), base.labels[tr]),
                eval=Batch(rotate_images(base.inputs[eval_idx], angle), base.labels[eval_idx]),
                angle=angle,
            )
        )
    return tasks


# --------- Iteration ---------
def truncate_tasks(tasks: Sequence[TaskSpec], k: int | None) -> list[TaskSpec]:
    if k is None:
        return list(tasks)
    if k < 1:
        raise ValueError(f"[streams] cannot keep {k} tasks")
    return list(tasks[:k])


def stream_iter(
    tasks: Sequence[TaskSpec], new_batch_size: int, seed: int
) -> Iterator[StreamBatch]:
    """
    Single pass over all training examples, tasks in order, shuffled within a
    task. The last batch of a task may run into the next one.
    """
    if new_batch_size < 1:
        raise ValueError(f"[streams] batch size must be >= 1, got {new_batch_size}")
    rng = np.random.default_rng(seed)
    xs, ys, owner = [], [], []
    for i, task in enumerate(tasks):
        perm = rng.permutation(len(task.train))
        xs.append(task.train.inputs[perm])
        ys.append(task.train.targets[perm])
        owner.append(np.full(len(task.train), i))
    if not xs:
        return
    inputs = np.concatenate(xs)
    targets = np.concatenate(ys)
    owner_ids = np.concatenate(owner)
    starts = np.zeros(owner_ids.size, dtype=bool)
    starts[0] = True
    starts[1:] = owner_ids[1:] != owner_ids[:-1]
    ends = np.zeros(owner_ids.size, dtype=bool)
    ends[-1] = True
    ends[:-1] = starts[1:]
    for step, lo in enumerate(range(0, inputs.shape[0], new_batch_size)):
        hi = min(lo + new_batch_size, inputs.shape[0])
        yield StreamBatch(
            inputs=inputs[lo:hi],
            targets=targets[lo:hi],
            global_step=step,
            is_first_of_task=bool(starts[lo:hi].any()),
            tasks_seen=int(owner_ids[hi - 1]) + 1,
            is_last_of_task=bool(ends[lo:hi].any()),
        )
