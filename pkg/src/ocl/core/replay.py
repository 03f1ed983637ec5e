"""Reservoir replay buffer (Vitter's Algorithm R, one decision per example)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ocl.core.errors import EmptyBatch, EmptyBuffer, NoClassInfo


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def concat_batches(*batches: Batch | None) -> tuple[Batch, np.ndarray]:
    """Join batches in order; returns the batch and a per-example flag for non-first parts."""
    parts = [b for b in batches if b is not None and len(b) > 0]
    if not parts:
        raise EmptyBatch("[replay] nothing to concatenate")
    inputs = np.concatenate([p.inputs for p in parts])
    targets = np.concatenate([p.targets for p in parts])
    first = batches[0]
    n_first = len(first) if first is not None else 0
    mask = np.zeros(inputs.shape[0], dtype=bool)
    mask[n_first:] = True
    return Batch(inputs, targets), mask


@dataclass
class ReplayBuffer:
    """
    Fixed-capacity reservoir. Storage is allocated on the first offered
    example; `track_classes` marks class-incremental use where targets are
    class ids.
    """

    capacity: int
    track_classes: bool = True
    seen: int = 0
    size: int = 0
    inputs: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"[replay] capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return self.size

    def _allocate(self, batch: Batch) -> None:
        self.inputs = np.empty((self.capacity,) + batch.inputs.shape[1:], dtype=batch.inputs.dtype)
        self.targets = np.empty((self.capacity,) + batch.targets.shape[1:], dtype=batch.targets.dtype)

    def contents(self) -> Batch:
        if self.inputs is None:
            return Batch(np.empty((0,)), np.empty((0,)))
        return Batch(self.inputs[: self.size].copy(), self.targets[: self.size].copy())


def reservoir_update(buf: ReplayBuffer, batch: Batch, rng: np.random.Generator) -> ReplayBuffer:
    """
    Offer every example of `batch` in order; mutates and returns `buf`.

    The i-th example ever offered draws j uniform in [0, i) and replaces slot
    j when j < capacity. Draws for a batch are made together; when two
    examples of one batch pick the same slot the later one wins.
    """
    n = len(batch)
    if n == 0:
        return buf
    if buf.inputs is None:
        buf._allocate(batch)
    fill = min(buf.capacity - buf.size, n)
    if fill:
        buf.inputs[buf.size : buf.size + fill] = batch.inputs[:fill]
        buf.targets[buf.size : buf.size + fill] = batch.targets[:fill]
        buf.size += fill
        buf.seen += fill
    rest = n - fill
    if rest:
        draws = rng.integers(0, buf.seen + 1 + np.arange(rest))
        kept = np.flatnonzero(draws < buf.capacity)
        # last writer per slot
        slots_rev = draws[kept][::-1]
        slots, first = np.unique(slots_rev, return_index=True)
        src = fill + kept[::-1][first]
        buf.inputs[slots] = batch.inputs[src]
        buf.targets[slots] = batch.targets[src]
        buf.seen += rest
    return buf


def sample(buf: ReplayBuffer, m: int, rng: np.random.Generator) -> Batch:
    """`m` stored examples, without replacement unless `m` exceeds the size."""
    if buf.size == 0:
        raise EmptyBuffer("[replay] cannot sample from an empty buffer")
    idx = rng.choice(buf.size, size=m, replace=m > buf.size)
    return Batch(buf.inputs[idx].copy(), buf.targets[idx].copy())


def distinct_classes(buf: ReplayBuffer) -> int:
    if not buf.track_classes:
        raise NoClassInfo("[replay] buffer holds no class ids (domain-incremental mode)")
    if buf.size == 0:
        return 0
    return int(np.unique(buf.targets[: buf.size].reshape(buf.size, -1)[:, 0]).size)


def dump_jsonl(buf: ReplayBuffer, path: str | Path) -> None:
    """Debug dump of the buffer contents, one example per line."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    contents = buf.contents()
    df = pd.DataFrame(
        {
            "slot": np.arange(buf.size),
            "target": [np.atleast_1d(t).tolist() for t in contents.targets],
            "input": [np.asarray(x).tolist() for x in contents.inputs],
        }
    )
    df.to_json(p, orient="records", lines=True)
