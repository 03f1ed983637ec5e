# src/ocl/analysis/metrics.py
"""
Continual evaluation metrics.

The accuracy matrix keeps one row per evaluation step and one column per
task; cells for tasks not yet encountered are NaN. Every scalar metric is a
pure function of the matrix, so the CSV on disk is enough to recompute any
of them later.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from ocl.core.nn import Network, forward
from ocl.core.replay import Batch

# Worst-case accuracy: per-step minimum over every encountered task
# (current one included), averaged over evaluation steps.
WC_ACC_DEFINITION = "mean_t min_{i <= current(t)} acc[t][i]"


# --------- Accuracy matrix ---------
@dataclass
class AccuracyMatrix:
    n_tasks: int
    steps: list[int] = field(default_factory=list)
    tasks_seen: list[int] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)

    def append(self, step: int, accs: Sequence[float]) -> None:
        accs = np.asarray(accs, dtype=np.float64)
        if accs.size > self.n_tasks:
            raise ValueError(f"[metrics] {accs.size} accuracies for {self.n_tasks} tasks")
        row = np.full(self.n_tasks, np.nan)
        row[: accs.size] = accs
        self.steps.append(int(step))
        self.tasks_seen.append(int(accs.size))
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def values(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, self.n_tasks))
        return np.vstack(self.rows)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=[f"task_{i}" for i in range(self.n_tasks)])
        df.insert(0, "tasks_seen", self.tasks_seen)
        df.insert(0, "step", self.steps)
        return df

    def to_csv(self, path: str | Path) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(p, index=False, float_format="%.17g")
        return p

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "AccuracyMatrix":
        task_cols = [c for c in df.columns if c.startswith("task_")]
        mat = cls(n_tasks=len(task_cols))
        for _, r in df.iterrows():
            seen = int(r["tasks_seen"])
            mat.append(int(r["step"]), r[task_cols].to_numpy(dtype=np.float64)[:seen])
        return mat

    @classmethod
    def from_csv(cls, path: str | Path) -> "AccuracyMatrix":
        return cls.from_frame(pd.read_csv(path))


def _require_rows(mat: AccuracyMatrix) -> np.ndarray:
    if len(mat) == 0:
        raise ValueError("[metrics] accuracy matrix has no rows")
    return mat.values


def accuracy(net: Network, batch: Batch) -> float:
    if len(batch) == 0:
        raise ValueError("[metrics] empty eval set")
    preds = forward(net, batch.inputs).outputs.argmax(axis=1)
    return float(np.mean(preds == np.asarray(batch.targets).reshape(-1)))


def evaluate(net: Network, tasks_seen: int, eval_sets: Sequence[Batch]) -> np.ndarray:
    """Accuracy on the eval set of every task encountered so far."""
    return np.array([accuracy(net, eval_sets[i]) for i in range(tasks_seen)])


# --------- Scalar metrics ---------
def final_acc(mat: AccuracyMatrix) -> float:
    return float(np.nanmean(_require_rows(mat)[-1]))


def aaa(mat: AccuracyMatrix) -> float:
    """Average anytime accuracy."""
    vals = _require_rows(mat)
    return float(np.mean(np.nanmean(vals, axis=1)))


def wc_acc(mat: AccuracyMatrix) -> float:
    vals = _require_rows(mat)
    return float(np.mean(np.nanmin(vals, axis=1)))


def forgetting_task1(mat: AccuracyMatrix) -> float:
    col = _require_rows(mat)[:, 0]
    col = col[~np.isnan(col)]
    if col.size < 2:
        raise ValueError("[metrics] first task evaluated fewer than 2 times")
    return float(col.max() - col[-1])


def min_task_accuracy(mat: AccuracyMatrix, task: int, during_task: int) -> float:
    """Lowest accuracy on `task` over the evaluations made while `during_task` was current."""
    vals = _require_rows(mat)
    current = np.asarray(mat.tasks_seen) - 1
    sel = vals[current == during_task, task]
    sel = sel[~np.isnan(sel)]
    if sel.size == 0:
        raise ValueError(f"[metrics] no evaluation of task {task} while task {during_task} was current")
    return float(sel.min())


def final_task_accuracy(mat: AccuracyMatrix) -> float:
    vals = _require_rows(mat)
    return float(vals[-1, mat.tasks_seen[-1] - 1])


# --------- Cumulative losses ---------
@dataclass
class CumulativeLossTrack:
    L_p: float = 0.0
    L_s: float = 0.0
    steps: list[int] = field(default_factory=list)
    batch_losses: list[float] = field(default_factory=list)
    full_losses: list[float] = field(default_factory=list)
    L_p_series: list[float] = field(default_factory=list)
    L_s_series: list[float] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "step": self.steps,
                "batch_loss": self.batch_losses,
                "full_loss": self.full_losses,
                "L_p": self.L_p_series,
                "L_s": self.L_s_series,
            }
        )


def track_cumulative(
    track: CumulativeLossTrack,
    batch_loss: float,
    full_history_loss: float | None,
    step: int | None = None,
) -> CumulativeLossTrack:
    """Accumulate one step; `full_history_loss=None` leaves L_s unchanged (not tracked)."""
    if batch_loss < 0 or (full_history_loss is not None and full_history_loss < 0):
        raise ValueError(f"[metrics] negative loss ({batch_loss}, {full_history_loss})")
    track.L_p += float(batch_loss)
    full = np.nan if full_history_loss is None else float(full_history_loss)
    if full_history_loss is not None:
        track.L_s += full
    track.steps.append(len(track.steps) if step is None else int(step))
    track.batch_losses.append(float(batch_loss))
    track.full_losses.append(full)
    track.L_p_series.append(track.L_p)
    track.L_s_series.append(track.L_s)
    return track


class MseHistory:
    """
    Sufficient statistics of every (x, y) pair seen so far, giving the
    half-MSE of a linear model over the whole history without keeping the data.
    """

    def __init__(self, in_dim: int, out_dim: int = 1):
        self.n = 0
        self.s_xx = np.zeros((in_dim + 1, in_dim + 1))
        self.s_xy = np.zeros((in_dim + 1, out_dim))
        self.s_yy = 0.0

    def add(self, inputs: np.ndarray, targets: np.ndarray) -> None:
        a_bar = np.hstack([inputs, np.ones((inputs.shape[0], 1))])
        y = np.asarray(targets, dtype=np.float64).reshape(inputs.shape[0], -1)
        self.n += inputs.shape[0]
        self.s_xx += a_bar.T @ a_bar
        self.s_xy += a_bar.T @ y
        self.s_yy += float(np.sum(y * y))

    def loss(self, net: Network) -> float:
        if len(net.layers) != 1:
            raise ValueError("[metrics] MseHistory needs a single-layer linear model")
        if self.n == 0:
            return 0.0
        theta = net.layers[0].block()
        quad = np.trace(theta @ self.s_xx @ theta.T)
        cross = np.trace(theta @ self.s_xy)
        return max(float(0.5 * (quad - 2.0 * cross + self.s_yy) / self.n), 0.0)
