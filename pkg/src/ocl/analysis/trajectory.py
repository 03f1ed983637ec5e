# src/ocl/analysis/trajectory.py
"""
2D projections of a training trajectory.

The plane passes through three snapshots: the initial parameters, the end of
the first task and the end of the stream. Each run gets its own plane, so
coordinates are never compared across strategies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd

from ocl.core.errors import DegenerateDirections, NumericalError
from ocl.core.nn import (
    Layer,
    Network,
    flatten_params,
    load_snapshot,
    meta_param_count,
    network_from_meta,
    network_meta,
    predict_loss,
    unflatten_params,
    write_snapshot_meta,
)
from ocl.core.replay import Batch

DEGENERATE_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProjectionBasis:
    origin: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray

    def point(self, x: float, y: float) -> np.ndarray:
        return self.origin + x * self.u_hat + y * self.v_hat


def build_basis(w0: np.ndarray, w1: np.ndarray, wN: np.ndarray) -> ProjectionBasis:
    """Gram-Schmidt on u = w1 - w0, v = wN - w0 (two passes for v)."""
    w0 = np.asarray(w0, dtype=np.float64)
    u = np.asarray(w1, dtype=np.float64) - w0
    v = np.asarray(wN, dtype=np.float64) - w0
    u_norm = np.linalg.norm(u)
    if u_norm < DEGENERATE_TOL:
        raise DegenerateDirections("[trajectory] first direction has zero length")
    u_hat = u / u_norm
    r = v - (v @ u_hat) * u_hat
    r = r - (r @ u_hat) * u_hat
    r_norm = np.linalg.norm(r)
    if r_norm < DEGENERATE_TOL:
        raise DegenerateDirections("[trajectory] directions are parallel or v is zero")
    return ProjectionBasis(origin=w0.copy(), u_hat=u_hat, v_hat=r / r_norm)


def coords(w: np.ndarray, basis: ProjectionBasis) -> tuple[float, float]:
    d = np.asarray(w, dtype=np.float64) - basis.origin
    return float(d @ basis.u_hat), float(d @ basis.v_hat)


def project_trajectory(rows: np.ndarray, basis: ProjectionBasis) -> np.ndarray:
    """(n_snapshots, 2) coordinates of every row."""
    d = np.atleast_2d(rows) - basis.origin
    return np.column_stack([d @ basis.u_hat, d @ basis.v_hat])


# --------- Surfaces ---------
@dataclass(frozen=True)
class SurfaceSpec:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: tuple[int, int] = (41, 41)

    def __post_init__(self):
        nx, ny = self.resolution
        if nx < 2 or ny < 2:
            raise ValueError(f"[trajectory] grid resolution must be >= 2 per axis, got {self.resolution}")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_range[0], self.x_range[1], self.resolution[0])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_range[0], self.y_range[1], self.resolution[1])


@dataclass(frozen=True, eq=False)
class SurfaceGrid:
    xs: np.ndarray
    ys: np.ndarray
    losses: np.ndarray  # (n_tasks, ny, nx)

    @property
    def average(self) -> np.ndarray:
        return self.losses.mean(axis=0)

    def to_frame(self) -> pd.DataFrame:
        gx, gy = np.meshgrid(self.xs, self.ys)
        data = {"x": gx.ravel(), "y": gy.ravel()}
        for t in range(self.losses.shape[0]):
            data[f"loss_task_{t}"] = self.losses[t].ravel()
        data["loss_avg"] = self.average.ravel()
        return pd.DataFrame(data)


def grid_from_trajectory(xy: np.ndarray, resolution: int = 41, scale: float = 1.2) -> SurfaceSpec:
    """Square-celled grid covering `scale` times the bounding box of `xy`."""
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    centre = (lo + hi) / 2.0
    half = np.maximum((hi - lo) * scale / 2.0, 1e-3)
    return SurfaceSpec(
        x_range=(float(centre[0] - half[0]), float(centre[0] + half[0])),
        y_range=(float(centre[1] - half[1]), float(centre[1] + half[1])),
        resolution=(resolution, resolution),
    )


def surface(
    basis: ProjectionBasis,
    grid: SurfaceSpec,
    eval_sets: Sequence[Batch],
    net_template: Network,
) -> SurfaceGrid:
    """Eval loss of every task at every cell, filled row by row (y outer, x inner)."""
    xs, ys = grid.xs, grid.ys
    losses = np.empty((len(eval_sets), ys.size, xs.size))
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            net = unflatten_params(net_template, basis.point(x, y))
            for t, batch in enumerate(eval_sets):
                losses[t, j, i] = predict_loss(net, batch.inputs, batch.targets)
    if not np.all(np.isfinite(losses)):
        raise NumericalError("[trajectory] non-finite loss on the surface grid")
    return SurfaceGrid(xs=xs, ys=ys, losses=losses)


# --------- Recording ---------
def pad_network(net: Network, template: Network) -> Network:
    """Zero-pad the classifier of `net` up to the width of `template`."""
    last, target = net.layers[-1], template.layers[-1]
    extra = target.out_dim - last.out_dim
    if extra <= 0:
        return net
    grown = Layer(
        weight=np.vstack([last.weight, np.zeros((extra, last.in_dim))]),
        bias=np.concatenate([last.bias, np.zeros(extra)]),
        activation=last.activation,
    )
    return Network(layers=net.layers[:-1] + (grown,), head=net.head)


@dataclass
class TrajectoryRecorder:
    """
    Streams the initial parameters, every task boundary, every `every_k`-th
    step and the final parameters to ``<path>.part`` as they are recorded;
    only offsets and layer shapes stay in memory. `save` rewrites the rows
    to `path`, zero-padding snapshots taken before the classifier grew.
    """

    path: str | Path
    every_k: int = 10
    steps: list[int] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    metas: list[dict] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)
    _written: int = 0

    @property
    def part_path(self) -> Path:
        return Path(self.path).with_suffix(".part")

    def record(self, step: int, net: Network, kind: str) -> None:
        flat = flatten_params(net).astype("<f8")
        part = self.part_path
        part.parent.mkdir(parents=True, exist_ok=True)
        with open(part, "ab" if self.steps else "wb") as fh:
            fh.write(flat.tobytes())
        self.steps.append(int(step))
        self.kinds.append(kind)
        self.metas.append(network_meta(net))
        self.offsets.append(self._written)
        self._written += flat.nbytes

    def maybe_record(self, step: int, net: Network, *, boundary: bool = False) -> None:
        if boundary:
            self.record(step, net, "boundary")
        elif self.every_k > 0 and step % self.every_k == 0:
            self.record(step, net, "step")

    def iter_rows(self) -> Iterator[np.ndarray]:
        """Recorded rows padded to the width of the last snapshot, one at a time."""
        if not self.steps:
            raise ValueError("[trajectory] nothing recorded")
        last = self.metas[-1]
        template = network_from_meta(last, np.zeros(meta_param_count(last)))
        for meta, offset in zip(self.metas, self.offsets):
            flat = np.fromfile(self.part_path, dtype="<f8", count=meta_param_count(meta), offset=offset)
            net = network_from_meta(meta, flat.astype(np.float64))
            yield flatten_params(pad_network(net, template))

    def rows(self) -> np.ndarray:
        return np.vstack(list(self.iter_rows()))

    def save(self) -> Path:
        p = Path(self.path)
        n_rows = n_params = 0
        with open(p, "wb") as fh:
            for row in self.iter_rows():
                fh.write(row.astype("<f8").tobytes())
                n_rows, n_params = n_rows + 1, row.size
        write_snapshot_meta(
            p,
            {"steps": self.steps, "kinds": self.kinds, "network": self.metas[-1]},
            n_rows,
            n_params,
        )
        self.part_path.unlink(missing_ok=True)
        return p


def anchor_rows(rows: np.ndarray, kinds: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(initial, end of first task, final) snapshots."""
    kinds = list(kinds)
    if "init" not in kinds or "final" not in kinds:
        raise DegenerateDirections("[trajectory] trajectory lacks init/final snapshots")
    if "boundary" not in kinds:
        raise DegenerateDirections("[trajectory] single-task trajectory has no first-task anchor")
    return rows[kinds.index("init")], rows[kinds.index("boundary")], rows[len(kinds) - 1 - kinds[::-1].index("final")]


def load_trajectory(path: str | Path) -> tuple[np.ndarray, dict]:
    return load_snapshot(path)
