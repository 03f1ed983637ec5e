"""Analyses run on a finished run folder: linear probing and loss surfaces."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from ocl.analysis.probe import linear_probe
from ocl.analysis.trajectory import (
    anchor_rows,
    build_basis,
    grid_from_trajectory,
    load_trajectory,
    project_trajectory,
    surface,
)
from ocl.config.validate import ExperimentConfig, validate
from ocl.core.nn import load_snapshot, network_from_meta
from ocl.core.replay import Batch
from ocl.core.utils import load_yaml
from ocl.experiments.runner import SeedStreams, build_tasks
from ocl.outputs.csv_writer import write_csv

log = logging.getLogger(__name__)


def load_run_config(run_path: str | Path) -> tuple[ExperimentConfig, int]:
    """The validated config saved in a run folder and the seed it ran with."""
    cfg = validate(load_yaml(Path(run_path) / "config.yaml"))
    return cfg, cfg.seeds[0]


def probe_snapshot(snapshot: str | Path, data_root: str | None = None, *, max_train: int | None = None) -> float:
    """Probed accuracy of a saved `final_params.f64` on its run's tasks."""
    snap = Path(snapshot)
    cfg, seed = load_run_config(snap.parent)
    rows, meta = load_snapshot(snap)
    net = network_from_meta(meta, rows[-1])
    tasks = build_tasks(cfg, seed, data_root)
    train = Batch(np.concatenate([t.train.inputs for t in tasks]), np.concatenate([t.train.targets for t in tasks]))
    evals = Batch(np.concatenate([t.eval.inputs for t in tasks]), np.concatenate([t.eval.targets for t in tasks]))
    acc = linear_probe(net, train, evals, SeedStreams.from_seed(seed).probe_seed, max_train=max_train or cfg.probe_max_train)
    log.info("[posthoc] probed accuracy of %s: %.4f", snap, acc)
    return acc


def surface_for_run(run_path: str | Path, resolution: int = 41, data_root: str | None = None) -> pd.DataFrame:
    """
    Project the recorded trajectory onto its own plane and evaluate every
    task's eval loss on a grid around it. Writes `trajectory_xy.csv` and
    `surface.csv` into the run folder.
    """
    rd = Path(run_path)
    cfg, seed = load_run_config(rd)
    rows, meta = load_trajectory(rd / "trajectory.f64")
    kinds = meta["kinds"]
    basis = build_basis(*anchor_rows(rows, kinds))
    xy = project_trajectory(rows, basis)
    write_csv(
        pd.DataFrame({"step": meta["steps"], "kind": kinds, "x": xy[:, 0], "y": xy[:, 1]}),
        str(rd / "trajectory_xy.csv"),
    )
    template = network_from_meta(meta["network"], rows[-1])
    tasks = build_tasks(cfg, seed, data_root)
    grid = grid_from_trajectory(xy, resolution=resolution)
    log.info("[posthoc] %dx%d surface over %d tasks for %s", resolution, resolution, len(tasks), rd)
    surf = surface(basis, grid, [t.eval for t in tasks], template)
    table = surf.to_frame()
    write_csv(table, str(rd / "surface.csv"))
    return table
