# src/ocl/experiments/grid.py
"""
Grid search over the learning rate and the alpha/tau ratio.

Every cell starts with tau = alpha. The ratio axis only sets how fast tau
grows: a cell with ratio r adds alpha / r to tau over the reference window,
the number of inner steps spent on the first task. Small ratios mean fast
growth.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import pandas as pd

from ocl.config.validate import ExperimentConfig, validate
from ocl.core.errors import ConfigError, NumericalError
from ocl.core.strategies import HyperParams
from ocl.experiments.runner import RunResult, build_tasks, run_single
from ocl.outputs.csv_writer import write_csv
from ocl.util.dicts import set_dotted

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    alphas: tuple[float, ...]
    ratios: tuple[float, ...]

    def __post_init__(self):
        if not self.alphas or not self.ratios:
            raise ConfigError("grid needs at least one alpha and one ratio", field="grid")
        for name, vals in (("alphas", self.alphas), ("ratios", self.ratios)):
            if any(not v > 0 for v in vals):
                raise ConfigError(f"all values must be > 0, got {list(vals)}", field=f"grid.{name}")

    @property
    def cells(self) -> list[tuple[float, float]]:
        return [(a, r) for a in self.alphas for r in self.ratios]

    @classmethod
    def from_config(cls, raw: dict) -> "GridSpec":
        g = raw.get("grid") or {}
        return cls(tuple(float(a) for a in g.get("alphas", ())), tuple(float(r) for r in g.get("ratios", ())))


def reference_steps(first_task_size: int, new_batch_size: int, inner_steps: int) -> int:
    return max(1, math.ceil(first_task_size / new_batch_size) * inner_steps)


def tau_schedule_for_ratio(alpha: float, ratio: float, t_ref: int) -> tuple[float, float]:
    """(tau_init, delta_tau): tau starts at alpha and alpha / (tau(t_ref) - alpha) equals `ratio`."""
    if not ratio > 0 or t_ref < 1:
        raise ConfigError(f"need ratio > 0 and t_ref >= 1, got {ratio}, {t_ref}", field="grid.ratios")
    return alpha, alpha / (ratio * t_ref)


def _cell_name(alpha: float, ratio: float) -> str:
    return f"alpha_{alpha:g}_ratio_{ratio:g}"


def cell_config(cfg: ExperimentConfig, alpha: float, ratio: float, t_ref: int, strategy: str = "ocar") -> ExperimentConfig:
    _, delta_tau = tau_schedule_for_ratio(alpha, ratio, t_ref)
    raw = cfg.raw
    for key, val in (("alpha", alpha), ("tau_init", None), ("delta_tau", delta_tau)):
        raw = set_dotted(raw, f"hyperparams.{strategy}.{key}", val)
    cell = validate(raw)
    return dataclasses.replace(cell, name=f"{cfg.name}/{_cell_name(alpha, ratio)}")


def _cell_job(args: tuple) -> RunResult:
    cell_cfg, strategy, seed, data_root, out_dir, meta = args
    return run_single(cell_cfg, strategy, seed, data_root=data_root, out_dir=out_dir, extra_meta=meta)


def grid_search(
    cfg: ExperimentConfig,
    grid: GridSpec,
    *,
    data_root: str | None = None,
    out_dir: str | Path | None = None,
    workers: int = 1,
    strategy: str | None = None,
) -> pd.DataFrame:
    """
    Run every (alpha, ratio, seed) cell and return one row per (alpha, ratio):
    seed means of final accuracy, task-1 forgetting and final-task accuracy.
    Also written to `<out>/<preset>/grid.csv`.
    """
    strategy = strategy or cfg.strategies[0]
    out = Path(out_dir or cfg.out_dir)
    hp: HyperParams = cfg.hyperparams[strategy]
    first = build_tasks(cfg, cfg.seeds[0], data_root)[0]
    t_ref = reference_steps(len(first.train), hp.new_batch_size, hp.inner_steps)
    log.info("[grid] %d cells x %d seeds, reference step %d", len(grid.cells), len(cfg.seeds), t_ref)

    jobs = []
    for alpha, ratio in grid.cells:
        cell = cell_config(cfg, alpha, ratio, t_ref, strategy)
        cell_hp = cell.hyperparams[strategy]
        meta = {
            "grid_alpha": alpha,
            "grid_ratio": ratio,
            "grid_reference_step": t_ref,
            "tau_init": cell_hp.initial_tau,
            "delta_tau": cell_hp.delta_tau,
        }
        jobs.extend((cell, strategy, seed, data_root, str(out), meta) for seed in cfg.seeds)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]

    per_run = pd.DataFrame([r.summary for r in results])
    for col in ("acc", "forgetting_task1", "final_task_acc"):
        per_run[col] = pd.to_numeric(per_run[col], errors="coerce")
    table = (
        per_run.groupby(["grid_alpha", "grid_ratio"], sort=True)
        .agg(
            n_seeds=("seed", "count"),
            acc=("acc", "mean"),
            forgetting_task1=("forgetting_task1", "mean"),
            final_task_acc=("final_task_acc", "mean"),
            tau_init=("tau_init", "first"),
            delta_tau=("delta_tau", "first"),
        )
        .reset_index()
        .rename(columns={"grid_alpha": "alpha", "grid_ratio": "ratio"})
    )
    write_csv(table, str(out / cfg.name / "grid.csv"))
    write_csv(per_run, str(out / cfg.name / "grid_runs.csv"))

    failed = [r for r in results if r.failed]
    if failed:
        raise NumericalError(f"[grid] {len(failed)} of {len(results)} cell runs failed")
    return table


def parse_values(items: Sequence[str] | None) -> tuple[float, ...]:
    """Accepts `0.1 0.5` as well as `0.1,0.5`."""
    out: list[float] = []
    for item in items or ():
        out.extend(float(v) for v in str(item).split(",") if v.strip())
    return tuple(out)
