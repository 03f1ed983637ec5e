# src/ocl/experiments/summary.py
"""
Seed-wise aggregation of per-run summaries.

Deterministic output: rows sorted by strategy, NaN-safe statistics, no
wall-clock fields.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from ocl.outputs.csv_writer import write_csv, write_json

METRIC_KEYS = (
    "acc",
    "aaa",
    "wc_acc",
    "forgetting_task1",
    "final_task_acc",
    "min_task1_acc_during_task2",
    "probed_acc",
    "L_p_final",
    "L_s_final",
)


def _safe_mean(x: Iterable[Any]) -> float:
    """Mean ignoring None, NaN and inf."""
    arr = np.array([np.nan if v is None else v for v in x], dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(np.mean(arr)) if len(arr) else float("nan")


def _safe_std(x: Iterable[Any]) -> float:
    arr = np.array([np.nan if v is None else v for v in x], dtype=float)
    arr = arr[np.isfinite(arr)]
    return float(np.std(arr, ddof=1)) if len(arr) > 1 else float("nan")


def aggregate(summaries: list[dict]) -> pd.DataFrame:
    """One row per strategy: `<metric>_mean` / `<metric>_std` over its seeds."""
    if not summaries:
        return pd.DataFrame(columns=["strategy", "n_seeds"])
    df = pd.DataFrame(summaries)
    rows = []
    for strategy, grp in df.groupby("strategy", sort=True):
        row: dict[str, Any] = {"strategy": strategy, "n_seeds": int(len(grp))}
        for key in METRIC_KEYS:
            vals = grp[key].tolist() if key in grp else []
            row[f"{key}_mean"] = _safe_mean(vals)
            row[f"{key}_std"] = _safe_std(vals)
        if "failed" in grp:
            row["n_failed"] = int(grp["failed"].fillna(False).astype(bool).sum())
        rows.append(row)
    return pd.DataFrame(rows)


def save_aggregate(summaries: list[dict], out_dir: str | Path) -> pd.DataFrame:
    """Write `summary.csv` and `summary.json` next to the per-strategy run folders."""
    out = Path(out_dir)
    table = aggregate(summaries)
    write_csv(table, str(out / "summary.csv"))
    payload = {
        str(r["strategy"]): {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in r.items() if k != "strategy"}
        for r in table.to_dict(orient="records")
    }
    write_json(str(out / "summary.json"), payload)
    return table
