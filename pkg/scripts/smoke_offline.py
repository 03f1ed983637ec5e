#!/usr/bin/env python3
"""Tiny end-to-end run on synthetic blobs: no downloads, a few seconds."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from ocl.config import load_config  # noqa: E402
from ocl.config.validate import validate  # noqa: E402
from ocl.experiments.runner import run  # noqa: E402
from ocl.outputs.logger import get_logger  # noqa: E402

SMOKE_OVERRIDES = [
    "experiment.name=smoke",
    "experiment.strategies=[er, ocar, ewc, ngd]",
    "experiment.seeds=[0]",
    "experiment.buffer_capacity=40",
    "experiment.trajectory=true",
    "experiment.probe=true",
    "stream.dataset=blobs",
    "stream.n_tasks=3",
    "stream.classes_per_task=2",
    "stream.blobs.n_classes=6",
    "stream.blobs.per_class=40",
    "model.hidden=[16]",
    "hyperparams.ocar.classes_per_task=2",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out")
    a = ap.parse_args()
    log = get_logger("ocl", logs_dir=None)
    cfg = validate(load_config(None, SMOKE_OVERRIDES + [f"app.out_dir={a.out}"]))
    results = run(cfg)
    for r in results:
        log.info("[smoke] %s acc=%.3f aaa=%.3f -> %s", r.strategy, r.summary["acc"], r.summary["aaa"], r.run_dir)
    print(f"[OK] {len(results)} runs under {a.out}/smoke")


if __name__ == "__main__":
    main()
