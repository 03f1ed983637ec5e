"""
ocl: online continual learning lab.

  ocl run     --config <path|preset> [--seed N] [--out DIR]
  ocl grid    --config <path|preset> --alphas ... --ratios ...
  ocl probe   --snapshot <run>/final_params.f64 [--data DIR]
  ocl surface --run <run dir> [--grid 41]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ocl.config import list_presets, load_config
from ocl.config.validate import validate
from ocl.core.env import load_env, resolve_data_root
from ocl.core.errors import ConfigError, NumericalError, OclError
from ocl.experiments.grid import GridSpec, grid_search, parse_values
from ocl.experiments.posthoc import probe_snapshot, surface_for_run
from ocl.experiments.runner import run
from ocl.outputs.logger import get_logger

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help=f"Config file (YAML/JSON) or preset: {', '.join(list_presets())}")
    p.add_argument("--seed", type=int, help="Run a single seed instead of the config's list")
    p.add_argument("--out", help="Output root (default: app.out_dir)")
    p.add_argument("--data", help="Dataset root holding MNIST IDX files (default: $OCL_DATA_ROOT)")
    p.add_argument("--workers", type=int, default=1, help="Worker processes for independent runs")
    p.add_argument("--strategies", help="Comma-separated strategy override, e.g. er,ocar")
    p.add_argument("--eval-through-task", type=int, dest="eval_through_task", help="Keep only the first K tasks")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override any config key")


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(prog="ocl", description="Online continual learning with curvature-aware replay")
    ap.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="Train every strategy x seed of a config")
    _add_common(p_run)

    p_grid = sub.add_parser("grid", help="Grid over alpha and alpha/tau")
    _add_common(p_grid)
    p_grid.add_argument("--alphas", nargs="+", help="Learning rates (default: grid.alphas)")
    p_grid.add_argument("--ratios", nargs="+", help="alpha/tau ratios (default: grid.ratios)")

    p_probe = sub.add_parser("probe", help="Linear-probe a saved final_params snapshot")
    p_probe.add_argument("--snapshot", required=True)
    p_probe.add_argument("--data")
    p_probe.add_argument("--max-train", type=int, dest="max_train")

    p_surf = sub.add_parser("surface", help="Loss surface around a recorded trajectory")
    p_surf.add_argument("--run", required=True, dest="run_dir")
    p_surf.add_argument("--grid", type=int, default=41, help="Cells per axis")
    p_surf.add_argument("--data")
    return ap.parse_args(argv)


def _overrides(args: argparse.Namespace) -> list[str]:
    items = list(args.set)
    if args.seed is not None:
        items.append(f"experiment.seeds=[{args.seed}]")
    if args.strategies:
        items.append(f"experiment.strategies=[{args.strategies}]")
    if args.eval_through_task is not None:
        items.append(f"experiment.eval_through_task={args.eval_through_task}")
    if args.out:
        items.append(f"app.out_dir={json.dumps(args.out)}")
    return items


def _dispatch(args: argparse.Namespace, log: logging.Logger) -> None:
    if args.command in ("run", "grid"):
        cfg = validate(load_config(args.config, _overrides(args)))
        get_logger("ocl", logs_dir=cfg.logs_dir, level=log.level)
        data_root = resolve_data_root(args.data)
        if args.command == "run":
            results = run(cfg, data_root=data_root, workers=args.workers)
            log.info("[main] %d runs written under %s/%s", len(results), cfg.out_dir, cfg.name)
            return
        from_cfg = GridSpec.from_config(cfg.raw) if cfg.raw.get("grid") else None
        alphas = parse_values(args.alphas) or (from_cfg.alphas if from_cfg else ())
        ratios = parse_values(args.ratios) or (from_cfg.ratios if from_cfg else ())
        table = grid_search(cfg, GridSpec(alphas, ratios), data_root=data_root, workers=args.workers)
        log.info("[main] grid finished: %d cells", len(table))
        return
    if args.command == "probe":
        acc = probe_snapshot(args.snapshot, resolve_data_root(args.data), max_train=args.max_train)
        print(f"probed_acc={acc:.6f}")
        return
    if args.command == "surface":
        table = surface_for_run(args.run_dir, args.grid, resolve_data_root(args.data))
        log.info("[main] surface with %d cells written to %s", len(table), args.run_dir)


def main(argv: list[str] | None = None) -> int:
    load_env()
    args = parse_args(argv)
    log = get_logger("ocl", logs_dir=None, level=getattr(logging, args.log_level))
    try:
        _dispatch(args, log)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except NumericalError as e:
        log.error("%s", e)
        return EXIT_NUMERICAL
    except (OclError, FileNotFoundError) as e:
        log.error("%s", e)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
