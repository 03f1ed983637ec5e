"""Typed, validated views of a merged config dict."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

from ocl.core.errors import ConfigError
from ocl.core.strategies import STRATEGIES, HyperParams
from ocl.util.dicts import deep_merge

STREAM_KINDS = ("linear", "class_incremental", "rotation")
DATASETS = ("mnist", "blobs")
HEADS = ("softmax_ce", "gaussian_mse")
_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}


@dataclass(frozen=True)
class StreamConfig:
    kind: str = "class_incremental"
    dataset: str = "blobs"
    dataset_split: str = "train"
    n_tasks: int = 5
    classes_per_task: int = 2
    eval_fraction: float = 0.1
    samples_per_task: int = 1000
    eval_per_task: int = 200
    dim: int = 10
    noise_var: float = 0.01
    eig_low: float = 0.1
    eig_high: float = 10.0
    max_angle: float = 180.0
    per_task: int | None = None
    blobs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelConfig:
    hidden: tuple[int, ...] = (100, 100)
    head: str = "softmax_ce"
    init: str = "random"


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    strategies: tuple[str, ...]
    seeds: tuple[int, ...]
    buffer_capacity: int
    eval_every: int
    track_full_loss: bool
    trajectory: bool
    trajectory_every: int
    probe: bool
    probe_max_train: int | None
    eval_through_task: int | None
    save_final_params: bool
    out_dir: str
    logs_dir: str
    stream: StreamConfig
    model: ModelConfig
    hyperparams: dict[str, HyperParams]
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def class_incremental(self) -> bool:
        return self.stream.kind == "class_incremental"


def _section(cfg: dict, key: str) -> dict:
    val = cfg.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigError("must be a mapping", field=key)
    return val


def _known(section: dict, cls, prefix: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", field=prefix)
    return section


def _positive_int(value: Any, field_name: str, *, allow_zero: bool = False) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"must be an integer, got {value!r}", field=field_name)
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"must be {'>= 0' if allow_zero else '> 0'}, got {value}", field=field_name)
    return value


def hyperparams_for(cfg: dict, strategy: str) -> HyperParams:
    """`hyperparams.<strategy>` merged over `hyperparams.default`."""
    hp_cfg = _section(cfg, "hyperparams")
    merged = deep_merge(hp_cfg.get("default") or {}, hp_cfg.get(strategy) or {})
    unknown = sorted(set(merged) - _HP_FIELDS)
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", field=f"hyperparams.{strategy}")
    if "alpha" not in merged:
        raise ConfigError("missing learning rate", field=f"hyperparams.{strategy}.alpha")
    try:
        return HyperParams(**merged)
    except ConfigError as e:
        msg = str(e).split(": ", 1)[-1]
        raise ConfigError(msg, field=f"hyperparams.{strategy}.{e.field}") from e
    except TypeError as e:
        raise ConfigError(str(e), field=f"hyperparams.{strategy}") from e


def validate(cfg: dict) -> ExperimentConfig:
    app = _section(cfg, "app")
    exp = _section(cfg, "experiment")
    stream_cfg = _section(cfg, "stream")
    model_cfg = _section(cfg, "model")

    stream = StreamConfig(**_known(stream_cfg, StreamConfig, "stream"))
    if stream.kind not in STREAM_KINDS:
        raise ConfigError(f"unknown kind {stream.kind!r}; expected one of {STREAM_KINDS}", field="stream.kind")
    if stream.kind != "linear" and stream.dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {stream.dataset!r}; expected one of {DATASETS}", field="stream.dataset")
    _positive_int(stream.n_tasks, "stream.n_tasks")
    _positive_int(stream.classes_per_task, "stream.classes_per_task")
    if not 0.0 < stream.eval_fraction < 1.0:
        raise ConfigError(f"must be in (0, 1), got {stream.eval_fraction}", field="stream.eval_fraction")
    if stream.noise_var < 0:
        raise ConfigError(f"must be >= 0, got {stream.noise_var}", field="stream.noise_var")
    if not 0 < stream.eig_low <= stream.eig_high:
        raise ConfigError("need 0 < eig_low <= eig_high", field="stream.eig_low")
    if stream.per_task is not None:
        _positive_int(stream.per_task, "stream.per_task")

    model_raw = dict(_known(model_cfg, ModelConfig, "model"))
    model_raw["hidden"] = tuple(int(h) for h in (model_raw.get("hidden") or ()))
    model = ModelConfig(**model_raw)
    if model.head not in HEADS:
        raise ConfigError(f"unknown head {model.head!r}; expected one of {HEADS}", field="model.head")
    if model.init not in ("random", "zero"):
        raise ConfigError(f"unknown init {model.init!r}", field="model.init")
    if any(h < 1 for h in model.hidden):
        raise ConfigError("hidden widths must be positive", field="model.hidden")
    if (stream.kind == "linear") != (model.head == "gaussian_mse"):
        raise ConfigError(
            f"stream kind {stream.kind!r} does not match head {model.head!r}", field="model.head"
        )
    if model.init == "zero" and model.hidden:
        raise ConfigError("zero init only makes sense for the linear model", field="model.init")

    strategies = tuple(str(s).lower() for s in (exp.get("strategies") or ()))
    if not strategies:
        raise ConfigError("at least one strategy is required", field="experiment.strategies")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}", field="experiment.strategies")
    seeds = exp.get("seeds")
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not seeds:
        raise ConfigError("seeds must be a non-empty list", field="experiment.seeds")
    seeds = tuple(_positive_int(s, "experiment.seeds", allow_zero=True) for s in seeds)

    hyperparams = {s: hyperparams_for(cfg, s) for s in strategies}
    for s, hp in hyperparams.items():
        if s == "ocar" and hp.lambda_mode == "class_ratio" and stream.kind != "class_incremental":
            raise ConfigError(
                "class_ratio needs class ids; use time_growth or fixed",
                field="hyperparams.ocar.lambda_mode",
            )

    ett = exp.get("eval_through_task")
    if ett is not None:
        _positive_int(ett, "experiment.eval_through_task")
    probe_max = exp.get("probe_max_train")
    if probe_max is not None:
        _positive_int(probe_max, "experiment.probe_max_train")
    probe = bool(exp.get("probe", False))
    if probe and not model.hidden:
        raise ConfigError("linear probing needs at least one hidden layer", field="experiment.probe")

    return ExperimentConfig(
        name=str(exp.get("name", "default")),
        strategies=strategies,
        seeds=seeds,
        buffer_capacity=_positive_int(exp.get("buffer_capacity"), "experiment.buffer_capacity"),
        eval_every=_positive_int(exp.get("eval_every"), "experiment.eval_every"),
        track_full_loss=bool(exp.get("track_full_loss", False)),
        trajectory=bool(exp.get("trajectory", False)),
        trajectory_every=_positive_int(exp.get("trajectory_every", 10), "experiment.trajectory_every", allow_zero=True),
        probe=probe,
        probe_max_train=probe_max,
        eval_through_task=ett,
        save_final_params=bool(exp.get("save_final_params", True)),
        out_dir=str(app.get("out_dir", "out")),
        logs_dir=str(app.get("logs_dir", "logs")),
        stream=stream,
        model=model,
        hyperparams=hyperparams,
        raw=cfg,
    )
