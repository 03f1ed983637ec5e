# src/ocl/experiments/runner.py
"""
Single runs and multi-seed runs.

A run is one (strategy, seed) pass over the stream: replay sampling, the
strategy's inner steps, reservoir update, cumulative losses and continual
evaluation. Everything random is derived from the seed, so the same
(config, strategy, seed) writes byte-identical metric files.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ocl.analysis.metrics import (
    WC_ACC_DEFINITION,
    AccuracyMatrix,
    CumulativeLossTrack,
    MseHistory,
    aaa,
    evaluate,
    final_acc,
    final_task_accuracy,
    forgetting_task1,
    min_task_accuracy,
    track_cumulative,
    wc_acc,
)
from ocl.analysis.probe import linear_probe
from ocl.analysis.trajectory import TrajectoryRecorder
from ocl.config.validate import ExperimentConfig
from ocl.core.errors import NumericalError, OclError
from ocl.core.nn import (
    Network,
    flatten_params,
    forward,
    grow_classifier,
    init_network,
    network_meta,
    predict_loss,
    save_snapshot,
)
from ocl.core.replay import Batch, ReplayBuffer, reservoir_update, sample
from ocl.core.strategies import HyperParams, make_strategy
from ocl.core.utils import dump_yaml, git_blob_sha1, run_dir
from ocl.data.idx import load_mnist, mnist_available
from ocl.data.streams import (
    LabeledDataset,
    TaskSpec,
    gen_class_incremental,
    gen_linear_stream,
    gen_rotation_stream,
    stream_iter,
    truncate_tasks,
)
from ocl.data.synthetic import gaussian_blobs
from ocl.experiments.summary import save_aggregate
from ocl.outputs.csv_writer import write_csv, write_json
from ocl.outputs.telemetry import DiagnosticsWriter

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    strategy: str
    seed: int
    run_dir: str
    summary: dict = field(default_factory=dict)
    failed: bool = False
    error: str | None = None
    numerical: bool = False


@dataclass(frozen=True)
class SeedStreams:
    """Independent generators for data, stream order, model init and the strategy/buffer."""

    data_seed: int
    order_seed: int
    model: np.random.Generator
    buffer: np.random.Generator
    strategy: np.random.Generator
    probe_seed: int

    @classmethod
    def from_seed(cls, seed: int) -> "SeedStreams":
        data, order, model, buffer, strategy, probe = np.random.SeedSequence(seed).spawn(6)
        return cls(
            data_seed=int(data.generate_state(1)[0]),
            order_seed=int(order.generate_state(1)[0]),
            model=np.random.default_rng(model),
            buffer=np.random.default_rng(buffer),
            strategy=np.random.default_rng(strategy),
            probe_seed=int(probe.generate_state(1)[0]),
        )


# --------- Data / model construction ---------
def load_labeled(cfg: ExperimentConfig, data_root: str | None, seed: int) -> LabeledDataset:
    """MNIST when available under `data_root`, else the synthetic blobs set."""
    s = cfg.stream
    if s.dataset == "mnist":
        if mnist_available(data_root):
            x, y = load_mnist(data_root, s.dataset_split)
            return LabeledDataset(x, y, name="mnist")
        log.warning("[runner] MNIST not found under %r; falling back to synthetic blobs", data_root)
    b = s.blobs
    x, y = gaussian_blobs(
        int(b.get("n_classes", 10)),
        int(b.get("per_class", 200)),
        int(b.get("dim", 16)),
        seed,
        spread=float(b.get("spread", 1.0)),
        separation=float(b.get("separation", 4.0)),
    )
    return LabeledDataset(x, y, name="blobs")


def build_tasks(cfg: ExperimentConfig, seed: int, data_root: str | None = None) -> list[TaskSpec]:
    s = cfg.stream
    data_seed = SeedStreams.from_seed(seed).data_seed
    if s.kind == "linear":
        tasks = gen_linear_stream(
            data_seed,
            n_tasks=s.n_tasks,
            samples_per_task=s.samples_per_task,
            eval_per_task=s.eval_per_task,
            dim=s.dim,
            noise_var=s.noise_var,
            eig_range=(s.eig_low, s.eig_high),
        )
    elif s.kind == "class_incremental":
        ds = load_labeled(cfg, data_root, data_seed)
        tasks = gen_class_incremental(ds, s.n_tasks, s.classes_per_task, data_seed, eval_fraction=s.eval_fraction)
    else:
        ds = load_labeled(cfg, data_root, data_seed)
        tasks = gen_rotation_stream(
            ds, s.n_tasks, s.max_angle, data_seed, per_task=s.per_task, eval_fraction=s.eval_fraction
        )
    return truncate_tasks(tasks, cfg.eval_through_task)


def output_width(cfg: ExperimentConfig, tasks: Sequence[TaskSpec]) -> int:
    if cfg.stream.kind == "linear":
        return int(tasks[0].train.targets.reshape(len(tasks[0].train), -1).shape[1])
    if cfg.stream.kind == "class_incremental":
        return cfg.stream.classes_per_task
    labels = np.concatenate([t.train.targets for t in tasks] + [t.eval.targets for t in tasks])
    return int(labels.max()) + 1


def build_network(cfg: ExperimentConfig, tasks: Sequence[TaskSpec], rng: np.random.Generator) -> Network:
    in_dim = tasks[0].train.inputs.shape[1]
    sizes = [in_dim, *cfg.model.hidden, output_width(cfg, tasks)]
    return init_network(sizes, rng, head=cfg.model.head, zero=cfg.model.init == "zero")  # type: ignore[arg-type]


# --------- Artifacts ---------
def run_config_dict(cfg: ExperimentConfig, strategy: str, seed: int, extra: dict | None = None) -> dict:
    """The config as this run saw it: one strategy, one seed."""
    raw = {k: v for k, v in cfg.raw.items() if k != "grid"}
    raw["experiment"] = dict(raw.get("experiment", {}), strategies=[strategy], seeds=[int(seed)])
    if extra:
        raw["run_meta"] = dict(extra)
    return raw


def _write_inputs(rd: Path, raw_cfg: dict, strategy: str, seed: int) -> None:
    text = dump_yaml(raw_cfg)
    (rd / "config.yaml").write_text(text, encoding="utf-8")
    # output locations do not change results
    inputs = {k: v for k, v in raw_cfg.items() if k != "app"}
    canonical = dump_yaml({"config": inputs, "strategy": strategy, "seed": int(seed)})
    (rd / "inputs.sha1").write_text(git_blob_sha1(canonical.encode("utf-8")) + "\n", encoding="utf-8")


def _full_history_loss(net: Network, history: MseHistory | None, seen: list[Batch]) -> float:
    if history is not None:
        return history.loss(net)
    x = np.concatenate([b.inputs for b in seen])
    y = np.concatenate([b.targets for b in seen])
    return predict_loss(net, x, y)


def _summarize(
    cfg: ExperimentConfig,
    strategy: str,
    seed: int,
    mat: AccuracyMatrix | None,
    track: CumulativeLossTrack,
    probed: float | None,
    extra: dict | None,
) -> dict:
    summary: dict = {
        "strategy": strategy,
        "seed": int(seed),
        "preset": cfg.name,
        "wc_acc_definition": WC_ACC_DEFINITION,
        "eval_every": cfg.eval_every,
        "L_p_final": float(track.L_p),
        "L_s_final": float(track.L_s) if cfg.track_full_loss else None,
        "probed_acc": probed,
        "acc": None,
        "aaa": None,
        "wc_acc": None,
        "forgetting_task1": None,
        "final_task_acc": None,
        "min_task1_acc_during_task2": None,
    }
    if mat is not None and len(mat) > 0:
        summary.update(acc=final_acc(mat), aaa=aaa(mat), wc_acc=wc_acc(mat), final_task_acc=final_task_accuracy(mat))
        try:
            summary["forgetting_task1"] = forgetting_task1(mat)
        except ValueError:
            pass
        try:
            summary["min_task1_acc_during_task2"] = min_task_accuracy(mat, 0, 1)
        except ValueError:
            pass
    if extra:
        summary.update(extra)
    return summary


# --------- Single run ---------
def run_single(
    cfg: ExperimentConfig,
    strategy: str,
    seed: int,
    *,
    data_root: str | None = None,
    out_dir: str | Path | None = None,
    hp: HyperParams | None = None,
    extra_meta: dict | None = None,
    tasks: Sequence[TaskSpec] | None = None,
) -> RunResult:
    """
    Train one strategy over the stream for one seed and write its run folder.

    Library failures (`OclError`) are caught: the partial accuracy matrix,
    losses, diagnostics and trajectory are still written, plus a FAILED
    marker holding the error.
    """
    hp = hp or cfg.hyperparams[strategy]
    rd = run_dir(out_dir or cfg.out_dir, cfg.name, strategy, seed)
    rd.mkdir(parents=True, exist_ok=True)
    (rd / "FAILED").unlink(missing_ok=True)
    _write_inputs(rd, run_config_dict(cfg, strategy, seed, extra_meta), strategy, seed)

    streams = SeedStreams.from_seed(seed)
    tasks = list(tasks) if tasks is not None else build_tasks(cfg, seed, data_root)
    eval_sets = [t.eval for t in tasks]
    classify = cfg.model.head == "softmax_ce"
    class_incremental = cfg.class_incremental

    net = build_network(cfg, tasks, streams.model)
    buffer = ReplayBuffer(cfg.buffer_capacity, track_classes=class_incremental)
    strat = make_strategy(
        strategy,
        hp,
        streams.strategy,
        dense_fisher=len(net.layers) == 1,
        track_classes=class_incremental,
    )
    mat = AccuracyMatrix(n_tasks=len(tasks)) if classify else None
    track = CumulativeLossTrack()
    history = MseHistory(net.in_dim, net.out_dim) if cfg.track_full_loss and not classify and len(net.layers) == 1 else None
    seen: list[Batch] = []
    diag = DiagnosticsWriter(str(rd / "diagnostics.jsonl"))
    recorder = TrajectoryRecorder(rd / "trajectory.f64", every_k=cfg.trajectory_every) if cfg.trajectory else None
    if recorder is not None:
        recorder.record(0, net, "init")

    total = sum(len(t.train) for t in tasks)
    n_batches = math.ceil(total / hp.new_batch_size)
    log.info("[runner] %s seed=%d: %d tasks, %d batches -> %s", strategy, seed, len(tasks), n_batches, rd)

    inner_total = 0
    error: str | None = None
    numerical = False
    try:
        for sb in stream_iter(tasks, hp.new_batch_size, streams.order_seed):
            new = sb.as_batch()
            if sb.is_first_of_task and sb.global_step > 0:
                log.info("[runner] %s seed=%d: task %d starts at batch %d", strategy, seed, sb.tasks_seen, sb.global_step)
            grew = False
            if class_incremental:
                net, grew = grow_classifier(net, int(np.max(new.targets)) + 1, streams.model)
            buf_batch = None
            if len(buffer) > 0 and hp.buffer_batch_size > 0:
                buf_batch = sample(buffer, hp.buffer_batch_size, streams.buffer)

            batch_loss = predict_loss(net, new.inputs, new.targets)
            strat.begin_batch(new, buffer)
            for s in range(hp.inner_steps):
                net = strat.step(net, new, buf_batch, inner=s, step_index=inner_total, classifier_grew=grew)
                diag.write({"strategy": strategy, "global_step": sb.global_step, "inner": s, **strat.last_record})
                inner_total += 1
            reservoir_update(buffer, new, streams.buffer)

            full = None
            if cfg.track_full_loss:
                if history is not None:
                    history.add(new.inputs, new.targets)
                else:
                    seen.append(new)
                full = _full_history_loss(net, history, seen)
            track_cumulative(track, batch_loss, full, sb.global_step)

            if mat is not None and ((sb.global_step + 1) % cfg.eval_every == 0 or sb.global_step == n_batches - 1):
                mat.append(sb.global_step, evaluate(net, sb.tasks_seen, eval_sets))
            if recorder is not None and sb.global_step < n_batches - 1:
                # a task ends once its last example has been trained on
                recorder.maybe_record(sb.global_step + 1, net, boundary=sb.is_last_of_task)
            if not np.all(np.isfinite(forward(net, new.inputs[:1]).outputs)):
                raise NumericalError(f"[runner] non-finite outputs after batch {sb.global_step}")
    except OclError as e:
        error = f"{type(e).__name__}: {e}"
        numerical = isinstance(e, NumericalError)
        log.error("[runner] %s seed=%d failed: %s", strategy, seed, error)

    if mat is not None:
        mat.to_csv(rd / "accuracy_matrix.csv")
    write_csv(track.to_frame(), str(rd / "losses.csv"))
    diag.flush()

    if error is not None:
        (rd / "FAILED").write_text(error + "\n", encoding="utf-8")
        if recorder is not None:
            recorder.save()
        summary = _summarize(cfg, strategy, seed, mat, track, None, extra_meta)
        summary["failed"] = True
        write_json(str(rd / "summary.json"), summary)
        return RunResult(strategy, seed, str(rd), summary, failed=True, error=error, numerical=numerical)

    if recorder is not None:
        recorder.record(n_batches, net, "final")
        recorder.save()
    if cfg.save_final_params:
        save_snapshot(rd / "final_params.f64", flatten_params(net), network_meta(net))

    probed = None
    if cfg.probe and classify and len(net.layers) >= 2:
        train = Batch(
            np.concatenate([t.train.inputs for t in tasks]),
            np.concatenate([t.train.targets for t in tasks]),
        )
        evals = Batch(
            np.concatenate([b.inputs for b in eval_sets]),
            np.concatenate([b.targets for b in eval_sets]),
        )
        probed = linear_probe(net, train, evals, streams.probe_seed, max_train=cfg.probe_max_train)

    summary = _summarize(cfg, strategy, seed, mat, track, probed, extra_meta)
    summary["failed"] = False
    write_json(str(rd / "summary.json"), summary)
    log.info(
        "[runner] %s seed=%d done: acc=%s L_p=%.6g",
        strategy,
        seed,
        "n/a" if summary["acc"] is None else f"{summary['acc']:.4f}",
        track.L_p,
    )
    return RunResult(strategy, seed, str(rd), summary)


# --------- Multi-seed run ---------
def _run_job(args: tuple) -> RunResult:
    cfg, strategy, seed, data_root, out_dir = args
    return run_single(cfg, strategy, seed, data_root=data_root, out_dir=out_dir)


def run(
    cfg: ExperimentConfig,
    *,
    data_root: str | None = None,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> list[RunResult]:
    """
    Every (strategy, seed) pair of the config, optionally across worker
    processes, followed by the seed aggregate. Results come back in config
    order whatever the completion order.
    """
    out = Path(out_dir or cfg.out_dir)
    jobs = [(cfg, s, seed, data_root, str(out)) for s in cfg.strategies for seed in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    save_aggregate([r.summary for r in results], out / cfg.name)
    failed = [r for r in results if r.failed]
    if failed:
        kind = NumericalError if all(r.numerical for r in failed) else OclError
        raise kind(
            f"[runner] {len(failed)} of {len(results)} runs failed: "
            + "; ".join(f"{r.strategy}/seed_{r.seed}: {r.error}" for r in failed)
        )
    return results
