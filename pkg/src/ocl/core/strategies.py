"""
Online continual strategies: ER, OCAR, online EWC and NGD.

Each strategy consumes a new batch plus a buffer batch (possibly empty at the
start of the stream) and returns an updated network. The step functions are
pure apart from the rng they are handed; the `Strategy` classes own the
optimizer state across a run.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

from ocl.core import kfac
from ocl.core.errors import ConfigError, ShapeMismatch
from ocl.core.linalg import spd_inverse
from ocl.core.nn import (
    BackwardResult,
    Network,
    apply_update,
    empirical_sq_grads,
    flatten_blocks,
    forward,
    loss_and_grad,
    unflatten_blocks,
)
from ocl.core.replay import Batch, ReplayBuffer, concat_batches, distinct_classes

log = logging.getLogger(__name__)

LambdaMode = Literal["class_ratio", "time_growth", "fixed"]
STRATEGIES = ("er", "ocar", "ewc", "ngd")


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    delta_tau: float = 0.0
    ema_coeff: float = 1.0
    inner_steps: int = 1
    new_batch_size: int = 10
    buffer_batch_size: int = 10
    lambda_mode: LambdaMode = "class_ratio"
    lambda_value: float = 1.0
    delta_lambda: float | None = None  # None -> delta_tau
    classes_per_task: int | None = None  # None -> estimated from recent batches
    tau_init: float | None = None  # None -> alpha
    n_mc: int = 1
    ewc_penalty: float = 1.0
    ngd_damping: float = 1e-3
    max_escalations: int = 3
    k_window: int = 20

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"must be > 0, got {self.alpha}", field="alpha")
        if self.delta_tau < 0:
            raise ConfigError(f"must be >= 0, got {self.delta_tau}", field="delta_tau")
        if not 0.0 < self.ema_coeff <= 1.0:
            raise ConfigError(f"must be in (0, 1], got {self.ema_coeff}", field="ema_coeff")
        if self.inner_steps < 1:
            raise ConfigError(f"must be >= 1, got {self.inner_steps}", field="inner_steps")
        if self.new_batch_size < 1 or self.buffer_batch_size < 0:
            raise ConfigError("batch sizes must be positive", field="new_batch_size")
        if self.lambda_mode not in ("class_ratio", "time_growth", "fixed"):
            raise ConfigError(f"unknown mode {self.lambda_mode!r}", field="lambda_mode")
        if self.n_mc < 1:
            raise ConfigError(f"must be >= 1, got {self.n_mc}", field="n_mc")
        if self.tau_init is not None and self.tau_init < 0:
            raise ConfigError(f"must be >= 0, got {self.tau_init}", field="tau_init")

    @property
    def initial_tau(self) -> float:
        return self.alpha if self.tau_init is None else self.tau_init

    @property
    def lambda_step(self) -> float:
        return self.delta_tau if self.delta_lambda is None else self.delta_lambda


# --------- Shared pieces ---------
def joint_batch(new_batch: Batch, buf_batch: Batch | None) -> tuple[Batch, np.ndarray]:
    """Concatenate new and buffer data; mask marks buffer examples."""
    return concat_batches(new_batch, buf_batch)


def joint_gradient(net: Network, batch: Batch):
    cache = forward(net, batch.inputs)
    loss, grads = loss_and_grad(net, cache, batch.targets, "true")
    return loss, cache, grads


def lambda_schedule(
    mode: LambdaMode,
    buffer: ReplayBuffer | None,
    current_batch_classes: int | None,
    step: int,
    *,
    lam_prev: float = 1.0,
    delta: float = 0.0,
    fixed_value: float = 1.0,
) -> float:
    """
    Buffer weight for the Fisher statistics.

    class_ratio: n/k with n distinct classes in the buffer and k classes in
    the current portion of the stream (1 when either is unknown or zero).
    time_growth: previous value plus `delta`. fixed: `fixed_value`.
    """
    if mode == "fixed":
        return float(fixed_value)
    if mode == "time_growth":
        return float(lam_prev) + float(delta)
    if buffer is None or len(buffer) == 0:
        return 1.0
    n = distinct_classes(buffer)
    if not current_batch_classes:
        return 1.0
    return n / float(current_batch_classes)


class RecentClasses:
    """Union of labels over the last `window` new batches (the k estimate)."""

    def __init__(self, window: int = 20):
        self._seen: deque[frozenset[int]] = deque(maxlen=window)

    def observe(self, targets: np.ndarray) -> None:
        self._seen.append(frozenset(int(t) for t in np.asarray(targets).reshape(-1)))

    @property
    def count(self) -> int:
        return len(frozenset().union(*self._seen)) if self._seen else 0


# --------- ER ---------
def er_step(net: Network, new_batch: Batch, buf_batch: Batch | None, alpha: float) -> Network:
    """One SGD step on the mean loss of new and buffer data taken as one batch."""
    batch, _ = joint_batch(new_batch, buf_batch)
    _, _, grads = joint_gradient(net, batch)
    return apply_update(net, grads, alpha)


# --------- OCAR ---------
def _fisher_passes(net: Network, cache, n_mc: int, rng: np.random.Generator) -> list[BackwardResult]:
    return [loss_and_grad(net, cache, None, "sampled", rng)[1] for _ in range(n_mc)]


def ocar_step(
    net: Network,
    kfac_state: kfac.KfacState,
    new_batch: Batch,
    buf_batch: Batch | None,
    hp: HyperParams,
    step_index: int,
    classifier_grew: bool,
    *,
    inner: int = 0,
    rng: np.random.Generator,
    buffer: ReplayBuffer | None = None,
    current_classes: int | None = None,
    record: dict | None = None,
) -> tuple[Network, kfac.KfacState]:
    """
    One inner step of curvature-aware replay.

    tau grows by delta_tau and lambda follows its schedule on every inner
    step; the factors, their EMA and the damped inverses are refreshed only on
    the first inner step (``inner == 0``) of a batch.
    """
    batch, mask = joint_batch(new_batch, buf_batch)
    loss, cache, grads = joint_gradient(net, batch)

    lam = lambda_schedule(
        hp.lambda_mode,
        buffer,
        current_classes,
        step_index,
        lam_prev=kfac_state.lam,
        delta=hp.lambda_step,
        fixed_value=hp.lambda_value,
    )
    state = replace(kfac_state, tau=kfac_state.tau + hp.delta_tau, lam=lam)

    if inner == 0:
        fisher = _fisher_passes(net, cache, hp.n_mc, rng)
        factors = kfac.compute_batch_factors(cache, fisher, mask, state.lam)
        state = kfac.ema_update(state, factors, classifier_grew)
        state = kfac.invert_with_escalation(state, hp.max_escalations)

    direction = kfac.precondition(state, grads)
    if record is not None:
        ratio = kfac.grad_norm_ratio(direction, grads, hp.alpha)
        record.update(kfac.diagnostic_record(state, step_index, ratio))
        record["loss"] = loss
    return apply_update(net, direction, hp.alpha), state


# --------- Online EWC ---------
@dataclass(frozen=True, eq=False)
class EwcState:
    fisher_ema: tuple[np.ndarray, ...] | None = None
    prev_weights: tuple[np.ndarray, ...] | None = None
    penalty_strength: float = 1.0


def _pad_to(block: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if block.shape == shape:
        return block
    if any(s < b for s, b in zip(shape, block.shape)):
        raise ShapeMismatch(f"[ewc] cannot shrink {block.shape} to {shape}")
    out = np.zeros(shape)
    out[tuple(slice(0, s) for s in block.shape)] = block
    return out


def ewc_penalty(net: Network, state: EwcState, penalty: float) -> tuple[float, BackwardResult]:
    """Value and gradient of ``penalty * sum F (w - w_prev)^2``."""
    blocks = [layer.block() for layer in net.layers]
    if state.fisher_ema is None or state.prev_weights is None or penalty == 0.0:
        return 0.0, BackwardResult.from_blocks([np.zeros_like(b) for b in blocks])
    value, grad_blocks = 0.0, []
    for w, f, w_prev in zip(blocks, state.fisher_ema, state.prev_weights):
        f = _pad_to(f, w.shape)
        # rows added by a grown classifier have no anchor
        diff = w - _pad_to(w_prev, w.shape)
        diff[w_prev.shape[0] :] = 0.0
        value += penalty * float(np.sum(f * diff * diff))
        grad_blocks.append(2.0 * penalty * f * diff)
    return value, BackwardResult.from_blocks(grad_blocks)


def ewc_online_step(
    net: Network,
    ewc_state: EwcState,
    new_batch: Batch,
    buf_batch: Batch | None,
    alpha: float,
    penalty: float,
    gamma: float,
) -> tuple[Network, EwcState]:
    """
    Replay SGD plus a step-to-step EWC penalty. The diagonal empirical Fisher
    EMA is refreshed from the buffer batch before the step; the anchor is the
    weights the step starts from.
    """
    fisher = ewc_state.fisher_ema
    if buf_batch is not None and len(buf_batch) > 0:
        cache_b = forward(net, buf_batch.inputs)
        _, grads_b = loss_and_grad(net, cache_b, buf_batch.targets, "true")
        batch_f = empirical_sq_grads(cache_b, grads_b)
        if fisher is None:
            fisher = tuple(gamma * f for f in batch_f)
        else:
            fisher = tuple(
                (1.0 - gamma) * _pad_to(old, new.shape) + gamma * new
                for old, new in zip(fisher, batch_f)
            )
    state = replace(ewc_state, fisher_ema=fisher, penalty_strength=penalty)

    batch, _ = joint_batch(new_batch, buf_batch)
    _, _, grads = joint_gradient(net, batch)
    if penalty != 0.0 and state.fisher_ema is not None and state.prev_weights is not None:
        _, pen_grads = ewc_penalty(net, state, penalty)
        grads = grads.plus(pen_grads)
    anchor = tuple(layer.block() for layer in net.layers)
    return apply_update(net, grads, alpha), replace(state, prev_weights=anchor)


# --------- Natural gradient ---------
@dataclass(frozen=True, eq=False)
class NgdState:
    dense: bool = True
    fisher_ema: np.ndarray | None = None
    kfac_state: kfac.KfacState | None = None
    damping: float = 1e-3
    # skip the EMA refresh (injected Fisher)
    fixed_fisher: bool = False


def per_example_flat_grads(cache, grads: BackwardResult) -> np.ndarray:
    """(n x P) per-example gradients in the `flatten_blocks` ordering."""
    n = cache.batch_size
    cols = [
        (a[:, :, None] * g[:, None, :]).reshape(n, -1) for a, g in zip(cache.a_bar, grads.g)
    ]
    return np.hstack(cols)


def ngd_step(
    net: Network,
    ngd_state: NgdState,
    new_batch: Batch,
    buf_batch: Batch | None,
    alpha: float,
    damping: float,
    gamma: float,
    *,
    rng: np.random.Generator,
    classifier_grew: bool = False,
) -> tuple[Network, NgdState]:
    """
    Replay gradient preconditioned by ``(F_ema + damping I)^-1``: dense over
    all parameters in convex mode, K-FAC with unit buffer weight and constant
    damping otherwise. No tau or lambda schedules.
    """
    batch, mask = joint_batch(new_batch, buf_batch)
    _, cache, grads = joint_gradient(net, batch)

    if not ngd_state.dense:
        ks = ngd_state.kfac_state or kfac.KfacState(ema_coeff=gamma)
        ks = replace(ks, tau=damping, lam=1.0)
        if not ngd_state.fixed_fisher:
            fisher = loss_and_grad(net, cache, None, "sampled", rng)[1]
            factors = kfac.compute_batch_factors(cache, fisher, mask, 1.0)
            ks = kfac.ema_update(ks, factors, classifier_grew)
        ks = kfac.invert_damped(ks)
        direction = kfac.precondition(ks, grads)
        return apply_update(net, direction, alpha), replace(ngd_state, kfac_state=ks, damping=damping)

    fisher = ngd_state.fisher_ema
    if not ngd_state.fixed_fisher:
        sampled = loss_and_grad(net, cache, None, "sampled", rng)[1]
        per_ex = per_example_flat_grads(cache, sampled)
        batch_f = per_ex.T @ per_ex / per_ex.shape[0]
        if fisher is None:
            fisher = batch_f
        elif fisher.shape != batch_f.shape:
            # parameter count changed with the classifier; restart the average
            fisher = batch_f
        else:
            fisher = (1.0 - gamma) * fisher + gamma * batch_f
    flat = flatten_blocks(grads.blocks())
    inv = spd_inverse(fisher + damping * np.eye(fisher.shape[0]))
    direction = BackwardResult.from_blocks(unflatten_blocks(inv @ flat, net.shapes()))
    return apply_update(net, direction, alpha), replace(ngd_state, fisher_ema=fisher, damping=damping)


# --------- Strategy objects ---------
class Strategy:
    """Owns a method's optimizer state for one run."""

    name = "base"

    def __init__(self, hp: HyperParams, rng: np.random.Generator):
        self.hp = hp
        self.rng = rng
        self.last_record: dict = {}

    def begin_batch(self, new_batch: Batch, buffer: ReplayBuffer) -> None:
        """Hook called once per incoming batch before the inner steps."""

    def step(
        self,
        net: Network,
        new_batch: Batch,
        buf_batch: Batch | None,
        *,
        inner: int,
        step_index: int,
        classifier_grew: bool,
    ) -> Network:
        raise NotImplementedError


class ErStrategy(Strategy):
    name = "er"

    def step(self, net, new_batch, buf_batch, *, inner, step_index, classifier_grew):
        self.last_record = {"step": step_index}
        return er_step(net, new_batch, buf_batch, self.hp.alpha)


class OcarStrategy(Strategy):
    name = "ocar"

    def __init__(self, hp: HyperParams, rng: np.random.Generator, track_classes: bool = True):
        super().__init__(hp, rng)
        self.state = kfac.KfacState(ema_coeff=hp.ema_coeff, tau=hp.initial_tau, lam=1.0)
        self.recent = RecentClasses(hp.k_window)
        self.track_classes = track_classes
        self._buffer: ReplayBuffer | None = None

    def begin_batch(self, new_batch, buffer):
        self._buffer = buffer
        if self.track_classes:
            self.recent.observe(new_batch.targets)

    def current_classes(self) -> int | None:
        if self.hp.classes_per_task:
            return self.hp.classes_per_task
        return self.recent.count or None

    def step(self, net, new_batch, buf_batch, *, inner, step_index, classifier_grew):
        record: dict = {}
        net, self.state = ocar_step(
            net,
            self.state,
            new_batch,
            buf_batch,
            self.hp,
            step_index,
            classifier_grew and inner == 0,
            inner=inner,
            rng=self.rng,
            buffer=self._buffer if self.hp.lambda_mode == "class_ratio" else None,
            current_classes=self.current_classes(),
            record=record,
        )
        self.last_record = record
        return net


class EwcStrategy(Strategy):
    name = "ewc"

    def __init__(self, hp: HyperParams, rng: np.random.Generator):
        super().__init__(hp, rng)
        self.state = EwcState(penalty_strength=hp.ewc_penalty)

    def step(self, net, new_batch, buf_batch, *, inner, step_index, classifier_grew):
        self.last_record = {"step": step_index}
        net, self.state = ewc_online_step(
            net, self.state, new_batch, buf_batch, self.hp.alpha, self.hp.ewc_penalty, self.hp.ema_coeff
        )
        return net


class NgdStrategy(Strategy):
    name = "ngd"

    def __init__(self, hp: HyperParams, rng: np.random.Generator, dense: bool = True):
        super().__init__(hp, rng)
        self.state = NgdState(dense=dense, damping=hp.ngd_damping)

    def step(self, net, new_batch, buf_batch, *, inner, step_index, classifier_grew):
        self.last_record = {"step": step_index}
        net, self.state = ngd_step(
            net,
            self.state,
            new_batch,
            buf_batch,
            self.hp.alpha,
            self.hp.ngd_damping,
            self.hp.ema_coeff,
            rng=self.rng,
            classifier_grew=classifier_grew and inner == 0,
        )
        return net


def make_strategy(
    name: str,
    hp: HyperParams,
    rng: np.random.Generator,
    *,
    dense_fisher: bool = False,
    track_classes: bool = True,
) -> Strategy:
    key = name.lower()
    if key == "er":
        return ErStrategy(hp, rng)
    if key == "ocar":
        return OcarStrategy(hp, rng, track_classes=track_classes)
    if key == "ewc":
        return EwcStrategy(hp, rng)
    if key == "ngd":
        return NgdStrategy(hp, rng, dense=dense_fisher)
    raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}", field="strategy")
