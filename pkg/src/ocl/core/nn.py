"""
Minimal reverse-mode feed-forward network with the per-layer statistics K-FAC needs.

Conventions
-----------
- Layer weights are (out_dim x in_dim); the bias-augmented input of a layer is
  ``a_bar = [a, 1]`` so the combined parameter block is ``[W | b]``.
- `BackwardResult.g` holds per-example pre-activation gradients of the
  per-example loss (not divided by the batch size); parameter gradients are
  those of the batch-mean loss.
- Networks are value types: every operation returns a new `Network`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ocl.core.errors import InvalidClassIndex, ShapeMismatch

Activation = Literal["relu", "identity"]
HeadKind = Literal["softmax_ce", "gaussian_mse"]
LabelMode = Literal["true", "sampled"]


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: Activation = "identity"

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])

    def block(self) -> np.ndarray:
        """The (out_dim x in_dim+1) parameter block [W | b]."""
        return np.hstack([self.weight, self.bias[:, None]])


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[Layer, ...]
    head: HeadKind = "softmax_ce"

    def __post_init__(self):
        if not self.layers:
            raise ShapeMismatch("[nn] network needs at least one layer")
        for prev, nxt in zip(self.layers[:-1], self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatch(
                    f"[nn] layer dims incompatible: {prev.out_dim} -> {nxt.in_dim}"
                )
        if self.layers[-1].activation != "identity":
            raise ShapeMismatch("[nn] last layer activation must be identity")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def shapes(self) -> list[tuple[int, int]]:
        return [(layer.out_dim, layer.in_dim) for layer in self.layers]


@dataclass
class ForwardCache:
    a_bar: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: np.ndarray

    @property
    def batch_size(self) -> int:
        return int(self.outputs.shape[0])


@dataclass
class BackwardResult:
    grads_w: list[np.ndarray]
    grads_b: list[np.ndarray]
    g: list[np.ndarray] = field(default_factory=list)

    def blocks(self) -> list[np.ndarray]:
        return [np.hstack([gw, gb[:, None]]) for gw, gb in zip(self.grads_w, self.grads_b)]

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "BackwardResult":
        return cls(
            grads_w=[np.array(b[:, :-1]) for b in blocks],
            grads_b=[np.array(b[:, -1]) for b in blocks],
        )

    def scaled(self, c: float) -> "BackwardResult":
        return BackwardResult(
            grads_w=[c * gw for gw in self.grads_w],
            grads_b=[c * gb for gb in self.grads_b],
        )

    def plus(self, other: "BackwardResult") -> "BackwardResult":
        return BackwardResult(
            grads_w=[a + b for a, b in zip(self.grads_w, other.grads_w)],
            grads_b=[a + b for a, b in zip(self.grads_b, other.grads_b)],
        )

    def norm(self) -> float:
        total = sum(float(np.sum(gw * gw)) for gw in self.grads_w)
        total += sum(float(np.sum(gb * gb)) for gb in self.grads_b)
        return float(np.sqrt(total))


# --------- Construction ---------
def init_network(
    sizes: Sequence[int],
    rng: np.random.Generator,
    *,
    head: HeadKind = "softmax_ce",
    zero: bool = False,
) -> Network:
    """
    Build a ReLU MLP with layer widths `sizes` (input first, output last).

    Hidden layers use He initialisation, the classifier N(0, 1/in_dim), biases
    start at zero. ``zero=True`` gives the all-zero linear model.
    """
    if len(sizes) < 2:
        raise ShapeMismatch(f"[nn] need at least input and output sizes, got {sizes}")
    layers = []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n_layers - 1
        if zero:
            w = np.zeros((fan_out, fan_in))
        else:
            scale = np.sqrt((1.0 if last else 2.0) / fan_in)
            w = rng.normal(0.0, scale, size=(fan_out, fan_in))
        layers.append(
            Layer(
                weight=w,
                bias=np.zeros(fan_out),
                activation="identity" if last else "relu",
            )
        )
    return Network(layers=tuple(layers), head=head)


# --------- Forward / backward ---------
def _head_outputs(a: np.ndarray, layer: Layer, chunk: int = 512) -> np.ndarray:
    # Explicit product + reduction over the input axis: each output column only
    # depends on its own weight row, so widening the head keeps old logits bitwise.
    out = np.empty((a.shape[0], layer.out_dim))
    for start in range(0, a.shape[0], chunk):
        rows = a[start : start + chunk]
        out[start : start + chunk] = (rows[:, None, :] * layer.weight[None, :, :]).sum(axis=-1)
    return out + layer.bias


def forward(net: Network, x: np.ndarray) -> ForwardCache:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeMismatch(
            f"[nn] input shape {x.shape} does not match in_dim {net.in_dim}"
        )
    a = x
    a_bars, pres = [], []
    last = len(net.layers) - 1
    for i, layer in enumerate(net.layers):
        a_bars.append(np.hstack([a, np.ones((a.shape[0], 1))]))
        pre = _head_outputs(a, layer) if i == last else a @ layer.weight.T + layer.bias
        pres.append(pre)
        a = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return ForwardCache(a_bar=a_bars, pre=pres, outputs=a)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _output_residual(
    net: Network,
    outputs: np.ndarray,
    targets: np.ndarray,
    mode: LabelMode,
    rng: np.random.Generator | None,
) -> tuple[float, np.ndarray]:
    """Per-example mean loss and d(loss_i)/d(outputs_i)."""
    n = outputs.shape[0]
    if net.head == "softmax_ce":
        p = softmax(outputs)
        if mode == "sampled":
            if rng is None:
                raise ValueError("[nn] sampled labels need an rng")
            u = rng.random((n, 1))
            labels = (p.cumsum(axis=1) < u).sum(axis=1)
            labels = np.minimum(labels, p.shape[1] - 1)
        else:
            labels = np.asarray(targets).astype(np.int64).reshape(-1)
            if labels.shape[0] != n:
                raise ShapeMismatch(f"[nn] {labels.shape[0]} labels for batch of {n}")
            bad = (labels < 0) | (labels >= outputs.shape[1])
            if bad.any():
                raise InvalidClassIndex(
                    f"[nn] label {int(labels[bad][0])} outside classifier of width {outputs.shape[1]}"
                )
        log_p = outputs - outputs.max(axis=1, keepdims=True)
        log_p = log_p - np.log(np.exp(log_p).sum(axis=1, keepdims=True))
        loss = -float(np.mean(log_p[np.arange(n), labels]))
        resid = p.copy()
        resid[np.arange(n), labels] -= 1.0
        return loss, resid

    if mode == "sampled":
        if rng is None:
            raise ValueError("[nn] sampled labels need an rng")
        y = outputs + rng.standard_normal(outputs.shape)
    else:
        y = np.asarray(targets, dtype=np.float64).reshape(outputs.shape)
    resid = outputs - y
    loss = 0.5 * float(np.mean(np.sum(resid * resid, axis=1)))
    return loss, resid


def loss_and_grad(
    net: Network,
    cache: ForwardCache,
    targets: np.ndarray | None,
    mode: LabelMode = "true",
    rng: np.random.Generator | None = None,
) -> tuple[float, BackwardResult]:
    """
    Batch-mean loss and exact reverse-mode gradients.

    ``mode="sampled"`` replaces targets with one draw per example from the
    model's own predictive distribution (categorical or unit-variance Gaussian),
    which is what the true Fisher statistics are built from.
    """
    loss, dpre = _output_residual(net, cache.outputs, targets, mode, rng)
    n = cache.batch_size
    grads_w: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    gs: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        a_in = cache.a_bar[i][:, :-1]
        gs[i] = dpre
        grads_w[i] = dpre.T @ a_in / n
        grads_b[i] = dpre.sum(axis=0) / n
        if i > 0:
            d_a = dpre @ layer.weight
            prev = net.layers[i - 1]
            if prev.activation == "relu":
                d_a = d_a * (cache.pre[i - 1] > 0.0)
            dpre = d_a
    return loss, BackwardResult(grads_w=grads_w, grads_b=grads_b, g=gs)


def empirical_sq_grads(cache: ForwardCache, grads: BackwardResult) -> list[np.ndarray]:
    """Mean over examples of squared per-example block gradients, per layer."""
    n = cache.batch_size
    return [(g * g).T @ (a * a) / n for g, a in zip(grads.g, cache.a_bar)]


def predict_loss(net: Network, x: np.ndarray, targets: np.ndarray) -> float:
    cache = forward(net, x)
    loss, _ = _output_residual(net, cache.outputs, targets, "true", None)
    return loss


# --------- Updates ---------
def grow_classifier(
    net: Network, new_num_classes: int, rng: np.random.Generator
) -> tuple[Network, bool]:
    """Widen the last layer; new rows ~ N(0, 1/in_dim), new biases zero."""
    last = net.layers[-1]
    if new_num_classes <= last.out_dim:
        return net, False
    extra = new_num_classes - last.out_dim
    new_w = rng.normal(0.0, np.sqrt(1.0 / last.in_dim), size=(extra, last.in_dim))
    grown = Layer(
        weight=np.vstack([last.weight, new_w]),
        bias=np.concatenate([last.bias, np.zeros(extra)]),
        activation=last.activation,
    )
    return Network(layers=net.layers[:-1] + (grown,), head=net.head), True


def apply_update(net: Network, direction: BackwardResult, step: float) -> Network:
    if len(direction.grads_w) != len(net.layers):
        raise ShapeMismatch(
            f"[nn] direction has {len(direction.grads_w)} layers, network {len(net.layers)}"
        )
    layers = []
    for layer, dw, db in zip(net.layers, direction.grads_w, direction.grads_b):
        if dw.shape != layer.weight.shape or db.shape != layer.bias.shape:
            raise ShapeMismatch(
                f"[nn] direction shape {dw.shape} vs weight {layer.weight.shape}"
            )
        layers.append(
            Layer(
                weight=layer.weight - step * dw,
                bias=layer.bias - step * db,
                activation=layer.activation,
            )
        )
    return Network(layers=tuple(layers), head=net.head)


def zeros_like(net: Network) -> BackwardResult:
    return BackwardResult(
        grads_w=[np.zeros_like(layer.weight) for layer in net.layers],
        grads_b=[np.zeros_like(layer.bias) for layer in net.layers],
    )


# --------- Flat parameter views ---------
def flatten_blocks(blocks: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate column-major vec([W|b]) of every layer."""
    return np.concatenate([b.reshape(-1, order="F") for b in blocks])


def unflatten_blocks(flat: np.ndarray, shapes: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Inverse of `flatten_blocks`; `shapes` are (out_dim, in_dim) per layer."""
    blocks, offset = [], 0
    for out_dim, in_dim in shapes:
        size = out_dim * (in_dim + 1)
        blocks.append(flat[offset : offset + size].reshape(out_dim, in_dim + 1, order="F"))
        offset += size
    if offset != flat.shape[0]:
        raise ShapeMismatch(f"[nn] flat vector has {flat.shape[0]} values, expected {offset}")
    return blocks


def flatten_params(net: Network) -> np.ndarray:
    return flatten_blocks([layer.block() for layer in net.layers])


def unflatten_params(template: Network, flat: np.ndarray) -> Network:
    blocks = unflatten_blocks(np.asarray(flat, dtype=np.float64), template.shapes())
    layers = tuple(
        Layer(weight=np.array(b[:, :-1]), bias=np.array(b[:, -1]), activation=layer.activation)
        for b, layer in zip(blocks, template.layers)
    )
    return Network(layers=layers, head=template.head)


# --------- Snapshots ---------
def save_snapshot(path: str | Path, rows: np.ndarray, meta: dict) -> None:
    """
    Write parameter vectors as little-endian float64 plus a JSON sidecar.

    `rows` is (n_snapshots x n_params) or a single vector; the sidecar carries
    `meta` together with the row count and parameter count.
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    arr = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    p.write_bytes(arr.astype("<f8").tobytes())
    write_snapshot_meta(p, meta, arr.shape[0], arr.shape[1])


def write_snapshot_meta(path: str | Path, meta: dict, n_rows: int, n_params: int) -> None:
    """JSON sidecar next to a float64 snapshot file."""
    sidecar = dict(meta)
    sidecar.update({"n_rows": int(n_rows), "n_params": int(n_params)})
    Path(path).with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_snapshot(path: str | Path) -> tuple[np.ndarray, dict]:
    p = Path(path)
    meta = json.loads(p.with_suffix(".json").read_text())
    arr = np.frombuffer(p.read_bytes(), dtype="<f8").astype(np.float64)
    return arr.reshape(meta["n_rows"], meta["n_params"]), meta


def network_meta(net: Network) -> dict:
    return {
        "head": net.head,
        "layers": [
            {"out_dim": layer.out_dim, "in_dim": layer.in_dim, "activation": layer.activation}
            for layer in net.layers
        ],
    }


def meta_param_count(meta: dict) -> int:
    return sum(spec["out_dim"] * (spec["in_dim"] + 1) for spec in meta["layers"])


def network_from_meta(meta: dict, flat: np.ndarray) -> Network:
    template = Network(
        layers=tuple(
            Layer(
                weight=np.zeros((spec["out_dim"], spec["in_dim"])),
                bias=np.zeros(spec["out_dim"]),
                activation=spec["activation"],
            )
            for spec in meta["layers"]
        ),
        head=meta["head"],
    )
    return unflatten_params(template, flat)
