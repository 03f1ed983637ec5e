"""Linear probing: retrain only the classifier on frozen penultimate features."""

from __future__ import annotations

import logging

import numpy as np

from ocl.core.linalg import sym_eig
from ocl.core.nn import Network, apply_update, forward, init_network, loss_and_grad
from ocl.core.replay import Batch

log = logging.getLogger(__name__)

MAX_EPOCHS = 200
PLATEAU_TOL = 1e-7


def penultimate_features(net: Network, inputs: np.ndarray) -> np.ndarray:
    if len(net.layers) < 2:
        raise ValueError("[probe] network needs at least 2 layers for a feature extractor")
    return forward(net, inputs).a_bar[-1][:, :-1]


def probe_features(
    train_x: np.ndarray,
    train_y: np.ndarray,
    eval_x: np.ndarray,
    eval_y: np.ndarray,
    *,
    max_epochs: int = MAX_EPOCHS,
) -> float:
    """
    Full-batch gradient descent on a zero-initialised softmax layer over
    standardised features; step 1/L with L the curvature bound of the
    cross-entropy (half the top eigenvalue of the feature second moment).
    """
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd = np.where(sd > 1e-8, sd, 1.0)
    xs = (train_x - mu) / sd
    xe = (eval_x - mu) / sd
    labels = np.asarray(train_y).astype(np.int64).reshape(-1)
    n_classes = int(max(labels.max(), np.asarray(eval_y).max())) + 1

    a_bar = np.hstack([xs, np.ones((xs.shape[0], 1))])
    top = sym_eig(a_bar.T @ a_bar / a_bar.shape[0])[0][0]
    lr = 1.0 / max(0.5 * top, 1e-12)

    head = init_network([xs.shape[1], n_classes], np.random.default_rng(0), zero=True)
    prev = np.inf
    for epoch in range(max_epochs):
        cache = forward(head, xs)
        loss, grads = loss_and_grad(head, cache, labels)
        if abs(prev - loss) < PLATEAU_TOL * (1.0 + loss):
            log.debug("[probe] plateau after %d epochs (loss=%.6g)", epoch, loss)
            break
        prev = loss
        head = apply_update(head, grads, lr)
    preds = forward(head, xe).outputs.argmax(axis=1)
    return float(np.mean(preds == np.asarray(eval_y).reshape(-1)))


def linear_probe(
    net: Network,
    train: Batch,
    eval_set: Batch,
    seed: int,
    *,
    max_train: int | None = None,
) -> float:
    """Probed accuracy of `net`'s features; `seed` drives the optional train subsample."""
    x, y = train.inputs, train.targets
    if max_train is not None and max_train < len(train):
        idx = np.sort(np.random.default_rng(seed).choice(len(train), size=max_train, replace=False))
        x, y = x[idx], y[idx]
    return probe_features(
        penultimate_features(net, x),
        y,
        penultimate_features(net, eval_set.inputs),
        eval_set.targets,
    )
