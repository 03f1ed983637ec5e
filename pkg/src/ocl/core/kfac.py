"""
Kronecker-factored Fisher estimates for the curvature-aware replay update.

Per layer the Fisher block is approximated by ``A kron G`` with
``A = E[a_bar a_bar^T]`` (bias-augmented inputs) and ``G = E[g g^T]``
(pre-activation gradients under model-sampled labels). Factors are tracked
with an EMA; buffer examples are up-weighted by lambda before averaging;
damping is split between the two factors with the usual pi correction:
``(A + pi*sqrt(tau) I) kron (G + sqrt(tau)/pi I)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from ocl.core.errors import EmptyBatch, NotPositiveDefinite, ShapeMismatch, StaleInverse
from ocl.core.linalg import kron_dense, kron_precondition, spd_inverse, sym_eig
from ocl.core.nn import BackwardResult, ForwardCache

log = logging.getLogger(__name__)

PI_MIN, PI_MAX = 1e-3, 1e3


@dataclass(frozen=True, eq=False)
class LayerFactors:
    A: np.ndarray
    G: np.ndarray


@dataclass(frozen=True, eq=False)
class KfacState:
    ema_coeff: float = 1.0
    tau: float = 0.0
    lam: float = 1.0
    factors: tuple[LayerFactors, ...] | None = None
    a_inv: tuple[np.ndarray, ...] = ()
    g_inv: tuple[np.ndarray, ...] = ()
    damping: tuple[tuple[float, float], ...] = ()
    inverses_fresh: bool = False
    # factors are left untouched by ema_update (injected curvature)
    fixed_factors: bool = False


@dataclass(frozen=True, eq=False)
class EffectiveSpectrum:
    sigma: np.ndarray
    tau_eff: np.ndarray
    multipliers: np.ndarray
    eigenvectors: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


class NormRatio(NamedTuple):
    value: float
    zero_raw: bool


def identity_state(shapes: Sequence[tuple[int, int]], *, tau: float = 0.0) -> KfacState:
    """State whose factors are identities and stay fixed; `shapes` are (out, in)."""
    factors = tuple(
        LayerFactors(A=np.eye(in_dim + 1), G=np.eye(out_dim)) for out_dim, in_dim in shapes
    )
    return KfacState(tau=tau, factors=factors, fixed_factors=True)


# --------- Factor estimation ---------
def example_weights(buffer_mask: np.ndarray, lam: float) -> np.ndarray:
    """Buffer examples weigh `lam`, new ones 1, normalised to mean 1."""
    mask = np.asarray(buffer_mask, dtype=bool)
    if mask.size == 0:
        raise EmptyBatch("[kfac] empty batch")
    w = np.where(mask, float(lam), 1.0)
    mean = w.mean()
    return w / mean if mean > 0 else np.ones_like(w)


def compute_batch_factors(
    cache: ForwardCache,
    fisher_grads: BackwardResult | Sequence[BackwardResult],
    buffer_mask: np.ndarray,
    lam: float,
) -> tuple[LayerFactors, ...]:
    """
    Weighted second moments of a_bar and g for every layer.

    `fisher_grads` comes from sampled-label passes; several passes (n_mc > 1)
    are averaged in G.
    """
    draws = [fisher_grads] if isinstance(fisher_grads, BackwardResult) else list(fisher_grads)
    n = cache.batch_size
    if n == 0 or not draws:
        raise EmptyBatch("[kfac] empty batch")
    if len(buffer_mask) != n:
        raise ShapeMismatch(f"[kfac] mask length {len(buffer_mask)} != batch size {n}")
    w = example_weights(buffer_mask, lam)
    out = []
    for i, a_bar in enumerate(cache.a_bar):
        A = (a_bar * w[:, None]).T @ a_bar / n
        G = sum((d.g[i] * w[:, None]).T @ d.g[i] for d in draws) / (n * len(draws))
        out.append(LayerFactors(A=A, G=G))
    return tuple(out)


def ema_update(
    state: KfacState, batch_factors: Sequence[LayerFactors], classifier_grew: bool = False
) -> KfacState:
    """
    Blend batch factors into the EMA. A grown classifier resets the last G
    to the batch estimate while its A keeps the running average.
    """
    if state.fixed_factors:
        return state
    if state.factors is None:
        # first observation seeds the average
        seeded = tuple(LayerFactors(A=f.A.copy(), G=f.G.copy()) for f in batch_factors)
        return replace(state, factors=seeded, inverses_fresh=False)
    if len(batch_factors) != len(state.factors):
        raise ShapeMismatch(
            f"[kfac] {len(batch_factors)} batch factors for {len(state.factors)} layers"
        )
    gamma = state.ema_coeff
    last = len(state.factors) - 1
    updated = []
    for i, (old, new) in enumerate(zip(state.factors, batch_factors)):
        if old.A.shape != new.A.shape:
            raise ShapeMismatch(f"[kfac] layer {i} A shape {new.A.shape} vs {old.A.shape}")
        A = (1.0 - gamma) * old.A + gamma * new.A
        if i == last and classifier_grew:
            G = new.G.copy()
        elif old.G.shape != new.G.shape:
            raise ShapeMismatch(f"[kfac] layer {i} G shape {new.G.shape} vs {old.G.shape}")
        else:
            G = (1.0 - gamma) * old.G + gamma * new.G
        updated.append(LayerFactors(A=A, G=G))
    return replace(state, factors=tuple(updated), inverses_fresh=False)


# --------- Damping / inversion ---------
def pi_correction(A: np.ndarray, G: np.ndarray) -> float:
    mean_a = np.trace(A) / A.shape[0]
    mean_g = np.trace(G) / G.shape[0]
    if mean_a <= 0.0 and mean_g <= 0.0:
        return 1.0
    if mean_g <= 0.0:
        return PI_MAX
    return float(np.clip(np.sqrt(max(mean_a, 0.0) / mean_g), PI_MIN, PI_MAX))


def factored_damping(A: np.ndarray, G: np.ndarray, tau: float) -> tuple[float, float]:
    pi = pi_correction(A, G)
    root = np.sqrt(max(tau, 0.0))
    return pi * root, root / pi


def invert_damped(state: KfacState) -> KfacState:
    if state.factors is None:
        raise StaleInverse("[kfac] no factors to invert")
    a_inv, g_inv, damping = [], [], []
    for f in state.factors:
        a, b = factored_damping(f.A, f.G, state.tau)
        a_inv.append(spd_inverse(f.A + a * np.eye(f.A.shape[0])))
        g_inv.append(spd_inverse(f.G + b * np.eye(f.G.shape[0])))
        damping.append((a, b))
    return replace(
        state,
        a_inv=tuple(a_inv),
        g_inv=tuple(g_inv),
        damping=tuple(damping),
        inverses_fresh=True,
    )


def invert_with_escalation(state: KfacState, max_escalations: int = 3) -> KfacState:
    """`invert_damped`, raising tau tenfold on failure up to `max_escalations` times."""
    attempt = state
    for escalation in range(max_escalations + 1):
        try:
            return invert_damped(attempt)
        except NotPositiveDefinite:
            if escalation == max_escalations:
                raise
            new_tau = max(attempt.tau * 10.0, 1e-8)
            log.warning(
                "[kfac] damped factors not PD at tau=%.3g, retrying with tau=%.3g",
                attempt.tau,
                new_tau,
            )
            attempt = replace(attempt, tau=new_tau)
    raise AssertionError("unreachable")


# --------- Preconditioning ---------
def precondition(state: KfacState, train_grads: BackwardResult) -> BackwardResult:
    if not state.inverses_fresh:
        raise StaleInverse("[kfac] invert_damped must run after ema_update")
    blocks = train_grads.blocks()
    if len(blocks) != len(state.a_inv):
        raise ShapeMismatch(f"[kfac] {len(blocks)} gradient blocks for {len(state.a_inv)} layers")
    return BackwardResult.from_blocks(
        [kron_precondition(ai, gi, v) for ai, gi, v in zip(state.a_inv, state.g_inv, blocks)]
    )


def dense_damped_block(state: KfacState, layer_index: int) -> np.ndarray:
    """Dense ``(A + aI) kron (G + bI)`` for one layer (diagnostics and tests)."""
    if state.factors is None:
        raise StaleInverse("[kfac] no factors")
    f = state.factors[layer_index]
    a, b = factored_damping(f.A, f.G, state.tau)
    return kron_dense(f.A + a * np.eye(f.A.shape[0]), f.G + b * np.eye(f.G.shape[0]))


def effective_spectrum(state: KfacState, layer_index: int, alpha: float) -> EffectiveSpectrum:
    """
    Eigenvalues sigma of the undamped block ``A kron G`` and the step multiplier
    ``alpha / (sigma + tau_eff)`` the damped inverse applies along each eigenvector.

    With factored damping ``tau_eff = a*sigma_G + b*sigma_A + a*b`` per pair,
    which collapses to tau when both factor eigenvalues vanish.
    """
    if state.factors is None:
        raise StaleInverse("[kfac] no factors")
    f = state.factors[layer_index]
    a, b = factored_damping(f.A, f.G, state.tau)
    sa, qa = sym_eig(f.A)
    sg, qg = sym_eig(f.G)
    sigma = np.kron(sa, sg)
    tau_eff = a * np.kron(np.ones_like(sa), sg) + b * np.kron(sa, np.ones_like(sg)) + a * b
    order = np.argsort(sigma)[::-1]
    vecs = np.kron(qa, qg)[:, order]
    sigma, tau_eff = sigma[order], tau_eff[order]
    return EffectiveSpectrum(
        sigma=sigma,
        tau_eff=tau_eff,
        multipliers=alpha / (sigma + tau_eff),
        eigenvectors=vecs,
    )


def grad_norm_ratio(preconditioned: BackwardResult, raw: BackwardResult, alpha: float) -> NormRatio:
    raw_norm = raw.norm()
    if raw_norm == 0.0:
        return NormRatio(0.0, True)
    return NormRatio(abs(alpha) * preconditioned.norm() / raw_norm, False)


def diagnostic_record(state: KfacState, step: int, ratio: NormRatio | None) -> dict:
    rec = {"step": int(step), "tau": float(state.tau), "lambda": float(state.lam)}
    if state.factors is not None:
        for i, f in enumerate(state.factors):
            rec[f"trace_A_{i}"] = float(np.trace(f.A))
            rec[f"trace_G_{i}"] = float(np.trace(f.G))
    if ratio is not None:
        rec["grad_norm_ratio"] = ratio.value
        rec["zero_raw_grad"] = ratio.zero_raw
    return rec
