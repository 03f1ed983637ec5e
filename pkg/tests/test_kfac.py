import numpy as np
import pytest

from ocl.core import kfac
from ocl.core.errors import EmptyBatch, NotPositiveDefinite, StaleInverse
from ocl.core.nn import (
    BackwardResult,
    empirical_sq_grads,
    forward,
    init_network,
    loss_and_grad,
    softmax,
)


def _spd(rng, n, floor=0.1):
    m = rng.standard_normal((n, n))
    return m @ m.T / n + floor * np.eye(n)


def _random_state(rng, shapes, tau, floor=0.1):
    factors = tuple(
        kfac.LayerFactors(A=_spd(rng, i + 1, floor), G=_spd(rng, o, floor)) for o, i in shapes
    )
    return kfac.invert_damped(kfac.KfacState(tau=tau, factors=factors))


def test_precondition_matches_dense_damped_inverse():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        # factor sizes up to 8 on both sides
        shapes = [(int(rng.integers(1, 9)), int(rng.integers(0, 8))) for _ in range(2)]
        state = _random_state(rng, shapes, tau=float(rng.uniform(0.01, 1.0)), floor=0.5)
        blocks = [rng.standard_normal((o, i + 1)) for o, i in shapes]
        out = kfac.precondition(state, BackwardResult.from_blocks(blocks)).blocks()
        for k, (v, got) in enumerate(zip(blocks, out)):
            dense = np.linalg.solve(kfac.dense_damped_block(state, k), v.reshape(-1, order="F"))
            worst = max(worst, float(np.max(np.abs(got.reshape(-1, order="F") - dense))))
    assert worst <= 1e-10


def test_precondition_is_linear():
    rng = np.random.default_rng(5)
    shapes = [(3, 4), (2, 3)]
    state = _random_state(rng, shapes, tau=0.2)
    g1 = BackwardResult.from_blocks([rng.standard_normal((o, i + 1)) for o, i in shapes])
    g2 = BackwardResult.from_blocks([rng.standard_normal((o, i + 1)) for o, i in shapes])
    a, b = 1.7, -0.4
    mixed = kfac.precondition(state, g1.scaled(a).plus(g2.scaled(b))).blocks()
    expected = (
        kfac.precondition(state, g1).scaled(a).plus(kfac.precondition(state, g2).scaled(b)).blocks()
    )
    for got, want in zip(mixed, expected):
        assert np.allclose(got, want, atol=1e-12)


def test_step_along_eigenvectors_scales_by_multiplier():
    rng = np.random.default_rng(1)
    alpha = 0.1
    state = _random_state(rng, [(3, 2)], tau=0.05)
    spec = kfac.effective_spectrum(state, 0, alpha)
    assert np.all(np.diff(spec.sigma) <= 1e-12)
    for k in range(spec.sigma.size):
        q = spec.eigenvectors[:, k]
        block = q.reshape(3, 3, order="F")
        got = kfac.precondition(state, BackwardResult.from_blocks([block])).blocks()[0]
        assert np.allclose(alpha * got.reshape(-1, order="F"), spec.multipliers[k] * q, atol=1e-10)


def test_tau_eff_collapses_to_tau_for_zero_eigenvalues():
    state = kfac.KfacState(
        tau=0.04,
        factors=(kfac.LayerFactors(A=np.diag([1.0, 0.0]), G=np.diag([1.0, 0.0])),),
    )
    spec = kfac.effective_spectrum(state, 0, 1.0)
    # the zero-zero pair gets a*b = tau
    assert np.isclose(spec.tau_eff.min(), 0.04)


def test_sampled_fisher_matches_analytic_softmax_fisher():
    rng = np.random.default_rng(2)
    net = init_network([3, 4], rng)
    x = np.tile(rng.standard_normal((1, 3)), (100_000, 1))
    cache = forward(net, x)
    _, sampled = loss_and_grad(net, cache, None, "sampled", rng)
    (factors,) = kfac.compute_batch_factors(cache, sampled, np.zeros(x.shape[0], dtype=bool), 1.0)
    p = softmax(cache.outputs[:1])[0]
    assert np.allclose(factors.G, np.diag(p) - np.outer(p, p), atol=0.01)
    a_bar = cache.a_bar[0][0]
    assert np.allclose(factors.A, np.outer(a_bar, a_bar))


def test_sampled_fisher_diagonal_matches_analytic_over_varied_inputs():
    rng = np.random.default_rng(6)
    net = init_network([5, 10], rng)
    n = 50_000
    x = rng.standard_normal((n, 5)) * np.array([0.5, 1.0, 2.0, 1.5, 0.8]) + 0.3
    cache = forward(net, x)
    _, sampled = loss_and_grad(net, cache, None, "sampled", rng)
    (estimate,) = empirical_sq_grads(cache, sampled)
    p = softmax(cache.outputs)
    h2 = cache.a_bar[0] ** 2
    # weight (i, j) of the Fisher diagonal is E[p_i (1 - p_i) h_j^2]
    analytic = (p * (1 - p)).T @ h2 / n
    per_example = (sampled.g[0][:, :, None] * cache.a_bar[0][:, None, :]) ** 2
    se = per_example.std(axis=0) / np.sqrt(n)
    within = np.abs(estimate - analytic) <= 3 * se
    assert estimate.shape == (10, 6)
    assert within.mean() >= 0.95


def test_example_weights():
    w = kfac.example_weights(np.array([False, False, True, True]), 3.0)
    assert np.allclose(w, [0.5, 0.5, 1.5, 1.5])
    assert np.isclose(w.mean(), 1.0)
    assert np.allclose(kfac.example_weights(np.array([False, True]), 0.0), [2.0, 0.0])
    with pytest.raises(EmptyBatch):
        kfac.example_weights(np.array([], dtype=bool), 1.0)


def test_buffer_weight_moves_factors_towards_buffer():
    rng = np.random.default_rng(3)
    net = init_network([2, 2], rng)
    x = np.vstack([np.zeros((5, 2)), 3.0 * np.ones((5, 2))])
    cache = forward(net, x)
    _, sampled = loss_and_grad(net, cache, None, "sampled", rng)
    mask = np.array([False] * 5 + [True] * 5)
    low = kfac.compute_batch_factors(cache, sampled, mask, 0.5)[0].A
    high = kfac.compute_batch_factors(cache, sampled, mask, 4.0)[0].A
    assert high[0, 0] > low[0, 0]


def test_ema_seeds_then_blends_and_resets_grown_classifier():
    f1 = (kfac.LayerFactors(A=np.eye(3), G=np.eye(2)),)
    f2 = (kfac.LayerFactors(A=3 * np.eye(3), G=5 * np.eye(4)),)
    state = kfac.ema_update(kfac.KfacState(ema_coeff=0.25), f1)
    assert np.array_equal(state.factors[0].A, np.eye(3))
    grown = kfac.ema_update(state, f2, classifier_grew=True)
    assert np.allclose(grown.factors[0].A, 1.5 * np.eye(3))
    assert np.array_equal(grown.factors[0].G, 5 * np.eye(4))
    assert not grown.inverses_fresh


def test_identity_state_is_fixed():
    state = kfac.identity_state([(2, 3)])
    same = kfac.ema_update(state, (kfac.LayerFactors(A=2 * np.eye(4), G=2 * np.eye(2)),))
    assert same is state
    inv = kfac.invert_damped(state)
    assert np.array_equal(inv.a_inv[0], np.eye(4))
    assert np.array_equal(inv.g_inv[0], np.eye(2))


def test_pi_correction_clamped():
    assert kfac.pi_correction(np.eye(2), np.eye(2)) == 1.0
    assert kfac.pi_correction(1e9 * np.eye(2), np.eye(2)) == kfac.PI_MAX
    assert kfac.pi_correction(np.eye(2), 1e9 * np.eye(2)) == kfac.PI_MIN
    a, b = kfac.factored_damping(4 * np.eye(2), np.eye(2), 0.09)
    assert np.isclose(a * b, 0.09) and np.isclose(a / b, 4.0)


def test_invert_escalates_tau_until_positive_definite():
    factors = (kfac.LayerFactors(A=np.diag([1.0, -1e-4]), G=np.eye(2)),)
    state = kfac.KfacState(tau=0.0, factors=factors)
    with pytest.raises(NotPositiveDefinite):
        kfac.invert_damped(state)
    fixed = kfac.invert_with_escalation(state, max_escalations=3)
    assert fixed.inverses_fresh
    assert np.isclose(fixed.tau, 1e-7)
    with pytest.raises(NotPositiveDefinite):
        kfac.invert_with_escalation(state, max_escalations=1)


def test_stale_inverse_detected():
    state = kfac.ema_update(kfac.KfacState(), (kfac.LayerFactors(A=np.eye(2), G=np.eye(1)),))
    with pytest.raises(StaleInverse):
        kfac.precondition(state, BackwardResult.from_blocks([np.ones((1, 2))]))
    with pytest.raises(StaleInverse):
        kfac.invert_damped(kfac.KfacState())


def test_zero_raw_gradient_ratio():
    zero = BackwardResult.from_blocks([np.zeros((1, 2))])
    assert kfac.grad_norm_ratio(zero, zero, 0.1) == kfac.NormRatio(0.0, True)
    raw = BackwardResult.from_blocks([np.array([[3.0, 4.0]])])
    pre = BackwardResult.from_blocks([np.array([[6.0, 8.0]])])
    ratio = kfac.grad_norm_ratio(pre, raw, 0.5)
    assert np.isclose(ratio.value, 1.0) and not ratio.zero_raw


def test_diagnostic_record_fields():
    state = kfac.invert_damped(kfac.identity_state([(2, 3)], tau=0.1))
    rec = kfac.diagnostic_record(state, 7, kfac.NormRatio(0.5, False))
    assert rec["step"] == 7 and rec["tau"] == 0.1
    assert rec["trace_A_0"] == 4.0 and rec["trace_G_0"] == 2.0
    assert rec["grad_norm_ratio"] == 0.5
