import numpy as np
import pytest

from ocl.core.errors import NotPositiveDefinite, ShapeMismatch
from ocl.core.linalg import kron_dense, kron_precondition, spd_inverse, sym_eig


def _spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def test_spd_inverse_matches_numpy():
    rng = np.random.default_rng(1)
    for n in (1, 3, 8):
        m = _spd(rng, n)
        inv = spd_inverse(m)
        assert np.allclose(inv, np.linalg.inv(m), atol=1e-12)
        assert np.array_equal(inv, inv.T)


def test_spd_inverse_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        spd_inverse(np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefinite):
        spd_inverse(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ShapeMismatch):
        spd_inverse(np.ones((2, 3)))


def test_sym_eig_descending_and_reconstructs():
    rng = np.random.default_rng(2)
    m = _spd(rng, 6)
    vals, vecs = sym_eig(m)
    assert np.all(np.diff(vals) <= 0)
    assert np.allclose(vecs @ np.diag(vals) @ vecs.T, m, atol=1e-10)
    assert np.allclose(vecs.T @ vecs, np.eye(6), atol=1e-12)


def test_spd_inverse_residual_on_32x32():
    rng = np.random.default_rng(4)
    m = _spd(rng, 32)
    residual = m @ spd_inverse(m) - np.eye(32)
    assert np.linalg.norm(residual, ord=np.inf) <= 1e-9


def test_kron_precondition_matches_dense_solve():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n_out, n_in = (int(k) for k in rng.integers(1, 9, size=2))
        a, g = _spd(rng, n_in), _spd(rng, n_out)
        v = rng.standard_normal((n_out, n_in))
        fast = kron_precondition(spd_inverse(a), spd_inverse(g), v)
        dense = np.linalg.solve(kron_dense(a, g), v.reshape(-1, order="F"))
        worst = max(worst, float(np.max(np.abs(fast.reshape(-1, order="F") - dense))))
    assert worst <= 1e-10


def test_kron_precondition_shape_checks():
    with pytest.raises(ShapeMismatch):
        kron_precondition(np.eye(3), np.eye(2), np.ones((2, 4)))
    with pytest.raises(ShapeMismatch):
        kron_precondition(np.eye(4), np.eye(3), np.ones((2, 4)))
