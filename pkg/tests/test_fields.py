import numpy as np
import pytest

from robust_surrogate.errors import NotPositiveDefinite
from robust_surrogate.fields import (
    GridField,
    GridSpec,
    KernelParams,
    build_covariance,
    cholesky_with_jitter,
    exp_field,
    factor_for,
    sample_log_field,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(2)
    np.testing.assert_allclose(GridSpec(5).coords(), [0, 0.25, 0.5, 0.75, 1.0])


@pytest.mark.parametrize("sigma2", [1.0, 2.5])
def test_covariance_structure(sigma2):
    K = build_covariance(GridSpec(6), KernelParams(sigma2=sigma2, length=0.5))
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == sigma2)
    assert np.all(K > 0) and np.all(K <= sigma2)


def test_covariance_known_entries():
    K = build_covariance(GridSpec(3), KernelParams(sigma2=1.0, length=0.5))
    # points 0 and 1 sit 0.5 = l apart
    assert K[0, 1] == pytest.approx(np.exp(-0.5), rel=1e-14)
    # opposite corners (0,0)-(1,1), distance sqrt(2): exp(-2 / (2 * 0.25))
    assert K[0, 8] == pytest.approx(np.exp(-4.0), rel=1e-14)
    assert K[0, 8] == pytest.approx(0.01832, abs=5e-6)


def test_cholesky_examples():
    f = cholesky_with_jitter(np.eye(4), 0.0)
    np.testing.assert_array_equal(f.lower, np.eye(4))
    f = cholesky_with_jitter(np.array([[4.0, 2.0], [2.0, 3.0]]), 0.0)
    np.testing.assert_allclose(f.lower, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], rtol=1e-15)


def test_cholesky_rank_deficient_recovers():
    K = np.ones((2, 2))
    f = cholesky_with_jitter(K, 1e-6)
    assert np.all(np.diag(f.lower) > 0)
    recon = f.lower @ f.lower.T - (K + f.jitter_used * np.eye(2))
    assert np.linalg.norm(recon) / np.linalg.norm(K) <= 1e-8


def test_cholesky_escalates_from_zero_jitter():
    f = cholesky_with_jitter(np.ones((3, 3)), 0.0)
    assert f.jitter_used > 0


def test_cholesky_gives_up():
    with pytest.raises(NotPositiveDefinite):
        cholesky_with_jitter(-np.eye(3), 1e-12)


@pytest.mark.parametrize("nx", [4, 16, 24])
def test_factor_reconstruction(nx):
    grid, kp = GridSpec(nx), KernelParams()
    K = build_covariance(grid, kp)
    f = factor_for(grid, kp)
    L = f.lower
    assert np.allclose(L, np.tril(L))
    assert np.all(np.diag(L) > 0)
    err = np.linalg.norm(L @ L.T - (K + f.jitter_used * np.eye(grid.n))) / np.linalg.norm(K)
    assert err <= 1e-8


def test_sample_zero_factor_and_determinism():
    zero = cholesky_with_jitter(np.eye(9), 0.0)
    zero = type(zero)(np.zeros((9, 9)), None)
    assert np.all(sample_log_field(zero, 1).values == 0)
    f = factor_for(GridSpec(5), KernelParams())
    a = sample_log_field(f, np.random.default_rng(3)).values
    b = sample_log_field(f, np.random.default_rng(3)).values
    assert np.array_equal(a, b)
    assert sample_log_field(f, 3).kind == "log_modulus"


def test_marginal_variance_monte_carlo():
    f = factor_for(GridSpec(4), KernelParams(sigma2=1.0))
    z = np.random.default_rng(0).standard_normal((10_000, 16))
    samples = z @ f.lower.T
    var = samples[:, 5].var(ddof=1)
    assert 0.94 <= var <= 1.06


def test_empirical_covariance_converges():
    grid, kp = GridSpec(4), KernelParams(sigma2=1.0)
    K = build_covariance(grid, kp)
    f = factor_for(grid, kp)
    rng = np.random.default_rng(1)
    M = 20_000
    samples = np.stack([sample_log_field(f, rng).values.ravel() for _ in range(M)])
    emp = samples.T @ samples / M  # zero mean is known
    assert np.max(np.abs(emp - K)) <= 5 * kp.sigma2 / np.sqrt(M)


def test_exp_field_examples():
    z = exp_field(GridField(np.zeros((3, 3)), "log_modulus"))
    assert z.kind == "modulus" and np.all(z.values == 1.0)
    v = np.zeros((3, 3))
    v[0, 0] = 1.0
    v[1, 1] = -np.log(2.0)
    e = exp_field(GridField(v, "log_modulus")).values
    assert e[0, 0] == pytest.approx(2.718281828459045)
    assert e[1, 1] == pytest.approx(0.5, rel=1e-15)
    with pytest.raises(ValueError):
        exp_field(GridField(np.ones((3, 3)), "modulus"))


def test_exp_log_round_trip(rng):
    E = np.exp(rng.normal(size=(8, 8)))
    back = exp_field(GridField(np.log(E), "log_modulus")).values
    np.testing.assert_allclose(back, E, rtol=1e-12)


def test_field_kind_invariants():
    with pytest.raises(ValueError):
        GridField(-np.ones((3, 3)), "modulus")
    with pytest.raises(ValueError):
        GridField(np.ones((3, 3)), "solution")
    with pytest.raises(ValueError):
        GridField(np.ones((3, 3)), "pressure")
