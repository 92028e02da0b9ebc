import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpfedsim.dp import PrivacyConfig, clip, dp_sgd_batch_grad, noise_aggregate
from dpfedsim.engine import aggregate
from dpfedsim.errors import ConfigurationError
from dpfedsim.params import ParamVector


def vec(*values):
    return ParamVector.from_segments([("w", np.array(values, dtype=float))])


def test_clip_hand_computed():
    out = clip(vec(3.0, 4.0), 1.0)
    np.testing.assert_allclose(out.flat, [0.6, 0.8], rtol=1e-15)


def test_clip_below_threshold_unchanged():
    g = vec(0.1, -0.2)
    assert clip(g, 1.0) == g


def test_clip_zero_vector():
    assert clip(vec(0.0, 0.0), 1.0) == vec(0.0, 0.0)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), log_scale=st.floats(-3, 3), S=st.floats(0.01, 10))
def test_clip_norm_bounded(seed, log_scale, S):
    g = ParamVector.from_segments([("w", np.random.default_rng(seed).standard_normal(17) * 10 ** log_scale)])
    assert clip(g, S).norm() <= S * (1 + 1e-12)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(1e-3, 1e3), S=st.floats(0.1, 10))
def test_clip_scale_covariance(seed, alpha, S):
    g = ParamVector.from_segments([("w", np.random.default_rng(seed).standard_normal(9))])
    expected = min(alpha * g.norm(), S)
    assert clip(g * alpha, S).norm() == pytest.approx(expected, rel=1e-12)


def test_dp_sgd_zero_noise_small_grads_is_mean():
    grads = [vec(0.1, 0.2), vec(-0.3, 0.1), vec(0.0, 0.05)]
    out = dp_sgd_batch_grad(grads, 1.0, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(out.flat, np.mean([g.flat for g in grads], axis=0), rtol=1e-15)


def test_dp_sgd_noise_variance_monte_carlo():
    rng = np.random.default_rng(2024)
    zero = vec(*np.zeros(10))
    draws = np.array([dp_sgd_batch_grad([zero], 1.0, 1.0, rng).flat for _ in range(10_000)])
    var = draws.var(axis=0, ddof=1)  # 10 coordinates x 10^4 draws = 10^5 samples
    assert abs(np.mean(var) - 1.0) < 0.02
    assert abs(draws.std() - 1.0) < 0.02


def test_noise_std_matches_z_times_s():
    rng = np.random.default_rng(7)
    zero = ParamVector.from_segments([("w", np.zeros(100_000))])
    out = dp_sgd_batch_grad([zero], 0.5, 1.7, rng)
    assert abs(out.flat.std() / (0.5 * 1.7) - 1) < 0.02


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), S=st.floats(0.1, 5))
def test_clipped_sum_bound(seed, m, S):
    rng = np.random.default_rng(seed)
    grads = [ParamVector.from_segments([("w", rng.standard_normal(6) * 10)]) for _ in range(m)]
    noiseless = dp_sgd_batch_grad(grads, S, 0.0, rng)
    assert noiseless.norm() * m <= m * S * (1 + 1e-12)


def test_noise_aggregate_zero_noise_is_unweighted_mean():
    w_prev = vec(1.0, 1.0)
    ups = [(10, vec(1.1, 0.9)), (1, vec(1.3, 1.2))]
    out = noise_aggregate(ups, w_prev, 1.0, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(out.flat, [1.2, 1.05], rtol=1e-14)


def test_noise_aggregate_single_client_no_change():
    w = vec(0.5, -0.5)
    assert noise_aggregate([(3, w.copy())], w, 1.0, 0.0, np.random.default_rng(0)) == w


def test_noise_aggregate_clipped_deltas():
    w_prev = vec(0.0, 0.0)
    ups = [(1, vec(3.0, 4.0)), (1, vec(0.0, -10.0))]
    d1, d2 = np.array([0.6, 0.8]), np.array([0.0, -1.0])
    out = noise_aggregate(ups, w_prev, 1.0, 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(out.flat, (d1 + d2) / 2, rtol=1e-15)


def test_zero_noise_reduces_to_non_private_bitwise():
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
    grads = [vec(0.1, 0.2), vec(0.3, -0.1)]
    a = dp_sgd_batch_grad(grads, 10.0, 0.0, rng_a)
    b = dp_sgd_batch_grad(grads, 10.0, 0.0, rng_b)
    assert a == b
    w_prev = vec(0.0, 0.0)
    ups = [(5, vec(0.1, 0.2)), (5, vec(0.3, 0.2))]
    assert noise_aggregate(ups, w_prev, 10.0, 0.0, rng_a) == aggregate(ups)


def test_noise_aggregate_order_invariant():
    w_prev = vec(0.0, 0.0)
    ups = [(1, vec(0.3, 0.1)), (2, vec(-0.2, 0.4)), (3, vec(0.05, 0.05))]
    a = noise_aggregate(ups, w_prev, 0.2, 1.0, np.random.default_rng(9))
    b = noise_aggregate(ups[::-1], w_prev, 0.2, 1.0, np.random.default_rng(9))
    assert a == b


@pytest.mark.parametrize("kwargs", [dict(clip_norm=0), dict(noise_multiplier=-1), dict(delta=1), dict(delta=0)])
def test_privacy_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        PrivacyConfig(**kwargs)


def test_sampling_fraction():
    assert PrivacyConfig(granularity="example").sampling_fraction(batch_size=20, n_k=1000) == 0.02
    assert PrivacyConfig(granularity="client").sampling_fraction(clients_per_round=10, K=30) == pytest.approx(1 / 3)
