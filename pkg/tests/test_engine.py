import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpfedsim.backprop import forward_backward
from dpfedsim.data import ClientShard, Dataset, PartitionScheme, generate_synthetic, partition
from dpfedsim.dp import PrivacyConfig
from dpfedsim.engine import (RoundConfig, aggregate, client_update, minibatches, run_training,
                             sample_clients)
from dpfedsim.errors import ConfigurationError, DivergedError, StructureError
from dpfedsim.models import build_mlp, build_cnn, init_params
from dpfedsim.params import ParamVector

from conftest import sequential_sgd


def vec(*values):
    return ParamVector.from_segments([("w", np.array(values, dtype=float))])


@pytest.fixture(scope="module")
def data():
    return generate_synthetic(3, 60, input_dim=4, difficulty=3.0, seed=1)


def test_sample_count_ceil():
    assert len(sample_clients(300, 0.1, None, np.random.default_rng(0))) == 30


def test_sample_all_clients():
    assert sample_clients(3, 1.0, None, np.random.default_rng(0)) == [0, 1, 2]


def test_sample_override_two_of_three():
    ids = sample_clients(3, 0.33, 2, np.random.default_rng(0))
    assert len(ids) == 2 and len(set(ids)) == 2


def test_sample_override_too_large():
    with pytest.raises(ConfigurationError):
        sample_clients(3, 0.33, 4, np.random.default_rng(0))


def test_sample_third_of_thirty_is_ten():
    assert len(sample_clients(30, 1 / 3, None, np.random.default_rng(0))) == 10


@given(K=st.integers(1, 200), C=st.floats(0.001, 1.0), seed=st.integers(0, 1000))
def test_sample_distinct(K, C, seed):
    ids = sample_clients(K, C, None, np.random.default_rng(seed))
    assert len(ids) == len(set(ids)) == max(int(np.ceil(C * K - 1e-9)), 1)
    assert all(0 <= i < K for i in ids)


def test_minibatch_count():
    batches = minibatches(47, 20, np.random.default_rng(0))
    assert [len(b) for b in batches] == [20, 20, 7]
    assert sorted(np.concatenate(batches)) == list(range(47))


def test_one_step_when_batch_covers_shard(data):
    train, _ = data
    model = build_mlp(4, [], 3)
    w = init_params(model, np.random.default_rng(0))
    shard = ClientShard(0, np.arange(30))
    cfg = RoundConfig(K=1, C=1.0, B=100, eta=0.1)
    out, _ = client_update(model, train, shard, w, cfg, np.random.default_rng(0))
    _, g = forward_backward(model, w, train.subset(shard.indices))
    np.testing.assert_allclose(out.flat, w.flat - 0.1 * g.flat, rtol=1e-13, atol=1e-15)


def test_single_example_softmax_regression_step():
    # hand-computed: zero weights, x=(1,2), y=0 -> p=(1/3,1/3,1/3), dL/dz=(-2/3,1/3,1/3)
    model = build_mlp(2, [], 3)
    train = Dataset(np.array([[1.0, 2.0]]), np.array([0]), 3)
    w = ParamVector.zeros_like(init_params(model, np.random.default_rng(0)))
    out, loss = client_update(model, train, ClientShard(0, [0]), w, RoundConfig(K=1, C=1.0, B=1, eta=0.5),
                              np.random.default_rng(0))
    dz = np.array([-2 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(out["layer0.weight"], -0.5 * np.outer([1.0, 2.0], dz), rtol=1e-15)
    np.testing.assert_allclose(out["layer0.bias"], -0.5 * dz, rtol=1e-15)
    assert loss == pytest.approx(np.log(3))


def test_zero_learning_rate_is_identity(data):
    train, _ = data
    model = build_mlp(4, [5], 3)
    w = init_params(model, np.random.default_rng(0))
    out, _ = client_update(model, train, ClientShard(0, np.arange(50)), w, RoundConfig(K=1, C=1.0, eta=0.0),
                           np.random.default_rng(0))
    assert out == w


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_error_carries_ids():
    model = build_mlp(2, [], 3)
    train = Dataset(np.array([[1e308, -1e308]]), np.array([1]), 3)
    w = init_params(model, np.random.default_rng(0))
    with pytest.raises(DivergedError) as info:
        client_update(model, train, ClientShard(4, [0]), w, RoundConfig(K=5, C=1.0), np.random.default_rng(0),
                      round_index=7)
    assert (info.value.round_index, info.value.client_id) == (7, 4)


def test_aggregate_hand_computed():
    out = aggregate([(1, vec(0.0, 0.0)), (3, vec(4.0, 4.0))])
    assert out == vec(3.0, 3.0)


def test_aggregate_single_update_unchanged():
    w = vec(0.1, 0.7, -3.3)
    assert aggregate([(5, w)]) == w


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8), st.integers(1, 9), st.integers(1, 50))
def test_aggregate_identical_vectors_exact(values, copies, n):
    v = vec(*values)
    assert aggregate([(n, v.copy()) for _ in range(copies)]) == v


@given(st.lists(st.tuples(st.integers(1, 100), st.lists(st.floats(-10, 10), min_size=3, max_size=3)),
                min_size=1, max_size=6), st.randoms())
def test_aggregate_permutation_invariant(updates, rnd):
    ups = [(n, vec(*v)) for n, v in updates]
    shuffled = ups[:]
    rnd.shuffle(shuffled)
    assert aggregate(ups) == aggregate(shuffled)


def test_aggregate_weights_sum_to_one():
    ns = [3, 17, 5, 11]
    ups = [(n, vec(1.0)) for n in ns]
    assert sum(n / sum(ns) for n in ns) == pytest.approx(1.0, abs=1e-12)
    assert aggregate(ups) == vec(1.0)


def test_aggregate_structure_mismatch():
    with pytest.raises(StructureError):
        aggregate([(1, vec(1.0)), (1, ParamVector.from_segments([("v", np.zeros(1))]))])


def test_single_client_run_equals_sequential_sgd(data):
    train, test = data
    model = build_mlp(4, [5], 3)
    cfg = RoundConfig(K=1, C=1.0, E=1, B=16, eta=0.05, T=5, seed=3)
    shards = partition(train, PartitionScheme("iid", 1, 0))
    _, fed = run_training(model, train, test, shards, cfg)
    # the IID shard of a single client is the whole set in sorted index order
    assert fed == sequential_sgd(model, train, cfg, 5)


def test_zero_rounds(data):
    train, test = data
    model = build_mlp(4, [], 3)
    init = init_params(model, np.random.default_rng(9))
    records, params = run_training(model, train, test, partition(train, PartitionScheme("iid", 2, 0)),
                                   RoundConfig(K=2, C=1.0, T=0), init=init)
    assert records == [] and params == init


def test_runs_are_deterministic(data):
    train, test = data
    model = build_mlp(4, [5], 3)
    shards = partition(train, PartitionScheme("noniid2", 4, 0))
    cfg = RoundConfig(K=4, C=0.5, T=4, seed=2)
    dp = PrivacyConfig(0.5, 1.0)
    a, pa = run_training(model, train, test, shards, cfg, dp)
    b, pb = run_training(model, train, test, shards, cfg, dp)
    assert pa == pb
    assert [(r.round, r.accuracy, r.loss, r.epsilon) for r in a] == [(r.round, r.accuracy, r.loss, r.epsilon) for r in b]


def test_full_shard_steps_average_to_full_batch_step():
    # balanced IID shards, every client one full-shard step: aggregate == one global full-batch step
    train, test = generate_synthetic(3, 40, input_dim=4, seed=5)
    model = build_mlp(4, [], 3)
    K = 4
    shards = partition(train, PartitionScheme("iid", K, 0))
    assert len({s.n_k for s in shards}) == 1
    w0 = init_params(model, np.random.default_rng([0, 1]))
    cfg = RoundConfig(K=K, C=1.0, E=1, B=10_000, eta=0.1, T=1, seed=0)
    _, fed = run_training(model, train, test, shards, cfg, init=w0)
    _, g = forward_backward(model, w0, (train.features, train.labels))
    np.testing.assert_allclose(fed.flat, w0.flat - 0.1 * g.flat, rtol=1e-12, atol=1e-14)


def test_records_carry_epsilon_and_thinning(data):
    train, test = data
    model = build_mlp(4, [], 3)
    shards = partition(train, PartitionScheme("iid", 6, 0))
    cfg = RoundConfig(K=6, C=0.5, T=7, eval_every=3)
    records, params = run_training(model, train, test, shards, cfg, PrivacyConfig(1.0, 1.0))
    assert [r.round for r in records] == [3, 6, 7]
    eps = [r.epsilon for r in records]
    assert all(e is not None for e in eps) and eps == sorted(eps)
    assert params.is_finite()


def test_example_level_dp_runs(data):
    train, test = data
    model = build_mlp(4, [], 3)
    shards = partition(train, PartitionScheme("iid", 3, 0))
    cfg = RoundConfig(K=3, C=1.0, T=2, B=10)
    records, params = run_training(model, train, test, shards, cfg, PrivacyConfig(1.0, 0.8, granularity="example"))
    assert records[-1].epsilon > 0 and params.is_finite()


def test_example_level_zero_noise_huge_clip_matches_plain(data):
    train, test = data
    model = build_mlp(4, [], 3)
    shards = partition(train, PartitionScheme("iid", 2, 0))
    cfg = RoundConfig(K=2, C=1.0, T=2, B=8)
    _, plain = run_training(model, train, test, shards, cfg)
    _, priv = run_training(model, train, test, shards, cfg, PrivacyConfig(1e9, 0.0, granularity="example"))
    np.testing.assert_allclose(priv.flat, plain.flat, rtol=1e-10, atol=1e-12)


def test_cnn_round_runs():
    train, test = generate_synthetic(3, 6, input_side=8, seed=0)
    model = build_cnn(8, 3)
    shards = partition(train, PartitionScheme("iid", 2, 0))
    records, params = run_training(model, train, test, shards, RoundConfig(K=2, C=1.0, T=1, B=4))
    assert len(records) == 1 and params.is_finite()


def test_partition_size_mismatch(data):
    train, test = data
    with pytest.raises(ConfigurationError):
        run_training(build_mlp(4, [], 3), train, test, partition(train, PartitionScheme("iid", 2, 0)),
                     RoundConfig(K=3))


@pytest.mark.parametrize("kwargs", [dict(K=0), dict(K=3, C=0), dict(K=3, C=1.5), dict(K=3, E=0), dict(K=3, B=0),
                                    dict(K=3, eta=-1), dict(K=3, clients_per_round=4)])
def test_round_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        RoundConfig(**kwargs)
