import math

import numpy as np
import pytest

from gnn_oracles import (entry_rel_error, kink_free_instances, naive_forward, random_instance,
                         tensor_rel_error)
from trncat.gnn import (
    FeatureMatrix, GnnTrainConfig, TrainingError, attention, forward, init_model, load_gnn,
    loss_and_grad, predict_gnn, save_gnn, train_gnn,
)
from trncat.ppr import NeighborTable


def test_init_deterministic_and_shaped():
    a = init_model(16, 64, 683, rng_seed=3)
    b = init_model(16, 64, 683, rng_seed=3)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert a.params["Wc"].shape == (64, 683)
    assert a.params["Wq"].shape == a.params["Wk"].shape == (64, 64)
    bound = math.sqrt(6 / (16 + 64))
    assert np.abs(a.params["W1"]).max() <= bound
    assert not a.params["b1"].any()


def test_zero_model_is_uniform():
    model, feats, table, batch, labels = random_instance(0)
    zero = init_model(4, 3, 3, zero=True)
    probs = forward(zero, feats, table, batch)
    np.testing.assert_allclose(probs, 1 / 3, atol=1e-15)
    alphas = attention(zero, feats, table, batch)
    assert all(np.all(a == 0.5) for a in alphas)
    loss, _ = loss_and_grad(zero, feats, table, batch, labels)
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    preds = predict_gnn(zero, feats, table, batch)
    assert all(p.max() == pytest.approx(1 / 3) for _, p in preds.values())


def test_singleton_neighborhood_is_self_prediction():
    model, feats, _, _, _ = random_instance(1)
    table = NeighborTable({i: [(i, 1.0)] for i in range(5)}, 0.85, 1e-4, 1)
    got = forward(model, feats, table, [2])
    p = model.params
    relu = lambda a: np.maximum(a, 0)
    h = relu(relu(feats.rows([2])[0] @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"])
    alpha = 1 / (1 + np.exp(-((h @ p["Wq"]) @ (h @ p["Wk"]))))
    z = relu(alpha * h)
    logits = z @ p["Wc"] + p["bc"]
    expect = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    np.testing.assert_allclose(got[0], expect, atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_naive(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(2, 11))
    model, feats, table, batch, _ = random_instance(seed, n_nodes=n, k=int(rng.integers(1, n + 1)))
    got = forward(model, feats, table, batch)
    expect = naive_forward(model.params, feats.values, table.neighbors, batch)
    np.testing.assert_allclose(got, expect, atol=1e-10, rtol=0)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(got >= 0)


def test_identity_aggregate_matches_naive():
    model, feats, table, batch, _ = random_instance(4)
    model.aggregate_activation = "identity"
    np.testing.assert_allclose(
        forward(model, feats, table, batch),
        naive_forward(model.params, feats.values, table.neighbors, batch, aggregate="identity"),
        atol=1e-10)


def test_attention_strictly_inside_unit_interval():
    model, feats, table, batch, _ = random_instance(5)
    for a in attention(model, feats, table, batch):
        assert np.all((a > 0) & (a < 1))


def test_neighbor_order_invariance():
    model, feats, table, batch, _ = random_instance(6)
    flipped = NeighborTable({i: list(reversed(r)) for i, r in table.neighbors.items()},
                            table.beta, table.epsilon, table.K)
    np.testing.assert_allclose(forward(model, feats, table, batch),
                               forward(model, feats, flipped, batch), atol=1e-14)


def test_batch_invariance():
    model, feats, table, batch, _ = random_instance(7, n_nodes=9)
    whole = predict_gnn(model, feats, table, batch)
    small = predict_gnn(model, feats, table, batch, batch_size=2)
    for n in batch:
        assert whole[n][0] == small[n][0]
        np.testing.assert_allclose(whole[n][1], small[n][1], atol=1e-14)


def test_missing_feature_named():
    model, feats, table, batch, _ = random_instance(8)
    partial = FeatureMatrix((0, 1, 2, 3), feats.values[:4])
    with pytest.raises(KeyError, match="4"):
        forward(model, partial, table, batch)


def test_empty_batch_rejected():
    model, feats, table, _, _ = random_instance(0)
    with pytest.raises(ValueError):
        loss_and_grad(model, feats, table, [], [])


def test_duplicated_batch_mean_semantics():
    model, feats, table, _, _ = random_instance(9)
    l_dup, g_dup = loss_and_grad(model, feats, table, [0, 0, 1], [2, 2, 1])
    l0, g0 = loss_and_grad(model, feats, table, [0], [2])
    l1, g1 = loss_and_grad(model, feats, table, [1], [1])
    assert l_dup == pytest.approx((2 * l0 + l1) / 3, abs=1e-12)
    for k in g_dup:
        np.testing.assert_allclose(g_dup[k], (2 * g0[k] + g1[k]) / 3, atol=1e-12)


def test_gradients_entrywise():
    # Step 1e-3 leaves an O(h^2) truncation floor, so near-zero entries get an
    # absolute allowance of 1e-7 on top of the 1e-4 relative tolerance.
    for _, analytic, numeric in kink_free_instances(20):
        for k in analytic:
            np.testing.assert_allclose(analytic[k], numeric[k], rtol=1e-4, atol=1e-7, err_msg=k)
            assert tensor_rel_error(analytic[k], numeric[k]) <= 1e-4


def test_gradients_strict_relative_small_step():
    for _, analytic, numeric in kink_free_instances(5, start=200, step=1e-5):
        for k in analytic:
            assert entry_rel_error(analytic[k], numeric[k]) <= 1e-4, k


def _planted(n=20, dim=6, seed=0):
    """Two classes, features separated along one axis, PPR lists within class."""
    rng = np.random.default_rng(seed)
    y = np.array([i % 2 for i in range(n)])
    X = rng.normal(scale=0.3, size=(n, dim))
    X[:, 0] += np.where(y == 1, 1.5, -1.5)
    nb = {}
    for i in range(n):
        same = [j for j in range(n) if y[j] == y[i] and j != i]
        picks = rng.choice(same, size=4, replace=False)
        nb[i] = [(i, 0.4)] + [(int(j), 0.1) for j in picks]
    return FeatureMatrix(tuple(range(n)), X), NeighborTable(nb, 0.85, 1e-4, 5), y


def test_train_separable_instance():
    feats, table, y = _planted()
    train = {0: 0, 2: 0, 1: 1, 3: 1}
    model = train_gnn(init_model(6, 8, 2, rng_seed=0), feats, table, train,
                      GnnTrainConfig(epochs=200, batch_size=64, learning_rate=1e-2, rng_seed=0))
    preds = predict_gnn(model, feats, table, list(train))
    assert all(preds[n][0] == lab for n, lab in train.items())
    everyone = predict_gnn(model, feats, table, range(20))
    assert np.mean([everyone[n][0] == y[n] for n in range(20)]) == 1.0


def test_zero_learning_rate_keeps_parameters():
    feats, table, _ = _planted()
    start = init_model(6, 8, 2, rng_seed=1)
    out = train_gnn(start, feats, table, {0: 0, 1: 1}, GnnTrainConfig(epochs=5, learning_rate=0.0))
    for k in start.params:
        assert out.params[k].tobytes() == start.params[k].tobytes()


def test_training_deterministic():
    feats, table, _ = _planted()
    cfg = GnnTrainConfig(epochs=20, batch_size=2, rng_seed=4)
    a = train_gnn(init_model(6, 8, 2, rng_seed=2), feats, table, {0: 0, 1: 1, 2: 0}, cfg)
    b = train_gnn(init_model(6, 8, 2, rng_seed=2), feats, table, {0: 0, 1: 1, 2: 0}, cfg)
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_non_finite_loss_aborts():
    feats, table, _ = _planted()
    model = init_model(6, 8, 2, rng_seed=0)
    model.params["Wc"][:] = np.inf
    with pytest.raises(TrainingError, match="learning rate"):
        train_gnn(model, feats, table, {0: 0}, GnnTrainConfig(epochs=1))


def test_renormalized_scores():
    model, feats, table, batch, _ = random_instance(3)
    model.renormalize_scores = True
    rescaled = NeighborTable({i: [(j, 7 * s) for j, s in r] for i, r in table.neighbors.items()},
                             table.beta, table.epsilon, table.K)
    np.testing.assert_allclose(forward(model, feats, table, batch),
                               forward(model, feats, rescaled, batch), atol=1e-12)


def test_checkpoint_round_trip_bitwise(tmp_path):
    model, *_ = random_instance(11)
    save_gnn(model, tmp_path / "gnn.npz")
    again = load_gnn(tmp_path / "gnn.npz")
    assert again.dims == model.dims
    for k in model.params:
        assert again.params[k].tobytes() == model.params[k].tobytes()
