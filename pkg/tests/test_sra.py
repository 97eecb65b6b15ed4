import numpy as np
import pytest
from scipy.special import expit

from timemae_pfm.core import Tensor, grad_check, no_grad
from timemae_pfm.sra import (
    FeatureStats,
    SRAConfig,
    SRAParams,
    attention_profile,
    attention_weights,
    bce_loss,
    classify,
    feature_names,
    fit_sra,
    fuse,
    predict_proba,
    sra_attention,
)


def test_fuse_order_and_roundtrip():
    f = fuse(np.zeros(64), np.zeros(3))
    assert f.x.shape == (67,) and not f.x.any()
    assert f.names[64] == "age" and f.names[-1] == "bmi"
    rng = np.random.default_rng(0)
    t, d = rng.normal(size=(5, 64)), rng.normal(size=(5, 3))
    f = fuse(t, d)
    assert np.array_equal(f.temporal(), t) and np.array_equal(f.demographic(), d)
    with pytest.raises(ValueError):
        fuse(np.zeros(64), np.zeros(2))
    stats = FeatureStats.fit(t)
    assert np.allclose(fuse(t, d, stats).temporal().mean(axis=0), 0, atol=1e-12)


def test_attention_bound_and_gating_random_draws():
    rng = np.random.default_rng(1)
    p = 7
    count = 0
    for i in range(100):
        params = SRAParams.initialize(p, SRAConfig(d_k=4, init_std=float(rng.uniform(0.1, 30))), seed=i)
        for v in params.arrays.values():
            v.data[...] = rng.normal(0, rng.uniform(0.1, 5), size=v.shape)
        X = rng.normal(0, rng.uniform(0.1, 50), size=(100, p))
        X[:, 2] = 0.0
        with no_grad():
            a, o = sra_attention(Tensor(X), params)
        assert (a.data >= 0).all() and (a.data <= 1).all()
        assert np.array_equal(o.data, a.data * X)
        assert not o.data[:, 2].any()
        assert (np.abs(o.data) <= np.abs(X)).all()
        count += X.shape[0]
    assert count == 10_000


def test_zero_preactivations_give_quarter():
    params = SRAParams.initialize(5, SRAConfig(d_k=6))
    for k, v in params.arrays.items():
        if k.startswith(("key.", "query.")):
            v.data[...] = 0.0
    a = attention_weights(np.random.default_rng(0).normal(size=(3, 5)), params)
    assert np.array_equal(a, np.full((3, 5), 0.25))


def test_classify_toys():
    params = SRAParams.initialize(3)
    assert np.array_equal(classify(np.array([1.0, -2.0, 3.0]), params), 0.5)
    params["head.w"].data[:, 0] = [0.5, -1.0, 2.0]
    params["head.b"].data[0] = 0.25
    o = np.array([1.0, 2.0, -0.5])
    assert classify(o, params) == pytest.approx(expit(0.5 - 2.0 - 1.0 + 0.25), abs=1e-15)
    probs = []
    for b in (0.0, 1.0, 5.0, 20.0):
        params["head.b"].data[0] = b
        probs.append(float(classify(o, params)))
    assert probs == sorted(probs) and probs[-1] > 0.999


def test_gradcheck_sra_and_head():
    rng = np.random.default_rng(3)
    params = SRAParams.initialize(6, SRAConfig(d_k=3), seed=3)
    params["head.w"].data[...] = rng.normal(size=(6, 1))
    X = rng.normal(size=(10, 6))
    y = (rng.random(10) < 0.5).astype(float)
    res = grad_check(lambda: bce_loss(X, y, params), params.trainable(), probes=20)
    assert res.max_rel_error <= 1e-5, res


def test_identity_mode_is_logistic_regression():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 4))
    y = (rng.random(300) < expit(X @ np.array([2.0, -1.0, 0.0, 0.5]))).astype(float)
    cfg = SRAConfig(use_sra=False, epochs=300, lr=5e-2, weight_decay=0.0, batch_size=300, patience=1000)
    res = fit_sra(X, y, None, None, cfg)
    assert set(res.params.trainable()) == {"head.w", "head.b"}
    w, b = res.params["head.w"].data[:, 0], res.params["head.b"].data[0]
    assert np.array_equal(predict_proba(X, res.params), expit(X @ res.params["head.w"].data + b)[:, 0])
    # stationarity of the logistic log-likelihood at the fitted point
    grad = X.T @ (expit(X @ w + b) - y) / len(y)
    assert np.abs(grad).max() < 1e-3


def test_near_uniform_at_init():
    p = 67
    params = SRAParams.initialize(p, SRAConfig(), seed=0)
    X = np.random.default_rng(0).normal(size=(500, p))
    prof = attention_profile(X, params, feature_names(64))
    means = np.array(list(prof["mean"].values()))
    assert means.max() <= 3 * np.median(means)
    assert prof["matrix"].min() >= 0 and prof["matrix"].max() <= 1
    assert "temporal (sum)" in prof["grouped"]


def test_single_class_rejected_and_determinism():
    X = np.random.default_rng(5).normal(size=(20, 3))
    with pytest.raises(ValueError, match="single class"):
        fit_sra(X, np.ones(20), None, None)
    y = (X[:, 0] > 0).astype(float)
    cfg = SRAConfig(epochs=5, batch_size=8)
    a = fit_sra(X, y, X, y, cfg)
    b = fit_sra(X, y, X, y, cfg)
    assert a.history == b.history
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params.arrays)


def test_learns_planted_feature():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(400, 5))
    y = (rng.random(400) < expit(3 * X[:, 4])).astype(float)
    res = fit_sra(X[:300], y[:300], X[300:], y[300:], SRAConfig(epochs=60, lr=1e-2))
    from timemae_pfm.metrics import auroc
    assert auroc(predict_proba(X[300:], res.params), y[300:]) > 0.85
