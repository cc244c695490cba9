import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netcut import autodiff as ad
from netcut.aggregation import (HeadWeights, aggregate, aggregate_log, aggregate_prob,
                                class_loss, one_hot, time_reg, total_loss, weights)
from netcut.errors import ConfigError, DimensionError, LabelError

HEADS = [np.log([[0.5, 0.5]]), np.log([[0.9, 0.1]])]

logits_vec = arrays(np.float64, st.integers(1, 6), elements=st.floats(-20, 20))


def test_weights_examples():
    np.testing.assert_allclose(weights(np.zeros(4)), [0.25] * 4, rtol=1e-15)
    w = weights(np.array([10.0, 0, 0, 0, 0]))
    assert abs(w[0] - 0.99982) < 5e-6
    np.testing.assert_allclose(w[0], np.exp(10) / (np.exp(10) + 4), rtol=1e-14)


@settings(max_examples=100, deadline=None)
@given(logits_vec, st.floats(-100, 100))
def test_weights_on_simplex_and_shift_invariant(u, c):
    w = weights(u)
    assert np.all(w > 0) and abs(w.sum() - 1) < 1e-12
    np.testing.assert_allclose(weights(u + c), w, atol=1e-12)


def test_weights_reject_bad_shapes():
    with pytest.raises(DimensionError):
        weights(np.zeros(0))
    with pytest.raises(DimensionError):
        weights(np.zeros((2, 2)))
    assert HeadWeights(np.zeros(3)).n == 3


def test_aggregate_log_jensen_gap_example():
    out = aggregate_log(np.array([0.5, 0.5]), HEADS).values
    o = np.exp(out[0])
    np.testing.assert_allclose(o, [0.6708, 0.2236], atol=5e-5)
    np.testing.assert_allclose(o, [np.sqrt(0.45), np.sqrt(0.05)], rtol=1e-14)
    assert abs(o.sum() - 0.8944) < 5e-5 and o.sum() < 1


def test_aggregate_prob_example():
    out = aggregate_prob(np.array([0.5, 0.5]), HEADS).values
    np.testing.assert_allclose(np.exp(out[0]), [0.7, 0.3], rtol=1e-14)
    assert abs(np.exp(out[0]).sum() - 1) < 1e-14


@pytest.mark.parametrize("fn", [aggregate_log, aggregate_prob])
def test_one_hot_weights_select_a_head(fn):
    rng = np.random.default_rng(0)
    heads = [ad.log_softmax(rng.standard_normal((3, 4))) for _ in range(3)]
    out = fn(np.array([0.0, 1.0, 0.0]), heads).values
    np.testing.assert_allclose(out, heads[1], atol=1e-15)


def test_identical_heads_pass_through():
    lp = ad.log_softmax(np.random.default_rng(1).standard_normal((2, 3)))
    w = weights(np.array([0.3, -1.0, 2.0]))
    np.testing.assert_allclose(aggregate_log(w, [lp] * 3).values, lp, rtol=1e-14)


def test_naive_mode_flags_overflow():
    z = [np.array([[1e4, 0.0]]), np.array([[0.0, 1e4]])]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = aggregate_prob(np.array([0.5, 0.5]), z, naive=True).values
    assert not np.all(np.isfinite(out))


def test_naive_mode_agrees_with_stable_mode_on_small_logits():
    rng = np.random.default_rng(2)
    zs = [rng.standard_normal((4, 3)) for _ in range(3)]
    w = weights(rng.standard_normal(3))
    naive = aggregate("prob-naive", w, [], zs).values
    stable = aggregate("prob", w, [ad.log_softmax(z) for z in zs]).values
    np.testing.assert_allclose(naive, stable, rtol=1e-12)


def test_aggregate_errors():
    with pytest.raises(DimensionError):
        aggregate_log(np.array([0.5, 0.5]), HEADS[:1])
    with pytest.raises(DimensionError):
        aggregate_log(np.array([0.5, 0.5]), [HEADS[0], np.zeros((2, 2))])
    with pytest.raises(ConfigError):
        aggregate("mean", np.ones(1), HEADS[:1])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_jensen_bound_and_weighted_ce_identity(n, c, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n) * 0.5)
    heads = [ad.log_softmax(rng.standard_normal((3, c)) * 3) for _ in range(n)]
    log_o = aggregate_log(w, heads).values
    assert np.all(np.exp(log_o).sum(axis=1) <= 1 + 1e-12)
    y = one_hot(rng.integers(0, c, 3), c)
    ce = float(class_loss(y, log_o))
    weighted = sum(w[k] * float(class_loss(y, heads[k])) for k in range(n))
    assert abs(ce - weighted) <= 1e-10


def test_class_loss_examples():
    certain = np.array([[0.0, -np.inf, -np.inf]])
    assert float(class_loss(one_hot(np.array([0]), 3), certain)) == 0.0
    uniform = np.full((4, 5), -np.log(5))
    assert abs(float(class_loss(one_hot(np.arange(4), 5), uniform)) - np.log(5)) < 1e-14
    log_o = aggregate_log(np.array([0.5, 0.5]), HEADS)
    loss = float(class_loss(one_hot(np.array([0]), 2), log_o))
    assert abs(loss - 0.3993) < 5e-5
    np.testing.assert_allclose(loss, -np.log(np.sqrt(0.45)), rtol=1e-14)


def test_class_loss_rejects_bad_targets():
    with pytest.raises(LabelError):
        class_loss(np.array([[0.5, 0.5]]), np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        class_loss(np.array([[1.0, 0.0]]), np.zeros((1, 3)))


def test_time_reg_examples():
    assert float(time_reg(np.full(4, 0.25), [1, 2, 3, 4])) == 2.5
    assert float(time_reg(np.eye(4)[2], [1, 2, 3, 4])) == 3.0
    assert float(time_reg(np.full(4, 0.25), [0, 1, 1, 4])) == 1.5
    with pytest.raises(DimensionError):
        time_reg(np.ones(3) / 3, [1, 2])


def test_total_loss_examples():
    assert float(total_loss(0.5, 2.5, 0.0)) == 0.5
    assert abs(float(total_loss(0.5, 2.5, 0.01)) - 0.525) < 1e-15
    with pytest.raises(ConfigError):
        total_loss(0.5, 2.5, -1e-3)


def test_regularizer_gradient_pulls_toward_cheap_heads():
    rng = np.random.default_rng(5)
    heads = [ad.log_softmax(rng.standard_normal((8, 3))) for _ in range(4)]
    y = one_hot(rng.integers(0, 3, 8), 3)
    costs = np.arange(1.0, 5.0)
    u0 = rng.standard_normal(4) * 0.3

    def loss(u, beta):
        w = weights(u)
        return total_loss(class_loss(y, aggregate_log(w, heads)), time_reg(w, costs), beta)

    def grad(beta):
        tape = ad.Tape()
        return tape.backward(loss(tape.param(u0, "u"), beta))["u"]

    fd = ad.finite_diff_grad(lambda u: float(loss(u, 0.5)), u0)
    np.testing.assert_allclose(grad(0.5), fd, rtol=1e-6, atol=1e-9)
    # the regularizer's own gradient is w * (cost - mean cost): it raises the
    # logits of cheap heads and lowers those of expensive ones
    pull = grad(0.5) - grad(0.0)
    w = weights(u0)
    np.testing.assert_allclose(pull, 0.5 * w * (costs - w @ costs), rtol=1e-10)
    assert pull[0] < 0 < pull[-1]


def test_jensen_gap_is_first_order_near_a_vertex():
    # w = (1 - eps) e_0 + eps e_1 leaves a gap of about eps * KL(p_0 || p_1),
    # so near-identical heads can hide a non-vertex w below any fixed tolerance
    p0 = np.array([[0.6, 0.4]])
    p1 = np.array([[0.58, 0.42]])
    kl = float(np.sum(p0 * np.log(p0 / p1)))
    for eps in (1e-3, 1e-5, 1e-7):
        w = np.array([1 - eps, eps])
        gap = 1 - np.exp(aggregate_log(w, [np.log(p0), np.log(p1)]).values).sum()
        assert gap == pytest.approx(eps * kl, rel=1e-3)
    assert 1e-7 * kl < 1e-9
