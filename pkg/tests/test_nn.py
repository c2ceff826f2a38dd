import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from yoeo.errors import ConfigurationError, TrainingError, UsageError
from yoeo.nn import AdamW, Mlp, RngStream, ema_update, mlp_forward, mlp_grad, swish


def fd_check(net, x, upstream, eps=1e-6):
    """Worst relative error between analytic and central-difference gradients."""
    _, cache = net.forward(x)
    grads, gx = net.backward(cache, upstream)

    def f():
        return float(np.sum(upstream * net(x)))

    worst = 0.0
    for p, g in zip(net.params, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + eps
            up = f()
            p[i] = old - eps
            down = f()
            p[i] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(num - g[i]) / max(1.0, abs(num), abs(g[i])))
    return worst, gx


@pytest.mark.parametrize("act", ["relu", "swish", "identity"])
@given(seed=st.integers(0, 2**31))
def test_gradients_match_finite_differences(act, seed):
    rng = np.random.default_rng(seed)
    net = Mlp.build([3, 5, 4, 2], act, "identity", rng)
    x = rng.normal(size=(4, 3))
    err, _ = fd_check(net, x, rng.normal(size=(4, 2)))
    assert err < 1e-4


def test_zero_net_outputs_zero():
    net = Mlp([np.zeros((2, 3))], [np.zeros(2)], ["identity"])
    np.testing.assert_array_equal(net(np.array([1.0, -2.0, 5.0])), [0.0, 0.0])


def test_affine_forward_and_backward():
    net = Mlp([np.array([[2.0]])], [np.array([1.0])], ["identity"])
    assert mlp_forward(net, np.array([3.0]))[0] == 7.0
    _, cache = net.forward(np.array([3.0]))
    (dw, db), dx = mlp_grad(net, np.array([1.0]), cache)
    assert dw[0, 0] == 3.0 and db[0] == 1.0 and dx[0] == 2.0


def test_zero_upstream_gives_zero_gradients():
    rng = np.random.default_rng(0)
    net = Mlp.build([3, 8, 1], "swish", "identity", rng)
    _, cache = net.forward(rng.normal(size=(5, 3)))
    grads, gx = net.backward(cache, np.zeros((5, 1)))
    assert all(not g.any() for g in grads) and not gx.any()


def test_wide_swish_matches_straight_line_evaluation():
    rng = np.random.default_rng(1)
    net = Mlp.build([4, 256, 256, 1], "swish", "identity", rng)
    x = rng.normal(size=(7, 4))
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = h @ w.T + b
        h = z / (1.0 + np.exp(-z))
    ref = h @ net.weights[-1].T + net.biases[-1]
    np.testing.assert_allclose(net(x), ref, rtol=1e-12, atol=1e-12)


def test_swish_limits():
    assert swish(np.array(0.0)) == 0.0
    assert abs(swish(np.array(30.0)) - 30.0) < 1e-9


def test_dimension_mismatch_and_missing_cache():
    net = Mlp.build([3, 1], "relu", "identity", 0)
    with pytest.raises(ConfigurationError):
        net(np.zeros(4))
    with pytest.raises(UsageError):
        net.backward(None, np.ones(1))


def test_adamw_zero_grad_is_fixed_point():
    p = np.array([1.5, -2.0])
    opt = AdamW([p], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p, [1.5, -2.0])


def test_adamw_first_step_moves_by_lr():
    p = np.array([0.0])
    AdamW([p], lr=0.1).step([np.array([1.0])])
    assert p[0] == pytest.approx(-0.1, rel=1e-6)


def test_adamw_rejects_non_finite_gradient():
    p = np.zeros(3)
    with pytest.raises(TrainingError, match="non-finite"):
        AdamW([p]).step([np.array([0.0, np.nan, 1.0])])


def test_ema_boundaries_and_geometric_limit():
    t, o = [np.array([0.0])], [np.array([1.0])]
    ema_update(t, o, 1.0)
    assert t[0][0] == 0.0
    ema_update(t, o, 0.0)
    assert t[0][0] == 1.0
    t = [np.array([0.0])]
    for _ in range(100):
        ema_update(t, o, 0.995)
    assert t[0][0] == pytest.approx(1 - 0.995**100, rel=1e-12)
    assert t[0][0] == pytest.approx(0.394, abs=1e-3)


def test_streams_are_reproducible_and_distinct():
    a = RngStream(3, 1).normal(size=5)
    np.testing.assert_array_equal(a, RngStream(3, 1).normal(size=5))
    assert not np.array_equal(a, RngStream(3, 2).normal(size=5))
