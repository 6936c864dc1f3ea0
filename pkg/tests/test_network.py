import numpy as np
import pytest

from dfbdp.errors import InvalidArgument, NumericFailure
from dfbdp.forward import make_stream
from dfbdp.network import (
    AdamState,
    MlpNet,
    adam_update,
    clip_to_theta_gamma,
    forward,
    grad_input_analytic,
    grad_params,
    init_net,
    load_json,
    save_json,
    zeros_like,
)


def tiny():
    return MlpNet(w1=[[2.0]], b1=[0.3], w2=[0.5], b2=-0.1)


def random_net(seed, in_dim=3, hidden=5):
    g = make_stream(seed)
    return MlpNet(g.normal(size=(hidden, in_dim)), g.normal(size=hidden),
                  g.normal(size=hidden), g.normal())


def test_forward_examples():
    # oracle: 0.5 * tanh(2.3) - 0.1 in 40-digit decimal arithmetic
    assert forward(tiny(), [1.0]) == pytest.approx(0.390048198, abs=5e-9)
    assert forward(tiny(), [1.0]) == 0.5 * np.tanh(2.3) - 0.1
    assert forward(MlpNet([[1.0]], [0.0], [1.0], 0.0), [0.0]) == 0.0
    net = random_net(0)
    flat = MlpNet(net.w1, net.b1, np.zeros(5), 1.25)
    np.testing.assert_array_equal(forward(flat, np.ones((4, 3))), 1.25)


def test_forward_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        forward(tiny(), [1.0, 2.0])
    with pytest.raises(InvalidArgument):
        MlpNet(w1=[[1.0]], b1=[0.0, 1.0], w2=[1.0], b2=0.0)


def test_batch_matches_single():
    net = random_net(1)
    x = make_stream(2).normal(size=(6, 3))
    out = forward(net, x)
    for k in range(6):
        assert out[k] == pytest.approx(forward(net, x[k]), abs=1e-15)


def _fd_params(net, x, h=1e-6):
    grads = []
    for k, p in enumerate(net.params()):
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [q.copy() for q in net.params()]
            minus = [q.copy() for q in net.params()]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (forward(MlpNet(*plus), x) - forward(MlpNet(*minus), x)) / (2 * h)
        grads.append(g)
    return grads


def test_grad_params_examples():
    net = random_net(3)
    x = np.array([0.1, -0.2, 0.3])
    zero = grad_params(net, x, 0.0)
    assert all(np.all(p == 0) for p in zero.params())
    assert grad_params(net, x, 2.5).b2 == 2.5


def test_grad_params_matches_finite_differences():
    for seed in range(100):
        g = make_stream(seed, 1)
        net = MlpNet(g.normal(size=(4, 2)), g.normal(size=4), g.normal(size=4), g.normal())
        x = g.normal(size=2)
        ana = grad_params(net, x, 1.0).params()
        for a, f in zip(ana, _fd_params(net, x)):
            np.testing.assert_allclose(a, f, rtol=1e-5, atol=1e-8)


def test_grad_params_batch_sums_upstream():
    net = random_net(4)
    x = make_stream(5).normal(size=(3, 3))
    up = np.array([0.5, -1.0, 2.0])
    batch = grad_params(net, x, up)
    single = [grad_params(net, x[k], up[k]) for k in range(3)]
    for j, p in enumerate(batch.params()):
        np.testing.assert_allclose(p, sum(s.params()[j] for s in single), atol=1e-14)


def test_grad_input_examples():
    # oracle: 0.5 * 2 * (1 - tanh(2.3)^2) by finite differences on the input
    fd = (forward(tiny(), [1.0 + 1e-6]) - forward(tiny(), [1.0 - 1e-6])) / 2e-6
    assert grad_input_analytic(tiny(), [1.0])[0] == pytest.approx(fd, abs=1e-8)
    assert grad_input_analytic(tiny(), [1.0])[0] == pytest.approx(0.039411054, abs=5e-9)
    net = random_net(6)
    np.testing.assert_array_equal(grad_input_analytic(MlpNet(net.w1, net.b1, np.zeros(5), 0.0),
                                                      np.ones(3)), 0.0)
    odd = MlpNet(net.w1, np.zeros(5), net.w2, 0.0)
    x = np.array([0.3, -0.7, 1.1])
    np.testing.assert_allclose(grad_input_analytic(odd, x), grad_input_analytic(odd, -x),
                               atol=1e-15)


def test_grad_input_second_order():
    net = random_net(7)
    x = np.array([0.2, 0.4, -0.5])
    exact = grad_input_analytic(net, x)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = np.array([(forward(net, x + h * e) - forward(net, x - h * e)) / (2 * h)
                       for e in np.eye(3)])
        errs.append(np.abs(fd - exact).max())
    assert 3.0 < errs[0] / errs[1] < 5.0
    assert 3.0 < errs[1] / errs[2] < 5.0


def test_init_net():
    net = init_net(3, 13, make_stream(0))
    assert net.hidden == 13 and net.in_dim == 3
    assert np.all(net.b1 == 0) and net.b2 == 0
    assert np.abs(net.w1).max() <= np.sqrt(6 / 16)
    assert np.abs(net.w2).max() <= np.sqrt(6 / 14)
    assert np.all(zeros_like(net).w1 == 0)


def test_adam_examples():
    params = [np.array([1.0, -2.0])]
    state = AdamState.for_params(params)
    out = adam_update(state, params, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], params[0])
    assert state.step == 1

    state = AdamState.for_params(params, lr=0.01)
    out = adam_update(state, params, [np.array([0.3, -5.0])])
    np.testing.assert_allclose(out[0] - params[0], [-0.01, 0.01], rtol=1e-6)

    p = [np.array([0.0])]
    state = AdamState.for_params(p)
    for _ in range(50):
        p = adam_update(state, p, [np.array([2.0])])
    assert p[0][0] < 0


def test_adam_non_finite_names_block():
    params = [np.zeros(2), np.zeros(3)]
    state = AdamState.for_params(params)
    with pytest.raises(NumericFailure, match="b1"):
        adam_update(state, params, [np.zeros(2), np.array([0, np.nan, 0])], names=["w1", "b1"])


def test_adam_shape_mismatch():
    state = AdamState.for_params([np.zeros(2)])
    with pytest.raises(InvalidArgument):
        adam_update(state, [np.zeros(3)], [np.zeros(3)])


def test_clip_examples():
    net = MlpNet(w1=[[0.3, 0.4], [0.1, 0.0]], b1=[0.0, 1.0], w2=[0.2, -0.3], b2=0.5)
    same = clip_to_theta_gamma(net, 1.0)
    for a, b in zip(same.params(), net.params()):
        np.testing.assert_array_equal(a, b)

    net = MlpNet(w1=[[3.0, 4.0], [0.1, 0.0]], b1=[0.0, 0.0], w2=[1.0, -1.0], b2=0.0)
    out = clip_to_theta_gamma(net, 1.0)
    np.testing.assert_allclose(out.w2, [0.5, -0.5])
    np.testing.assert_allclose(out.w1[0], [0.6, 0.8])
    assert np.linalg.norm(out.w1, axis=1).max() <= 1.0 + 1e-12
    assert np.abs(out.w2).sum() <= 1.0 + 1e-12
    with pytest.raises(InvalidArgument):
        clip_to_theta_gamma(net, 0.0)


def test_clip_bounds_input_gradient():
    # |grad| <= sum_k |w2_k| |w1_k| <= gamma^2 after projection
    for seed in range(20):
        net = clip_to_theta_gamma(random_net(seed), 2.0)
        x = make_stream(seed, 2).normal(size=(200, 3)) * 3
        assert np.linalg.norm(grad_input_analytic(net, x), axis=1).max() <= 4.0 + 1e-12


def test_checkpoint_round_trip(tmp_path):
    nets = {"u": random_net(8), "k": random_net(9, in_dim=4, hidden=2)}
    path = tmp_path / "ck.json"
    save_json(path, nets)
    back = load_json(path)
    for key in nets:
        for a, b in zip(nets[key].params(), back[key].params()):
            np.testing.assert_array_equal(a, b)


def test_checkpoint_header_checked():
    data = random_net(1).to_dict()
    data["hidden"] = 99
    with pytest.raises(InvalidArgument):
        MlpNet.from_dict(data)
