import io

import numpy as np
import pytest

from evpinn.autodiff import Tape, check_gradient
from evpinn.nn import (
    AdamState,
    Network,
    ParamGroup,
    adam_step,
    clip_by_global_norm,
    global_norm,
    mlp_apply,
    mlp_forward,
    mlp_new,
    read_networks,
    step_groups,
    write_networks,
)


def reference_forward(net, x):
    """Plain loop evaluation of the layer recursion, no tape, no vectorized batch."""
    h = list(map(float, x))
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = [sum(w[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(len(b))]
        h = [np.tanh(v) for v in z] if act == "tanh" else z
    return np.array(h)


def test_default_architecture_shapes():
    pinn = mlp_new((2, 128, 128, 128, 128, 1), "tanh", 0)
    assert [w.shape for w in pinn.weights] == [(128, 2), (128, 128), (128, 128), (128, 128), (1, 128)]
    assert pinn.activations == ("tanh",) * 4 + ("identity",)
    stage = mlp_new((2, 32, 32, 32, 1), "tanh", 0)
    assert stage.n_layers == 4
    assert stage.n_params() == 2 * 32 + 32 + 2 * (32 * 32 + 32) + 33


def test_same_seed_same_weights():
    a, b = mlp_new((3, 8, 1), seed=7), mlp_new((3, 8, 1), seed=7)
    for x, y in zip(a.parameters(), b.parameters()):
        assert np.array_equal(x, y)
    c = mlp_new((3, 8, 1), seed=8)
    assert not np.array_equal(a.weights[0], c.weights[0])


@pytest.mark.parametrize("sizes", [(3,), (), (2, 0, 1)])
def test_invalid_sizes(sizes):
    with pytest.raises(ValueError):
        mlp_new(sizes)


def test_shape_chain_enforced():
    with pytest.raises(ValueError):
        Network((2, 3), [np.zeros((2, 3))], [np.zeros(3)], ("identity",))


def test_zero_network_outputs_zero():
    net = mlp_new((2, 8, 8, 1))
    net.set_parameters([np.zeros_like(p) for p in net.parameters()])
    tape = Tape()
    assert mlp_forward(net, [0.3, -2.0], tape).value[0] == 0.0


def test_single_affine_layer():
    net = Network((1, 1), [np.array([[2.5]])], [np.array([-1.0])], ("identity",))
    tape = Tape()
    assert mlp_forward(net, [4.0], tape).value[0] == 2.5 * 4.0 - 1.0


def test_forward_matches_reference_loop():
    net = mlp_new((2, 8, 1), "tanh", 11)
    net.biases = [np.random.default_rng(1).normal(size=b.shape) for b in net.biases]
    rng = np.random.default_rng(2)
    for _ in range(5):
        x = rng.normal(size=2)
        tape = Tape()
        got = mlp_forward(net, x, tape).value
        np.testing.assert_allclose(got, reference_forward(net, x), rtol=0, atol=1e-12)
        np.testing.assert_allclose(mlp_apply(net, x[None, :])[0], got, rtol=0, atol=1e-15)


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        mlp_forward(mlp_new((2, 4, 1)), [1.0, 2.0, 3.0], Tape())


@pytest.mark.parametrize("seed", range(5))
def test_network_gradients(seed):
    net = mlp_new((2, 6, 5, 1), "tanh", seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(7, 2))
    y = rng.normal(size=(7, 1))

    def loss(tape, ps):
        return ((mlp_forward(net, x, tape, ps) - y) ** 2).mean()

    assert check_gradient(loss, [p.copy() for p in net.parameters()], 1e-5) < 1e-6


def test_adam_first_step_is_signed_lr():
    g = [np.array([0.3, -2.0, 1e-3])]
    p, state = adam_step([np.zeros(3)], g, AdamState.zeros_like([np.zeros(3)]), lr=0.01)
    # m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
    expected = -0.01 * g[0] / (np.abs(g[0]) + 1e-8)
    np.testing.assert_allclose(p[0], expected, rtol=1e-12)
    np.testing.assert_allclose(p[0], -0.01 * np.sign(g[0]), rtol=1e-4)
    assert state.t == 1


def test_adam_zero_gradient_is_noop():
    p0 = [np.array([1.0, -2.0])]
    state = AdamState.zeros_like(p0)
    p, state = adam_step(p0, [np.zeros(2)], state, 0.1)
    assert np.array_equal(p[0], p0[0])
    assert np.array_equal(state.m[0], np.zeros(2)) and np.array_equal(state.v[0], np.zeros(2))


def test_adam_two_steps_constant_gradient():
    # hand recurrence, g = 1, lr = 0.1:
    # t=1: m=0.1, v=0.001, m_hat=1, v_hat=1 -> step 0.1/(1+1e-8)
    # t=2: m=0.19, v=0.001999, m_hat=1, v_hat=1 -> same step
    step = 0.1 / (1.0 + 1e-8)
    p = [np.array([0.0])]
    state = AdamState.zeros_like(p)
    p, state = adam_step(p, [np.array([1.0])], state, 0.1)
    assert p[0][0] == pytest.approx(-step, rel=1e-14)
    p, state = adam_step(p, [np.array([1.0])], state, 0.1)
    assert p[0][0] == pytest.approx(-2 * step, rel=1e-14)
    assert state.m[0][0] == pytest.approx(0.19) and state.v[0][0] == pytest.approx(0.001999)


def test_adam_zero_lr_is_noop():
    p0 = [np.array([0.5, 0.25])]
    p, _ = adam_step(p0, [np.array([3.0, -1.0])], AdamState.zeros_like(p0), 0.0)
    assert np.array_equal(p[0], p0[0])


def test_xavier_variance():
    net = mlp_new((64, 128, 96), "tanh", 5)
    for w in net.weights:
        fan_out, fan_in = w.shape
        target = 2.0 / (fan_in + fan_out)
        assert abs(w.var() / target - 1.0) < 0.2
    assert all(np.array_equal(b, np.zeros_like(b)) for b in net.biases)


def test_clip_global_norm():
    g = [np.array([3.0, 0.0]), np.array([[4.0]])]
    clipped = clip_by_global_norm(g, 1.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    assert clip_by_global_norm(g, 10.0)[0][0] == 3.0


def test_param_groups_use_own_lr():
    a = ParamGroup("a", [np.zeros(1)], 0.1)
    b = ParamGroup("b", [np.zeros(1)], 0.01)
    step_groups([a, b], [[np.array([1.0])], [np.array([1.0])]], clip_norm=None)
    assert a.params[0][0] == pytest.approx(-0.1)
    assert b.params[0][0] == pytest.approx(-0.01)


def test_serialization_round_trip():
    nets = [mlp_new((2, 5, 3, 1), "tanh", 1), mlp_new((1, 4, 1), "identity", 2)]
    buf = io.BytesIO()
    write_networks(buf, nets)
    raw = buf.getvalue()
    assert raw.startswith(b"EVPINN-MODEL-v1")
    back = read_networks(io.BytesIO(raw))
    for a, b in zip(nets, back):
        assert a.sizes == b.sizes and a.activations == b.activations and a.seed == b.seed
        for x, y in zip(a.parameters(), b.parameters()):
            assert np.array_equal(x, y)


def test_serialization_layout():
    net = Network((1, 1), [np.array([[2.0]])], [np.array([-0.5])], ("identity",), seed=3)
    buf = io.BytesIO()
    write_networks(buf, [net])
    expected = (b"EVPINN-MODEL-v1\n" + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
                + (1).to_bytes(4, "little") * 2 + b"\x00" + (3).to_bytes(8, "little")
                + np.array([2.0, -0.5], dtype="<f8").tobytes())
    assert buf.getvalue() == expected


def test_bad_magic_rejected():
    with pytest.raises(ValueError):
        read_networks(io.BytesIO(b"NOT-A-MODEL-FILE" + b"\x00" * 8))
