# -*- coding: utf-8 -*-
"""Тесты движка тензоров и обратного прохода."""

from types import SimpleNamespace

import numpy as np
import pytest

from errors import ShapeError
from tensor_autodiff import (Tensor, backward, binary_cross_entropy, conv1d_temporal,
                             deconv1d_temporal, deconv_reachable_length, dense, log_softmax,
                             nll_loss, numerical_gradient, relative_error, relu, reshape,
                             sigmoid, squared_error, tensor_sum)


def conv_loop_oracle(x, w, b, stride):
    c_out, c_in, k = w.shape
    t_out = (x.shape[1] - k) // stride + 1
    out = np.zeros((c_out, t_out))
    for o in range(c_out):
        for j in range(t_out):
            total = b[o]
            for i in range(c_in):
                for kappa in range(k):
                    total += x[i, j * stride + kappa] * w[o, i, kappa]
            out[o, j] = total
    return out


def test_conv_zero_weights_gives_bias():
    x = Tensor(np.arange(5.0).reshape(1, 5))
    out = conv1d_temporal(x, Tensor(np.zeros((1, 1, 5))), Tensor([0.7]), stride=2)
    assert out.shape == (1, 1)
    assert out.numpy()[0, 0] == pytest.approx(0.7)


def test_conv_output_length():
    out = conv1d_temporal(Tensor(np.zeros((1, 200))), Tensor(np.zeros((3, 1, 5))),
                          Tensor(np.zeros(3)), stride=2)
    assert out.shape == (3, 98)


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(2, 11)), rng.normal(size=(3, 2, 5)), rng.normal(size=3)
    out = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=2).numpy()
    np.testing.assert_allclose(out, conv_loop_oracle(x, w, b, 2), atol=1e-12, rtol=0)


def test_conv_batched_matches_single():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 2, 20)), rng.normal(size=(4, 2, 5)), rng.normal(size=4)
    batched = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=2).numpy()
    for i in range(3):
        single = conv1d_temporal(Tensor(x[i]), Tensor(w), Tensor(b), stride=2).numpy()
        np.testing.assert_allclose(batched[i], single, atol=1e-12)


def test_conv_shape_errors_name_dimension():
    with pytest.raises(ShapeError, match="channels"):
        conv1d_temporal(Tensor(np.zeros((3, 10))), Tensor(np.zeros((2, 2, 5))),
                        Tensor(np.zeros(2)))
    with pytest.raises(ShapeError, match="kernel"):
        conv1d_temporal(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 2, 5))),
                        Tensor(np.zeros(2)))


def test_deconv_restores_target_length():
    y = Tensor(np.ones((4, 98)))
    out = deconv1d_temporal(y, Tensor(np.ones((4, 2, 5))), Tensor(np.zeros(2)), stride=2,
                            target_length=200)
    assert out.shape == (2, 200)


def test_deconv_adjoint_identity():
    rng = np.random.default_rng(2)
    for t, k, stride in [(11, 5, 2), (20, 5, 2), (9, 3, 1), (17, 4, 3)]:
        w = rng.normal(size=(3, 2, k))
        x = rng.normal(size=(2, t))
        t_out = (t - k) // stride + 1
        y = rng.normal(size=(3, t_out))
        conv = conv1d_temporal(Tensor(x), Tensor(w), Tensor(np.zeros(3)), stride=stride).numpy()
        # Ядро deconv: те же веса, входные каналы deconv = выходные каналы conv
        adj = deconv1d_temporal(Tensor(y), Tensor(w), Tensor(np.zeros(2)), stride=stride).numpy()
        lhs = float((conv * y).sum())
        rhs = float((x[:, :adj.shape[1]] * adj[:, :t]).sum())
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_deconv_zero_input_gives_bias():
    out = deconv1d_temporal(Tensor(np.zeros((2, 9))), Tensor(np.ones((2, 3, 5))),
                            Tensor([0.1, 0.2, 0.3]), stride=2, target_length=22).numpy()
    np.testing.assert_allclose(out, np.array([0.1, 0.2, 0.3])[:, None] * np.ones((3, 22)))


def test_deconv_unreachable_target():
    assert deconv_reachable_length(9, 5, 2) == 22
    with pytest.raises(ShapeError, match="unreachable"):
        deconv1d_temporal(Tensor(np.zeros((2, 9))), Tensor(np.zeros((2, 1, 5))),
                          Tensor(np.zeros(1)), stride=2, target_length=23)


def test_dense_examples():
    x = Tensor([1.0, 1.0])
    np.testing.assert_allclose(dense(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).numpy(), [1, 1])
    out = dense(x, Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.numpy(), [3.0, 7.0])
    with pytest.raises(ShapeError):
        dense(Tensor([1.0, 2.0, 3.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)))


def test_dense_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    x = rng.normal(size=4)

    def loss():
        return tensor_sum(sigmoid(dense(Tensor(x), w, b)))

    grads = backward(loss(), {'w': w, 'b': b})
    for name, tensor in (('w', w), ('b', b)):
        numeric = numerical_gradient(lambda: loss().item(), tensor.data)
        assert relative_error(grads[name], numeric) < 1e-5


def test_activations():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).numpy(), [0.0, 0.0, 2.0])
    assert sigmoid(Tensor(0.0)).item() == 0.5
    v = np.random.default_rng(5).normal(size=(4, 7)) * 30
    probs = np.exp(log_softmax(Tensor(v)).numpy())
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_sigmoid_is_finite_for_large_inputs():
    out = sigmoid(Tensor([-1000.0, 1000.0])).numpy()
    assert np.all(np.isfinite(out))


def test_scalar_results_keep_zero_dimensions():
    x = Tensor(np.ones(3), requires_grad=True)
    assert Tensor(2.5).shape == ()
    loss = tensor_sum(x)
    assert loss.shape == () and loss.ndim == 0
    assert squared_error(Tensor(np.zeros((1, 4))), np.ones((1, 4))).shape == ()
    backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones(3))
    transposed = Tensor(np.arange(6.0).reshape(2, 3).T)
    assert transposed.data.flags['C_CONTIGUOUS']


def test_backward_of_sum_is_ones():
    x = Tensor(np.random.default_rng(6).normal(size=(3, 4)), requires_grad=True)
    grads = backward(tensor_sum(x), {'x': x})
    np.testing.assert_array_equal(grads['x'], np.ones((3, 4)))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(relu(x))


def test_unused_parameter_gets_exact_zero():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    grads = backward(tensor_sum(x), {'x': x, 'unused': unused})
    assert np.array_equal(grads['unused'], np.zeros((2, 2)))


def test_composed_network_gradients(gradient_checker):
    rng = np.random.default_rng(8)

    holder = SimpleNamespace(tensors={
        'conv.w': Tensor(rng.normal(size=(3, 2, 5)) * 0.5, requires_grad=True),
        'conv.b': Tensor(rng.normal(size=3) * 0.1, requires_grad=True),
        'dense.w': Tensor(rng.normal(size=(2, 12)) * 0.3, requires_grad=True),
        'dense.b': Tensor(np.zeros(2), requires_grad=True),
    })

    x = rng.uniform(size=(2, 12))
    targets = np.array([1.0, 0.0])
    t = holder.tensors

    def loss():
        h = relu(conv1d_temporal(Tensor(x), t['conv.w'], t['conv.b'], stride=2))
        z = reshape(h, (h.size,))
        return binary_cross_entropy(sigmoid(dense(z, t['dense.w'], t['dense.b'])), targets)

    analytic = backward(loss(), t)
    errors = gradient_checker(loss, holder, analytic, list(t))
    assert errors and all(e < 1e-4 for e in errors.values()), errors


def test_losses_are_batch_means():
    pred = Tensor(np.zeros((2, 1, 4)))
    target = np.full((2, 1, 4), 0.5)
    assert squared_error(pred, target, batched=True).item() == pytest.approx(1.0)
    logp = Tensor(np.log(np.full((2, 3), 1.0 / 3)))
    assert nll_loss(logp, np.array([0, 2]), batched=True).item() == pytest.approx(np.log(3))


def test_forward_is_deterministic():
    rng = np.random.default_rng(9)
    x, w, b = rng.normal(size=(2, 30)), rng.normal(size=(4, 2, 5)), rng.normal(size=4)
    first = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=2).numpy()
    second = conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), stride=2).numpy()
    assert first.tobytes() == second.tobytes()
