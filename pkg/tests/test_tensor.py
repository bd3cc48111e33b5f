"""Core tensor op contracts: frozen examples, purity, graph semantics."""

import subprocess
import sys

import numpy as np
import pytest

from deeptfp import (ComputeGraph, NonFiniteError, ShapeError, Tensor, add,
                     add_bias, backend, conv2d, matmul, mse_loss, mul,
                     mul_map, relu, reshape, scale)
from reference import conv2d_direct


@pytest.fixture(params=["numpy", "numba"])
def conv_backend(request):
    backend.use(request.param)
    yield request.param
    backend.use("auto")


def test_conv2d_all_ones(conv_backend):
    x = Tensor(np.ones((1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    b = Tensor(np.zeros(1))
    out = conv2d(x, k, b).numpy()
    expected = np.array([[[4.0, 6.0, 4.0],
                          [6.0, 9.0, 6.0],
                          [4.0, 6.0, 4.0]]])
    np.testing.assert_array_equal(out, expected)


def test_conv2d_identity_kernel(conv_backend):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 5, 4))
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = 1.0
    k[1, 1, 1, 1] = 1.0
    out = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(2))).numpy()
    np.testing.assert_allclose(out, x, atol=1e-15)


def test_conv2d_one_by_one_kernel_scales(conv_backend):
    rng = np.random.default_rng(8)
    x = rng.normal(size=(1, 4, 4))
    k = np.full((1, 1, 1, 1), 2.0)
    out = conv2d(Tensor(x), Tensor(k), Tensor(np.zeros(1))).numpy()
    np.testing.assert_allclose(out, 2.0 * x, atol=1e-15)


def test_conv2d_matches_direct_summation(conv_backend):
    rng = np.random.default_rng(42)
    for _ in range(25):
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        kk = int(rng.choice([1, 3, 5]))
        h = int(rng.integers(kk, 9))
        w = int(rng.integers(kk, 9))
        x = rng.normal(size=(c_in, h, w))
        k = rng.normal(size=(c_out, c_in, kk, kk))
        b = rng.normal(size=c_out)
        got = conv2d(Tensor(x), Tensor(k), Tensor(b)).numpy()
        np.testing.assert_allclose(got, conv2d_direct(x, k, b), atol=1e-12)


def test_conv2d_batched_matches_per_instance(conv_backend):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    batched = conv2d(Tensor(x), Tensor(k), Tensor(b)).numpy()
    for n in range(4):
        single = conv2d(Tensor(x[n]), Tensor(k), Tensor(b)).numpy()
        np.testing.assert_allclose(batched[n], single, atol=1e-12)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError, match="C_in"):
        conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError, match="odd"):
        conv2d(x, Tensor(np.zeros((2, 3, 2, 2))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError, match="bias"):
        conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(5)))


def test_backend_env_flag_selects_numpy():
    code = ("import os; os.environ['DEEPTFP_BACKEND'] = 'numpy'; "
            "from deeptfp import backend; print(backend.active_name())")
    out = subprocess.run([sys.executable, "-c", code],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_mse_examples():
    assert mse_loss(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).item() == 12.5
    assert mse_loss(Tensor([2.0]), Tensor([5.0])).item() == 9.0
    assert mse_loss(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0


def test_relu_values_and_zero_subgradient():
    out = relu(Tensor([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.numpy(), [0.0, 0.0, 2.0])

    x = Tensor([0.0], requires_grad=True)
    loss = mse_loss(relu(x), Tensor([1.0]))
    loss.backward()
    np.testing.assert_array_equal(x.grad, [0.0])


def test_backward_quadratic_example():
    w = Tensor([3.0], requires_grad=True)
    loss = mse_loss(w, Tensor([0.0]))
    loss.backward()
    np.testing.assert_array_equal(w.grad, [6.0])


def test_unused_parameter_gets_zero_grad():
    w = Tensor([3.0], requires_grad=True)
    v = Tensor([5.0], requires_grad=True)
    mse_loss(w, Tensor([0.0])).backward()
    np.testing.assert_array_equal(v.grad, [0.0])


def test_repeated_backward_is_an_error():
    w = Tensor([1.0], requires_grad=True)
    loss = mse_loss(w, Tensor([0.0]))
    loss.backward()
    with pytest.raises(RuntimeError, match="fresh forward"):
        loss.backward()


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    out = add(w, w)
    with pytest.raises(ShapeError, match="scalar"):
        out.backward()


def test_shared_subexpression_counted_once():
    # z = y + y with y = x * x, so dz/dx = 4x; double-visiting y would give 8x.
    x = Tensor([1.5], requires_grad=True)
    y = mul(x, x)
    z = mse_loss(add(y, y), Tensor([0.0]))
    z.backward()
    # z = (2 x^2)^2 = 4 x^4, dz/dx = 16 x^3
    np.testing.assert_allclose(x.grad, [16.0 * 1.5 ** 3], atol=1e-12)


def test_compute_graph_topological_order():
    x = Tensor([2.0], requires_grad=True)
    y = mul(x, x)
    z = add(y, x)
    loss = mse_loss(z, Tensor([0.0]))
    graph = ComputeGraph.trace(loss)
    position = {id(t): i for i, t in enumerate(graph.nodes)}
    assert len(position) == len(graph.nodes)
    for t in graph.nodes:
        for parent in t._parents:
            if id(parent) in position:
                assert position[id(parent)] < position[id(t)]


def test_ops_are_pure():
    rng = np.random.default_rng(11)
    a = Tensor(rng.normal(size=(3, 3)))
    b = Tensor(rng.normal(size=(3, 3)))
    before_a = a.numpy().copy()
    before_b = b.numpy().copy()
    add(a, b)
    mul(a, b)
    relu(a)
    scale(a, -2.5)
    mse_loss(a, b)
    np.testing.assert_array_equal(a.numpy(), before_a)
    np.testing.assert_array_equal(b.numpy(), before_b)
    with pytest.raises((ValueError, RuntimeError)):
        a.numpy()[0, 0] = 99.0


def test_elementwise_shape_mismatch_rejected():
    with pytest.raises(ShapeError, match="shapes"):
        add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError):
        mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((4,))))


def test_scalar_broadcast_is_allowed():
    theta = Tensor(np.array(0.5), requires_grad=True)
    grid = Tensor([[2.0, 4.0], [6.0, 8.0]])
    out = mul(grid, theta)
    np.testing.assert_array_equal(out.numpy(), [[1.0, 2.0], [3.0, 4.0]])
    mse_loss(out, Tensor(np.zeros((2, 2)))).backward()
    # d/dtheta mean((theta*g)^2) = mean(2*theta*g^2)
    expected = np.mean(2.0 * 0.5 * grid.numpy() ** 2)
    np.testing.assert_allclose(theta.grad, expected, atol=1e-12)


def test_overflow_raises_not_propagates():
    big = Tensor([1e308])
    with pytest.raises(NonFiniteError):
        mul(big, big)
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_mul_map_weights_each_grid():
    x = Tensor(np.arange(8.0).reshape(2, 2, 2))
    m = Tensor([[1.0, 0.0], [0.0, 2.0]], requires_grad=True)
    out = mul_map(x, m)
    np.testing.assert_array_equal(out.numpy()[0], [[0.0, 0.0], [0.0, 6.0]])
    np.testing.assert_array_equal(out.numpy()[1], [[4.0, 0.0], [0.0, 14.0]])
    mse_loss(out, Tensor(np.zeros((2, 2, 2)))).backward()
    manual = np.sum(2.0 * (x.numpy() * m.numpy()) * x.numpy(), axis=0) / 8.0
    np.testing.assert_allclose(m.grad, manual, atol=1e-12)


def test_add_bias_and_matmul_contracts():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([10.0, 20.0])
    np.testing.assert_array_equal(add_bias(x, b).numpy(),
                                  [[11.0, 22.0], [13.0, 24.0]])
    with pytest.raises(ShapeError, match="inner"):
        matmul(x, Tensor(np.zeros((3, 2))))


def test_reshape_round_trip():
    x = Tensor(np.arange(6.0), requires_grad=True)
    out = reshape(x, (2, 3))
    assert out.shape == (2, 3)
    mse_loss(out, Tensor(np.zeros((2, 3)))).backward()
    np.testing.assert_allclose(x.grad, 2.0 * np.arange(6.0) / 6.0, atol=1e-15)
    with pytest.raises(ShapeError):
        reshape(x, (4, 2))
