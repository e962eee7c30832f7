import numpy as np
import pytest

from doatrack import autodiff as ad
from doatrack.autodiff import Tensor
from doatrack.errors import ShapeError

from oracles import finite_difference


def check_op(build, arrays, tol=1e-4, eps=1e-5):
    """Compare reverse-mode gradients of a scalar-valued op against central
    finite differences for every input array."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]

    def fwd():
        return build(*leaves).values.sum()

    for leaf in leaves:
        leaf.grad = None
    out = build(*leaves)
    ad.sum_reduce(out).backward() if out.size > 1 else out.backward()
    for leaf, arr in zip(leaves, arrays):
        fd = finite_difference(fwd, leaf.values, eps=eps)
        got = np.zeros_like(arr) if leaf.grad is None else leaf.grad
        err = np.abs(got - fd) / np.maximum(1.0, np.maximum(np.abs(got), np.abs(fd)))
        assert err.max() < tol, f"gradient mismatch: {err.max()}"


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_softmax_length_one_axis():
    out = ad.softmax(Tensor([[3.7]]), axis=1)
    assert np.allclose(out.values, [[1.0]])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 6))
    out = ad.softmax(Tensor(x), axis=-1)
    assert np.allclose(out.values.sum(axis=-1), 1.0, atol=1e-12)


def test_max_reduce_routes_gradient_to_argmax():
    x = Tensor(np.array([[0.1, 2.0, -1.0], [3.0, 0.5, 0.2]]), requires_grad=True)
    out = ad.sum_reduce(ad.max_reduce(x, axis=1))
    out.backward()
    expected = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    assert np.array_equal(x.grad, expected)
    fd = finite_difference(lambda: ad.max_reduce(Tensor(x.values), axis=1).values.sum(),
                           x.values)
    assert np.allclose(x.grad, fd, atol=1e-6)


def test_add_mul_broadcast_gradients():
    rng = np.random.default_rng(1)
    check_op(lambda a, b: a + b, [rng.normal(size=(3, 4)), rng.normal(size=(4,))])
    check_op(lambda a, b: a * b, [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 4))])
    check_op(lambda a, b: a - b, [rng.normal(size=(3,)), rng.normal(size=(3,))])
    check_op(lambda a, b: a / b, [rng.normal(size=(3,)), rng.uniform(1.0, 2.0, size=(3,))])


def test_matmul_gradients():
    rng = np.random.default_rng(2)
    check_op(lambda a, b: ad.matmul(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
    # batched left operand against shared 2-D weights
    check_op(lambda a, b: ad.matmul(a, b), [rng.normal(size=(5, 3, 4)), rng.normal(size=(4, 2))])
    # fully batched product (attention-style)
    check_op(lambda a, b: ad.matmul(a, b), [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 3))])


def test_unary_gradients():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.5, 2.0, size=(3, 3))
    check_op(ad.exp, [rng.normal(size=(3, 3))])
    check_op(ad.log, [x])
    check_op(ad.sqrt, [x])
    check_op(ad.sigmoid, [rng.normal(size=(3, 3))])
    check_op(ad.tanh, [rng.normal(size=(3, 3))])
    # keep relu/abs inputs away from the kink
    y = rng.normal(size=(3, 3))
    y[np.abs(y) < 0.1] = 0.5
    check_op(ad.relu, [y])
    check_op(ad.absolute, [y])


def test_reduction_gradients():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 4))
    check_op(lambda a: ad.sum_reduce(a, axis=0), [x])
    check_op(lambda a: ad.sum_reduce(a, axis=1, keepdims=True), [x])
    check_op(lambda a: ad.mean_reduce(a), [x])
    check_op(lambda a: ad.mean_reduce(a, axis=1), [x])
    check_op(lambda a: ad.softmax(a, axis=1), [x])


def test_shape_op_gradients():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4))
    check_op(lambda a: ad.transpose(a, (2, 0, 1)), [x])
    check_op(lambda a: ad.reshape(a, (6, 4)), [x])
    check_op(lambda a: a[1], [x])
    check_op(lambda a: a[:, 1:3], [x])
    check_op(lambda a, b: ad.concat([a, b], axis=1),
             [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))])
    check_op(lambda a, b: ad.stack([a, b], axis=0),
             [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))])


def test_clamp_gradient_masks_outside():
    x = Tensor(np.array([-2.0, 0.3, 2.0]), requires_grad=True)
    out = ad.sum_reduce(ad.clamp(x, -1.0, 1.0))
    out.backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0])


def test_stop_gradient_blocks_flow():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = ad.sum_reduce(ad.stop_gradient(x) * x)
    out.backward()
    assert np.array_equal(x.grad, [1.0, 2.0])  # only the live branch


def test_conv2d_gradients():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    check_op(lambda xx, ww, bb: ad.conv2d(xx, ww, bb), [x, w, b], tol=1e-4)


def test_maxpool2d_gradient_and_shape():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 4, 6))
    out = ad.maxpool2d(Tensor(x), (2, 3))
    assert out.shape == (1, 2, 2, 2)
    check_op(lambda a: ad.maxpool2d(a, (2, 3)), [x])


def test_maxpool2d_rejects_indivisible():
    with pytest.raises(ShapeError):
        ad.maxpool2d(Tensor(np.zeros((1, 1, 5, 4))), (2, 2))


def test_bce_loss_values():
    ones = Tensor(np.ones((2, 2)))
    assert ad.bce_loss(ones, ones).item() == pytest.approx(0.0, abs=1e-6)
    half = Tensor(np.full((2, 2), 0.5))
    target = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert ad.bce_loss(half, target).item() == pytest.approx(np.log(2), abs=1e-12)


def test_bce_loss_gradient():
    rng = np.random.default_rng(8)
    p = rng.uniform(0.1, 0.9, size=(3, 3))
    t = (rng.uniform(size=(3, 3)) > 0.5).astype(float)
    leaf = Tensor(p, requires_grad=True)
    loss = ad.bce_loss(leaf, Tensor(t))
    loss.backward()
    fd = finite_difference(lambda: ad.bce_loss(Tensor(leaf.values), Tensor(t)).item(),
                           leaf.values)
    err = np.abs(leaf.grad - fd) / np.maximum(1.0, np.abs(fd))
    assert err.max() < 1e-4


def test_grad_check_helper_passes_on_smooth_composition():
    rng = np.random.default_rng(9)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    x = Tensor(rng.normal(size=(4, 3)))

    def fn():
        return ad.mean_reduce(ad.tanh(ad.matmul(x, w)))

    assert ad.grad_check(fn, [w]) < 1e-4


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.zeros(3), requires_grad=True).backward()


def test_no_nan_with_adversarial_magnitudes():
    rng = np.random.default_rng(10)
    for _ in range(50):
        x = Tensor(rng.uniform(-1e3, 1e3, size=(4, 4)), requires_grad=True)
        y = ad.sigmoid(x) * ad.tanh(x) + ad.relu(x) * 1e-3
        z = ad.bce_loss(ad.clamp(ad.sigmoid(y), 1e-7, 1 - 1e-7),
                        Tensor((rng.uniform(size=(4, 4)) > 0.5).astype(float)))
        z.backward()
        assert np.isfinite(z.values).all()
        assert np.isfinite(x.grad).all()


def test_repeated_use_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    out = x * x + x / x
    out.backward()
    assert x.grad == pytest.approx(2 * 3.0)
