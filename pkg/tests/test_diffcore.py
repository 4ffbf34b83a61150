import numpy as np
import pytest

from core import diffcore as dc
from core.diffcore import DenseArray
from core.gradcheck import grad_check
from utils.errors import NonScalarOutput, ShapeMismatch

TOL = 1e-4
SEEDS = range(10)


def _cases(rng):
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    m = rng.normal(size=(4, 5))
    other = rng.normal(size=(2, 4, 3))
    idx = np.array([2, 0, 2])
    return {
        "add": (lambda x: dc.sum_((x + m[:1]) ** 2), rng.normal(size=(3, 5))),
        "sub": (lambda x: dc.sum_((m - x) ** 2), rng.normal(size=(4, 5))),
        "mul": (lambda x: dc.sum_(x * m * x), rng.normal(size=(4, 5))),
        "div": (lambda x: dc.sum_(m / x), rng.uniform(0.5, 2.0, size=(4, 5))),
        "neg": (lambda x: dc.sum_(-x * x), rng.normal(size=4)),
        "pow": (lambda x: dc.sum_(x ** 2.5), rng.uniform(0.5, 2.0, size=6)),
        "exp": (lambda x: dc.sum_(dc.exp(x)), rng.normal(size=6)),
        "log": (lambda x: dc.sum_(dc.log(x)), rng.uniform(0.5, 2.0, size=6)),
        "sqrt": (lambda x: dc.sum_(dc.sqrt(x)), rng.uniform(0.5, 2.0, size=6)),
        "abs": (lambda x: dc.sum_(dc.abs_(x) * np.arange(6.0)), rng.normal(size=6) + 0.1),
        "relu": (lambda x: dc.sum_(dc.relu(x) ** 2), rng.normal(size=6)),
        "mean": (lambda x: dc.mean(x, axis=1).sum() ** 2, rng.normal(size=(3, 4))),
        "reshape/transpose": (lambda x: dc.sum_(dc.transpose(dc.reshape(x, (2, 6)), (1, 0)) * np.arange(12.0).reshape(6, 2)),
                              rng.normal(size=(3, 4))),
        "concat": (lambda x: dc.sum_(dc.concat([x, x * 2.0], axis=1) ** 2), rng.normal(size=(2, 3))),
        "gather": (lambda x: dc.sum_(dc.gather(x, idx, axis=0) ** 2), rng.normal(size=(3, 4))),
        "scatter": (lambda x: dc.sum_(dc.scatter(x, [1], np.ones((3, 1)), axis=1) ** 2), rng.normal(size=(3, 4))),
        "matmul": (lambda x: dc.sum_(dc.matmul(x, m) ** 2), rng.normal(size=(3, 4))),
        "matmul_batched": (lambda x: dc.sum_(dc.matmul(other, x) ** 2), rng.normal(size=(2, 3, 2))),
        "softmax": (lambda x: dc.sum_(dc.softmax(x, axis=-1) * m[:3, :5]), rng.normal(size=(3, 5))),
        "logsumexp": (lambda x: dc.sum_(dc.logsumexp(x, axis=0) * np.arange(5.0)), rng.normal(size=(3, 5))),
        "layer_norm": (lambda x: dc.sum_(dc.layer_norm(x, m[0], m[1]) * m[2]), rng.normal(size=(3, 5))),
        "cosine": (lambda x: dc.sum_(dc.cosine_similarity(x, m) * np.arange(4.0)), rng.normal(size=(2, 5))),
        "norm": (lambda x: dc.norm(x, 2), rng.normal(size=(3, 3))),
        "conv2d": (lambda x: dc.sum_(dc.conv2d(x, w, b, padding=1) ** 2), rng.normal(size=(2, 5, 5))),
        "conv2d_stride": (lambda x: dc.sum_(dc.conv2d(x, w, b, stride=2, padding=1) ** 2), rng.normal(size=(2, 5, 5))),
        "max_pool2d": (lambda x: dc.sum_(dc.max_pool2d(x, 2) ** 2), rng.normal(size=(2, 4, 4))),
        "upsample": (lambda x: dc.sum_(dc.upsample_bilinear(x, 4) * np.arange(64.0).reshape(1, 8, 8)),
                     rng.normal(size=(1, 2, 2))),
    }


PRIMITIVES = list(_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients(name, seed):
    # setup
    f, x = _cases(np.random.default_rng(seed))[name]

    # check
    assert grad_check(f, x) < TOL


def test_scatter_gradient_flows_into_values():
    # setup
    x = np.random.default_rng(1).normal(size=(3, 4))

    def f(v):
        return dc.sum_(dc.scatter(DenseArray(x), [1, 3], v, axis=1) ** 3)

    # check
    assert grad_check(f, np.random.default_rng(2).normal(size=(3, 2))) < TOL


def test_backward_is_linear_in_output_scale():
    # setup
    x1 = DenseArray([1.0, -2.0, 3.0], requires_grad=True)
    x2 = DenseArray([1.0, -2.0, 3.0], requires_grad=True)

    # check
    dc.sum_(dc.exp(x1) * x1).backward()
    (3.0 * dc.sum_(dc.exp(x2) * x2)).backward()
    np.testing.assert_allclose(3.0 * x1.grad, x2.grad, rtol=1e-14)


def test_gradients_accumulate_over_backward_calls():
    # setup
    x = DenseArray([2.0, 3.0], requires_grad=True)

    # check
    dc.sum_(x * x).backward()
    dc.sum_(x * x).backward()
    np.testing.assert_allclose(x.grad, [8.0, 12.0])


def test_shared_subexpression_is_visited_once():
    # setup: y wird zweimal benutzt, Gradient muss trotzdem exakt stimmen
    x = DenseArray(1.5, requires_grad=True)
    y = x * x
    z = y * y + y

    # check
    z.backward()
    assert x.grad == pytest.approx(4 * 1.5 ** 3 + 2 * 1.5, rel=1e-14)


def test_backward_requires_scalar():
    x = DenseArray(np.ones(3), requires_grad=True)
    with pytest.raises(NonScalarOutput):
        (x * 2.0).backward()


def test_broadcast_shape_errors():
    with pytest.raises(ShapeMismatch):
        dc.add(np.ones((2, 3)), np.ones((4, 3)))
    with pytest.raises(ShapeMismatch):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_no_grad_builds_no_graph():
    # setup
    x = DenseArray([1.0, 2.0], requires_grad=True)

    # check
    with dc.no_grad():
        y = dc.sum_(x * x)
    assert not y.requires_grad
    assert y._parents == ()


def test_detach_blocks_gradient():
    # setup
    x = DenseArray([1.0, 2.0], requires_grad=True)

    # check
    dc.sum_(x * dc.detach(x)).backward()
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_attach_gradient_uses_prescribed_gradient():
    # setup
    x = DenseArray(np.zeros(3), requires_grad=True)
    node = dc.attach_gradient(x, 7.0, np.array([1.0, 2.0, 3.0]))

    # check
    assert node.item() == 7.0
    (2.0 * node).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_numpy_on_left_side_defers_to_dense_array():
    # setup
    x = DenseArray([1.0, 2.0], requires_grad=True)

    # check
    y = np.array([3.0, 4.0]) * x
    assert isinstance(y, DenseArray)
    dc.sum_(y).backward()
    np.testing.assert_allclose(x.grad, [3.0, 4.0])


def test_max_pool_tie_routes_gradient_to_first_entry():
    # setup
    x = DenseArray(np.ones((1, 2, 2)), requires_grad=True)

    # check
    dc.sum_(dc.max_pool2d(x, 2)).backward()
    np.testing.assert_allclose(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


def test_cosine_similarity_floor_keeps_zero_vectors_finite():
    # setup
    a = DenseArray(np.zeros((1, 3)), requires_grad=True)
    b = np.array([[1.0, 0.0, 0.0]])

    # check
    s = dc.cosine_similarity(a, b)
    assert s.item() == 0.0
    dc.sum_(s).backward()
    assert np.all(np.isfinite(a.grad))


def test_conv2d_matches_direct_sum():
    # setup
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 4, 4))
    w = rng.normal(size=(1, 2, 3, 3))

    # check: Ausgabe (0, 1, 2) direkt ausrechnen
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = (xp[:, 1:4, 2:5] * w[0]).sum()
    out = dc.conv2d(x, w, padding=1)
    assert out.shape == (1, 4, 4)
    assert out.data[0, 1, 2] == pytest.approx(expected, rel=1e-12)


def test_upsample_preserves_constant_map():
    out = dc.upsample_bilinear(np.full((2, 3, 3), 1.7), 4)
    assert out.shape == (2, 12, 12)
    np.testing.assert_allclose(out.data, 1.7, rtol=1e-14)
