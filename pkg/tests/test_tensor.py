import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from depthformer import tensor as T
from depthformer.gradcheck import check_gradients, finite_diff_check
from depthformer.tensor import Function, Parameter, Tensor, grad, no_grad

from oracles import bilinear_point


def test_matmul_examples():
    b = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(T.matmul(np.eye(3), b).data, b)
    out = T.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0, 6], [7, 8]]))
    assert np.array_equal(out.data, [[19, 22], [43, 50]])
    assert np.array_equal(T.matmul(np.zeros((2, 2)), b[:2]).data, np.zeros((2, 2)))


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\) @ \(2, 2\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_softmax_examples():
    assert np.allclose(T.softmax(np.zeros(3)).data, 1 / 3, rtol=0, atol=1e-15)
    got = T.softmax(np.array([1.0, 2.0, 3.0])).data
    assert np.allclose(got, [0.09003057, 0.24472847, 0.66524096], atol=5e-9)


@given(st.floats(-50, 50), st.floats(-5, 5))
def test_softmax_shift_invariance(x, c):
    base = T.softmax(np.array([0.0, c, 2 * c])).data
    shifted = T.softmax(np.array([x, x + c, x + 2 * c])).data
    assert np.allclose(base, shifted, rtol=0, atol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    x = rng.normal(0, 10, (50, 7))
    s = T.softmax(x, axis=-1).data
    assert np.max(np.abs(s.sum(-1) - 1)) <= 1e-12


def test_layer_norm_examples():
    ones, zeros = np.ones(3), np.zeros(3)
    assert np.array_equal(T.layer_norm(np.full((2, 3), 4.0), ones, zeros).data, np.zeros((2, 3)))
    b = np.array([0.5, -1.0, 2.0])
    assert np.array_equal(T.layer_norm(np.array([[1.0, 5, -3]]), zeros, b).data, b[None])
    got = T.layer_norm(np.array([1.0, 2.0, 3.0]), ones, zeros).data
    assert np.allclose(got, [-1.22474, 0, 1.22474], atol=1e-5)
    # eps-perturbed: slightly inside sqrt(3/2)
    assert got[2] < np.sqrt(1.5)


def test_conv2d_examples(rng):
    x = rng.normal(size=(1, 5, 6))
    assert np.array_equal(T.conv2d(x, np.ones((1, 1, 1, 1))).data, x)
    delta = np.zeros((1, 1, 3, 3))
    delta[0, 0, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(x, delta, pad=1).data, x)
    out = T.conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)), stride=2)
    assert np.array_equal(out.data, np.full((1, 2, 2), 4.0))


def test_conv2d_multichannel_delta_is_identity(rng):
    x = rng.normal(size=(3, 4, 5))
    k = np.zeros((3, 3, 3, 3))
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    assert np.array_equal(T.conv2d(x, k, pad=1).data, x)


def test_conv2d_rejects_oversized_kernel():
    with pytest.raises(ValueError):
        T.conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)))


def test_bilinear_examples(rng):
    fmap = rng.normal(size=(2, 3, 4))
    pts = np.array([[1.0, 2.0], [3.0, 0.0], [0.0, 0.0]])
    out = T.bilinear_sample(fmap, pts).data
    for p, (x, y) in enumerate(pts.astype(int)):
        assert np.array_equal(out[:, p], fmap[:, y, x])
    centre = T.bilinear_sample(fmap, np.array([[1.5, 0.5]])).data[:, 0]
    assert np.allclose(centre, fmap[:, 0:2, 1:3].mean(axis=(1, 2)), rtol=0, atol=1e-15)
    assert np.array_equal(T.bilinear_sample(fmap, np.array([[-5.0, -5.0]])).data, np.zeros((2, 1)))


@given(st.lists(st.tuples(st.floats(-2, 5), st.floats(-2, 4)), min_size=1, max_size=6))
def test_bilinear_matches_scalar_oracle(points):
    fmap = np.random.default_rng(3).normal(size=(2, 3, 4))
    pts = np.array(points)
    out = T.bilinear_sample(fmap, pts).data
    for p, (x, y) in enumerate(points):
        for c in range(2):
            assert abs(out[c, p] - bilinear_point(fmap[c], x, y)) <= 1e-12


def test_backprop_examples():
    x = Parameter([3.0])
    (g,) = grad(x * 1.0, [x])
    assert np.array_equal(g, [1.0])
    x = Parameter([1.0, 2.0, 3.0])
    (g,) = grad((x * x).sum(), [x])
    assert np.array_equal(g, [2.0, 4.0, 6.0])


def test_fan_out_accumulates(rng):
    x = Parameter(rng.normal(size=(3, 4)))
    f = lambda: (T.sigmoid(x) * x).sum()  # noqa: E731
    (single,) = grad(f(), [x])
    (double,) = grad(f() + f(), [x])
    assert np.allclose(double, 2 * single, rtol=0, atol=1e-15)


def test_unreachable_input_gets_zeros():
    a, b = Parameter([1.0, 2.0]), Parameter([3.0])
    ga, gb = grad((a * 2.0).sum(), [a, b])
    assert np.array_equal(gb, [0.0])
    assert np.array_equal(ga, [2.0, 2.0])


def test_backward_accumulates_into_grad():
    x = Parameter([1.0, -2.0])
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert np.array_equal(x.grad, [4.0, -8.0])


def test_no_grad_records_nothing():
    x = Parameter([1.0])
    with no_grad():
        y = x * 2.0
    assert y._fn is None and not y.requires_grad


def test_finite_diff_examples(rng):
    rep = finite_diff_check(lambda t: t.sum(), Tensor(rng.normal(size=(4, 3))))
    assert rep.passed and rep.max_error < 1e-9
    target = np.array([0.0, 1.0, 0.0])

    def xent(z):
        return -(T.log(T.softmax(z)) * target).sum()

    rep = finite_diff_check(xent, Tensor(rng.normal(size=3)))
    assert rep.max_error < 1e-6


class _SignBug(Function):
    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, g):
        return (-2.0 * self.a * g,)


def test_finite_diff_detects_sign_bug(rng):
    rep = finite_diff_check(lambda t: _SignBug.apply(t).sum(), Tensor(rng.normal(size=4) + 3.0))
    assert not rep.passed


OPS = {
    "exp": lambda x: T.exp(x * 0.3),
    "log": lambda x: T.log(x * x + 1.0),
    "sqrt": lambda x: T.sqrt(x * x + 0.5),
    "div": lambda x: x / (x * x + 2.0),
    "rdiv": lambda x: 1.0 / (x * x + 2.0),
    "sigmoid": T.sigmoid,
    "gelu": T.gelu,
    "relu": lambda x: T.relu(x + 0.01),
    "leaky_relu": lambda x: T.leaky_relu(x + 0.01, 0.2),
    "softmax": lambda x: T.softmax(x, axis=-1),
    "transpose": lambda x: x.transpose(1, 0) * np.arange(x.shape[0]),
    "getitem_basic": lambda x: x[1:, ::2],
    "getitem_fancy": lambda x: x[np.array([0, 0, 2])],
    "roll": lambda x: T.roll(x, (1, -1), (0, 1)) * np.arange(x.shape[1]),
    "concat": lambda x: T.concat([x, x * 2.0], axis=1),
    "mean": lambda x: x.mean(axis=0),
}


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_elementwise_and_shape_ops_gradcheck(name, seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.normal(size=(3, 4)))
    probe = None

    def f(t):
        nonlocal probe
        out = OPS[name](t)
        if probe is None:
            probe = r.normal(size=out.shape)
        return (out * probe).sum()

    rep = finite_diff_check(f, x)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_norm_conv_matmul_gradcheck(seed):
    r = np.random.default_rng(seed)
    params = {
        "x": Parameter(r.normal(size=(2, 5, 4))),
        "g": Parameter(r.normal(size=4)),
        "b": Parameter(r.normal(size=4)),
        "k": Parameter(r.normal(size=(3, 2, 3, 3))),
        "kb": Parameter(r.normal(size=3)),
        "w": Parameter(r.normal(size=(4, 3))),
    }
    probe = r.normal(size=(3, 3, 3))

    def f():
        p = params
        ln = T.layer_norm(p["x"], p["g"], p["b"])
        conv = T.conv2d(ln, p["k"], p["kb"], stride=2, pad=1)  # 3×3×2
        up = T.upsample_nearest2x(conv)  # 3×6×4
        return (T.matmul(up, p["w"])[:, :3] * probe).sum()

    rep = check_gradients(f, params)
    assert rep.passed, str(rep)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_bilinear_and_resize_gradcheck(seed):
    r = np.random.default_rng(seed)
    fmap = Parameter(r.normal(size=(2, 3, 4, 5)))
    pts = Parameter(r.uniform(-1.3, 4.7, size=(2, 6, 2)))
    probe = r.normal(size=(2, 3, 6))
    small = Parameter(r.normal(size=(3, 2, 3)))
    probe2 = r.normal(size=(3, 5, 7))

    def f():
        return (T.bilinear_sample(fmap, pts) * probe).sum() + (T.resize_bilinear(small, (5, 7)) * probe2).sum()

    rep = check_gradients(f, {"map": fmap, "points": pts, "small": small})
    assert rep.passed, str(rep)


def test_resize_matrix_rows_sum_to_one():
    for n_in, n_out in [(2, 4), (3, 7), (5, 5), (1, 3)]:
        assert np.allclose(T.resize_matrix(n_in, n_out).sum(1), 1.0, rtol=0, atol=1e-15)
