import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbldm.nn import AdamW, Adan, RngStream, ShapeError, Tape, Tensor, grad_eval, sample_gaussian
from cbldm.nn import F
from cbldm.nn.layers import Conv1d, upsample1d

from conftest import numeric_grad, rel_error


def check_primitive(build, *arrays, tol=1e-5):
    """Compare tape gradients of sum(w * build(*xs)) against finite differences."""
    xs = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    out_shape = build(*xs).shape
    w = np.random.default_rng(7).standard_normal(out_shape)

    def scalar():
        return float(np.sum(w * build(*xs).data))

    with Tape() as tape:
        loss = F.tsum(F.mul(build(*xs), Tensor(w)))
    grads = tape.gradient(loss, xs)
    for x, g in zip(xs, grads):
        num = numeric_grad(scalar, x.data)
        assert rel_error(g, num) < tol


def test_square_derivative():
    x = Tensor(3.0, requires_grad=True)
    _, (g,) = grad_eval(lambda: x * x, [x])
    assert g == pytest.approx(6.0)


def test_constant_has_zero_gradient():
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(5.0, requires_grad=True)
    _, (gx, gy) = grad_eval(lambda: y * 1.0, [x, y])
    assert gx == 0.0
    assert gy == 1.0


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = x * 2.0
    with pytest.raises(ValueError):
        tape.gradient(y, [x])


def test_shape_error_names_operation():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match="add"):
        F.add(a, b)
    with pytest.raises(ShapeError, match="matmul"):
        F.matmul(a, b)


PRIMITIVES = {
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
    "div": (lambda a, b: a / (b * b + 1.0), [(2, 3), (2, 3)]),
    "pow": (lambda a: (a * a + 1.0) ** 1.5, [(5,)]),
    "exp": (lambda a: F.exp(a), [(4,)]),
    "log": (lambda a: F.log(a * a + 0.5), [(4,)]),
    "tanh": (lambda a: F.tanh(a), [(3, 3)]),
    "sigmoid": (lambda a: F.sigmoid(a), [(3, 3)]),
    "silu": (lambda a: F.silu(a), [(3, 3)]),
    "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)]),
    "affine": (lambda x, w, b: F.affine(x, w, b), [(3, 4), (4, 5), (5,)]),
    "sum_axis": (lambda a: F.tsum(a, axis=1), [(3, 4)]),
    "mean_keep": (lambda a: F.mean(a, axis=0, keepdims=True), [(3, 4)]),
    "reshape": (lambda a: a.reshape(6, 2) * a.reshape(6, 2), [(3, 4)]),
    "transpose": (lambda a: F.transpose(a, (1, 0, 2)), [(2, 3, 4)]),
    "slice": (lambda a: a[1:, ::2] * 3.0, [(3, 4)]),
    "concat": (lambda a, b: F.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "broadcast": (lambda a: F.broadcast_to(a, (3, 2, 4)), [(2, 1)]),
    "conv2d": (lambda x, w, b: F.conv2d(x, w, b, stride=1, padding=1), [(2, 3, 5, 5), (4, 3, 3, 3), (4,)]),
    "conv2d_stride": (lambda x, w: F.conv2d(x, w, stride=2, padding=1), [(1, 2, 6, 6), (3, 2, 3, 3)]),
    "conv2d_valid": (lambda x, w: F.conv2d(x, w, padding=0), [(2, 2, 5, 6), (3, 2, 2, 3)]),
    "conv2d_rect_pad": (lambda x, w: F.conv2d(x, w, stride=(1, 2), padding=(0, 2)), [(2, 3, 1, 9), (2, 3, 1, 5)]),
    "upsample2d": (lambda x: F.upsample2d(x, 2), [(1, 2, 3, 3)]),
    "clip_interior": (lambda a: F.clip(a * 0.1, -10, 10), [(4,)]),
    "abs_away_from_zero": (lambda a: F.absolute(a + 10.0), [(4,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_finite_differences(name):
    build, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    check_primitive(build, *[rng.standard_normal(s) for s in shapes])


def test_conv1d_and_upsample1d_gradients():
    rng = RngStream(3)
    conv = Conv1d(2, 3, 3, rng, stride=2, dtype=np.float64)
    x = np.random.default_rng(0).standard_normal((2, 2, 8))
    check_primitive(lambda a: upsample1d(conv(a), 2), x)


def test_two_layer_tanh_net_mse_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = Tensor(rng.standard_normal((8, 3)))
    Y = Tensor(rng.standard_normal((8, 2)))
    params = [Tensor(rng.standard_normal(s), requires_grad=True) for s in [(3, 5), (5,), (5, 2), (2,)]]

    def loss():
        w1, b1, w2, b2 = params
        h = F.tanh(F.affine(X, w1, b1))
        r = F.affine(h, w2, b2) - Y
        return F.mean(r * r)

    _, grads = grad_eval(loss, params)
    for p, g in zip(params, grads):
        num = numeric_grad(lambda: float(loss().data), p.data)
        assert rel_error(g, num) < 1e-5


def test_gradient_is_linear_in_losses():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    f1 = lambda: F.tsum(F.tanh(x))
    f2 = lambda: F.tsum(x * x * x)
    _, (g1,) = grad_eval(f1, [x])
    _, (g2,) = grad_eval(f2, [x])
    _, (g12,) = grad_eval(lambda: f1() + f2(), [x])
    np.testing.assert_allclose(g12, g1 + g2, rtol=1e-12, atol=1e-14)


def test_float32_scalars_do_not_upcast():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    assert (x * 2.0 + 1.0).dtype == np.float32


def test_adam_first_step_delta():
    p = Tensor(np.array([0.5]), requires_grad=True)
    opt = AdamW([p], lr=0.001, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
    opt.step([np.array([1.0])])
    assert p.data[0] - 0.5 == pytest.approx(-0.001, rel=1e-6)
    assert opt.step_count == 1


def test_adam_zero_gradient_is_fixed_point():
    p = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    for _ in range(5):
        opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [0.3, -1.2])


@pytest.mark.parametrize("cls", [AdamW, Adan])
def test_zero_learning_rate_is_identity(cls):
    p = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    opt = cls([p], lr=0.0, weight_decay=0.1)
    for g in ([1.0, 2.0], [-3.0, 0.5]):
        opt.step([np.array(g)])
    np.testing.assert_array_equal(p.data, [0.3, -1.2])


def test_weight_decay_is_decoupled():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step([np.array([0.0])])
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_non_finite_gradient_aborts():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(FloatingPointError):
        AdamW([p]).step([np.array([np.nan])])


def _train_once(seed):
    rng = RngStream(seed)
    w = Tensor(sample_gaussian(rng, (3, 2)).data, requires_grad=True)
    X = sample_gaussian(rng, (16, 3))
    opt = AdamW([w], lr=0.01)
    for _ in range(20):
        _, grads = grad_eval(lambda: F.mean(F.tanh(X @ w) ** 2), [w])
        opt.step(grads)
    return w.data.copy()


def test_optimizer_runs_bitwise_deterministic():
    assert np.array_equal(_train_once(5), _train_once(5))


def test_gaussian_moments():
    x = sample_gaussian(RngStream(42), (100_000,)).data
    assert abs(x.mean()) < 0.02
    assert 0.98 <= x.var() <= 1.02


def test_gaussian_determinism_and_counter():
    a = sample_gaussian(RngStream(9, counter=4), (5, 5)).data
    b = sample_gaussian(RngStream(9, counter=4), (5, 5)).data
    c = sample_gaussian(RngStream(9, counter=5), (5, 5)).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stream_counter_advances():
    s = RngStream(1)
    sample_gaussian(s, (3,))
    assert s.counter == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_same_seed_counter_same_draws(seed, counter):
    a = sample_gaussian(RngStream(seed, counter), (4,)).data
    b = sample_gaussian(RngStream(seed, counter), (4,)).data
    assert np.array_equal(a, b)


def test_child_streams_differ():
    s = RngStream(3)
    a = sample_gaussian(s.child("prior"), (6,)).data
    b = sample_gaussian(s.child("chain"), (6,)).data
    assert not np.array_equal(a, b)
